"""Sinusoidal positional encoding and motion-offset decomposition."""

from dataclasses import dataclass

import numpy as np

DEFAULT_PERIOD = 0.01


@dataclass(frozen=True)
class EncodingConfig:
    """Frequency bands of the 2-D positional encoding.

    Angular speeds form a geometric progression from ``2*pi`` to ``100*pi``
    over ``n_bands`` bands. ``period`` is kept for reference only; it does
    not enter the speeds.
    """

    n_bands: int
    period: float = DEFAULT_PERIOD

    def __post_init__(self):
        if self.n_bands < 1:
            raise ValueError("n_bands must be >= 1")

    @property
    def speeds(self):
        if self.n_bands == 1:
            return np.array([2 * np.pi])
        k = np.arange(self.n_bands, dtype=np.float64)
        return 2 * np.pi * 50.0 ** (k / (self.n_bands - 1))

    @property
    def dim(self):
        return 4 * self.n_bands


def positional_encoding(p, config):
    """Encode 2-D positions into ``4 * n_bands`` sinusoidal features.

    ``p`` has shape ``(..., 2)``. Each band contributes
    ``[sin(w px), sin(w py), cos(w px), cos(w py)]``, so every output has
    squared norm ``2 * n_bands``.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 2:
        raise ValueError(f"positions must have a trailing axis of 2, got {p.shape}")
    phase = p[..., None, :] * config.speeds[:, None]  # (..., D, 2)
    enc = np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)  # (..., D, 4)
    return enc.reshape(p.shape[:-1] + (config.dim,))


@dataclass(frozen=True)
class OffsetParts:
    integer: np.ndarray  # int64, (..., 2)
    decimal: np.ndarray  # float, (..., 2), each in [0, 1)


def decompose_offset(delta):
    """Split displacements into ``floor`` anchors and residues in ``[0, 1)``.

    The residue is computed in float64, which makes ``z + d == delta`` exact
    for float32 displacements (the flow storage type).
    """
    delta = np.asarray(delta, dtype=np.float64)
    z = np.floor(delta)
    d = delta - z
    # a negative displacement smaller than the float64 ulp of 1 rounds to d == 1
    bump = d >= 1.0
    if np.any(bump):
        z = np.where(bump, z + 1.0, z)
        d = np.where(bump, 0.0, d)
    return OffsetParts(z.astype(np.int64), d)


def encode_feature(x, p, config):
    """Additive fusion ``x + gamma(p)``; ``x`` must have ``4 * n_bands`` channels."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != config.dim:
        raise ValueError(
            f"feature dim {x.shape[-1]} does not match encoding dim {config.dim}"
        )
    return x + positional_encoding(p, config)
