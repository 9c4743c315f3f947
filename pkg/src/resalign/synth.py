"""Band-limited analytic scenes with exact sub-pixel ground truth.

A scene is a sum of 2-D sinusoids per channel, so it can be evaluated at any
continuous coordinate and shifted copies need no resampling.
"""

import configparser
from dataclasses import dataclass, field

import numpy as np

from .validation import constant_flow

NYQUIST = 0.5


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    freq_x: float
    freq_y: float
    phase: float = 0.0

    def __post_init__(self):
        if abs(self.freq_x) >= NYQUIST or abs(self.freq_y) >= NYQUIST:
            raise ValueError(
                f"frequency ({self.freq_x}, {self.freq_y}) is not below Nyquist"
            )


@dataclass
class AnalyticImage:
    """Per-channel sums of sinusoids plus an optional smooth random field.

    The random field is ``noise_terms`` extra sinusoids per channel with
    seeded frequencies inside the disc of radius ``noise_cutoff`` and total
    RMS amplitude ``noise_amplitude``; it is part of :attr:`components`.
    """

    channels: list
    offset: float = 0.0
    noise_amplitude: float = 0.0
    noise_cutoff: float = 0.25
    noise_terms: int = 0
    seed: int = 0
    components: list = field(init=False, repr=False)

    def __post_init__(self):
        if not self.channels:
            raise ValueError("a scene needs at least one channel")
        if not 0.0 < self.noise_cutoff < NYQUIST:
            raise ValueError("noise_cutoff must lie in (0, 0.5)")
        rng = np.random.default_rng([self.seed, 1])
        self.components = []
        for comps in self.channels:
            comps = list(comps)
            if self.noise_terms > 0 and self.noise_amplitude > 0:
                amp = self.noise_amplitude * np.sqrt(2.0 / self.noise_terms)
                radius = self.noise_cutoff * np.sqrt(rng.uniform(size=self.noise_terms))
                angle = rng.uniform(0, 2 * np.pi, size=self.noise_terms)
                phase = rng.uniform(0, 2 * np.pi, size=self.noise_terms)
                comps += [
                    Sinusoid(amp, r * np.cos(t), r * np.sin(t), p)
                    for r, t, p in zip(radius, angle, phase)
                ]
            self.components.append(comps)

    @property
    def n_channels(self):
        return len(self.channels)

    @classmethod
    def replicated(cls, components, n_channels, seed=0, **kwargs):
        """One component list for every channel; a component phase of ``None`` is drawn per channel."""
        rng = np.random.default_rng([seed, 0])
        channels = []
        for _ in range(n_channels):
            chan = []
            for amp, fx, fy, phase in components:
                if phase is None:
                    phase = rng.uniform(0, 2 * np.pi)
                chan.append(Sinusoid(amp, fx, fy, phase))
            channels.append(chan)
        return cls(channels, seed=seed, **kwargs)


def evaluate(image, a, b):
    """Exact float64 scene values at continuous coordinates ``(a, b)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.full(a.shape + (image.n_channels,), image.offset, dtype=np.float64)
    for c, comps in enumerate(image.components):
        for s in comps:
            out[..., c] += s.amplitude * np.sin(2 * np.pi * (s.freq_x * a + s.freq_y * b) + s.phase)
    return out


def render(image, height, width, shift=(0.0, 0.0), origin=(0.0, 0.0)):
    """``grid[y, x] = scene(x + shift_x, y + shift_y)`` as float32."""
    if not np.all(np.isfinite(shift)):
        raise ValueError("shift must be finite")
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    a = xs + shift[0] + origin[0]
    b = ys + shift[1] + origin[1]
    return evaluate(image, a, b).astype(np.float32)


def pair_origin(seed):
    """Scene origin for a pair: zero without a seed, otherwise seeded in [0, 1000)."""
    if seed is None:
        return (0.0, 0.0)
    rng = np.random.default_rng([seed, 2])
    return tuple(rng.uniform(0.0, 1000.0, size=2))


def make_pair(image, height, width, shift, seed=None):
    """An alignment instance with exact ground truth.

    Returns ``(current, reference, flow, target)`` where backward warping
    ``reference`` by the constant ``flow`` reproduces ``current`` in the
    continuum and ``target`` is ``current``. ``seed`` picks the scene origin
    (see :func:`pair_origin`), giving distinct crops of the same scene.
    """
    if max(abs(shift[0]), abs(shift[1])) >= min(height, width) / 4:
        raise ValueError(f"shift {shift} too large for a {height}x{width} grid")
    origin = pair_origin(seed)
    reference = render(image, height, width, (0.0, 0.0), origin)
    current = render(image, height, width, shift, origin)
    flow = constant_flow(height, width, shift[0], shift[1])
    return current, reference, flow, current.copy()


def scene_from_section(section):
    """Build a scene from a ``key = value`` mapping.

    Keys: ``channels``, ``offset``, ``seed``, ``noise_amplitude``,
    ``noise_cutoff``, ``noise_terms`` and any number of ``component*`` lines
    of the form ``amplitude freq_x freq_y phase`` where phase may be
    ``random``.
    """
    components = []
    for key in sorted(k for k in section if k.startswith("component")):
        fields = section[key].replace(",", " ").split()
        if len(fields) != 4:
            raise ValueError(f"{key}: expected 'amplitude freq_x freq_y phase'")
        amp, fx, fy = (float(f) for f in fields[:3])
        phase = None if fields[3] == "random" else float(fields[3])
        components.append((amp, fx, fy, phase))
    return AnalyticImage.replicated(
        components,
        int(section.get("channels", 1)),
        seed=int(section.get("seed", 0)),
        offset=float(section.get("offset", 0.0)),
        noise_amplitude=float(section.get("noise_amplitude", 0.0)),
        noise_cutoff=float(section.get("noise_cutoff", 0.25)),
        noise_terms=int(section.get("noise_terms", 0)),
    )


def load_scene(path):
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    if "scene" not in parser:
        raise ValueError(f"{path}: missing [scene] section")
    return scene_from_section(parser["scene"])
