"""Classical sub-pixel resampling and backward warping.

Coordinates are continuous ``(a, b)`` = (column, row) positions with integer
values sitting exactly on lattice samples. Out-of-range lookups clamp to the
nearest valid index.
"""

import enum

import numpy as np

from .validation import check_flow, check_grid

BICUBIC_A = -0.5


class ResampleMethod(str, enum.Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"
    BICUBIC = "bicubic"


class BoundaryPolicy(str, enum.Enum):
    CLAMP_TO_EDGE = "clamp"


def _as_method(method):
    try:
        return ResampleMethod(method)
    except ValueError:
        raise ValueError(f"unknown resampling method {method!r}") from None


def _as_boundary(boundary):
    try:
        return BoundaryPolicy(boundary)
    except ValueError:
        raise ValueError(f"unknown boundary policy {boundary!r}") from None


def keys_kernel(s, a=BICUBIC_A):
    """Keys cubic convolution kernel evaluated at offsets ``s``."""
    s = np.abs(np.asarray(s, dtype=np.float64))
    s2 = s * s
    s3 = s2 * s
    near = (a + 2.0) * s3 - (a + 3.0) * s2 + 1.0
    far = a * s3 - 5.0 * a * s2 + 8.0 * a * s - 4.0 * a
    return np.where(s <= 1.0, near, np.where(s < 2.0, far, 0.0))


def _gather(grid, xi, yi):
    h, w, _ = grid.shape
    return grid[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]


def resample(grid, a, b, method="bilinear", boundary="clamp"):
    """Sample ``grid`` at arrays of continuous coordinates.

    Parameters
    ----------
    grid : array of shape (H, W, C)
    a, b : arrays of equal shape
        Column and row coordinates.
    method : {"nearest", "bilinear", "bicubic"}

    Returns
    -------
    ndarray of shape ``a.shape + (C,)``, float64.
    """
    method = _as_method(method)
    _as_boundary(boundary)
    grid = np.asarray(grid, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("sampling coordinates must be finite")

    if method is ResampleMethod.NEAREST:
        # round-half-up per axis
        xi = np.floor(a + 0.5).astype(np.int64)
        yi = np.floor(b + 0.5).astype(np.int64)
        return _gather(grid, xi, yi)

    x0 = np.floor(a).astype(np.int64)
    y0 = np.floor(b).astype(np.int64)
    tx = (a - x0)[..., None]
    ty = (b - y0)[..., None]

    if method is ResampleMethod.BILINEAR:
        return (
            (1.0 - tx) * (1.0 - ty) * _gather(grid, x0, y0)
            + tx * (1.0 - ty) * _gather(grid, x0 + 1, y0)
            + (1.0 - tx) * ty * _gather(grid, x0, y0 + 1)
            + tx * ty * _gather(grid, x0 + 1, y0 + 1)
        )

    out = 0.0
    for j in range(-1, 3):
        wy = keys_kernel(ty - j)
        row = 0.0
        for i in range(-1, 3):
            row = row + keys_kernel(tx - i) * _gather(grid, x0 + i, y0 + j)
        out = out + wy * row
    return out


def sample_nearest(grid, coord, boundary="clamp"):
    """Value at the lattice point nearest to ``coord = (a, b)``."""
    grid = check_grid(grid)
    return resample(grid, coord[0], coord[1], "nearest", boundary).astype(np.float32)


def sample_bilinear(grid, coord, boundary="clamp"):
    """Weighted sum of the 4 lattice neighbours around ``coord``."""
    grid = check_grid(grid)
    return resample(grid, coord[0], coord[1], "bilinear", boundary).astype(np.float32)


def sample_bicubic(grid, coord, boundary="clamp"):
    """Keys cubic convolution (a = -0.5) over the 4x4 neighbourhood."""
    grid = check_grid(grid)
    return resample(grid, coord[0], coord[1], "bicubic", boundary).astype(np.float32)


def backward_warp(reference, flow, method="bilinear", boundary="clamp"):
    """Align ``reference`` to the current frame: ``out[y, x] = ref(x + dx, y + dy)``."""
    reference = check_grid(reference, "reference")
    flow = check_flow(flow, reference.shape)
    h, w, _ = reference.shape
    ys, xs = np.mgrid[0:h, 0:w]
    a = xs + flow[..., 0].astype(np.float64)
    b = ys + flow[..., 1].astype(np.float64)
    return resample(reference, a, b, method, boundary).astype(np.float32)
