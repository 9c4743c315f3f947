"""Input validation helpers shared by the estimators and free functions.

Grids are ``(H, W, C)`` arrays indexed ``[y, x, c]``; flow fields are
``(H, W, 2)`` arrays holding ``(dx, dy)`` per pixel, with ``x`` the column.
"""

import numpy as np


def check_grid(grid, name="grid", dtype=np.float32, allow_2d=True):
    """Return ``grid`` as a finite 3-D array, adding a channel axis if needed."""
    arr = np.asarray(grid)
    if arr.ndim == 2 and allow_2d:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (H, W, C), got {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty axis: {arr.shape}")
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_flow(flow, shape=None, name="flow"):
    """Return ``flow`` as a finite ``(H, W, 2)`` float32 array.

    ``shape`` is an optional ``(H, W)`` the flow must match.
    """
    arr = np.asarray(flow, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"{name} must have shape (H, W, 2), got {arr.shape}")
    if shape is not None and tuple(arr.shape[:2]) != tuple(shape[:2]):
        raise ValueError(
            f"{name} spatial shape {arr.shape[:2]} does not match grid {tuple(shape[:2])}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {names[0]} {np.shape(a)} vs {names[1]} {np.shape(b)}")


def constant_flow(height, width, dx, dy):
    """A flow field with the same displacement at every pixel."""
    flow = np.empty((height, width, 2), dtype=np.float32)
    flow[..., 0] = dx
    flow[..., 1] = dy
    return flow


def check_instances(X, y=None):
    """Validate a sequence of ``(current, reference, flow)`` alignment inputs.

    Returns a list of validated triples and, if given, a list of targets
    matching each current frame.
    """
    if isinstance(X, tuple) and len(X) == 3 and np.ndim(X[0]) >= 2:
        raise TypeError("X must be a sequence of (current, reference, flow) triples")
    out = []
    for i, item in enumerate(X):
        if len(item) != 3:
            raise ValueError(f"instance {i} must be (current, reference, flow)")
        current = check_grid(item[0], f"current[{i}]")
        reference = check_grid(item[1], f"reference[{i}]")
        check_same_shape(current, reference, ("current", "reference"))
        flow = check_flow(item[2], current.shape, f"flow[{i}]")
        out.append((current, reference, flow))
    if not out:
        raise ValueError("X is empty")
    if y is None:
        return out
    targets = [check_grid(t, f"y[{i}]") for i, t in enumerate(y)]
    if len(targets) != len(out):
        raise ValueError(f"{len(out)} instances but {len(targets)} targets")
    for (current, _, _), target in zip(out, targets):
        check_same_shape(current, target, ("current", "target"))
    return out, targets
