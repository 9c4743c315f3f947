"""Analytic gradients, Adam and a training loop for the alignment encoders.

Positional encodings and flows are constants here: gradients only reach the
six encoder parameter tensors.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .implicit_align import (
    PARAM_NAMES,
    NumericalError,
    attention_forward,
    prepare_inputs,
)
from .validation import check_grid, check_same_shape

MIN_LR = 1e-7


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite; carries the trace so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def l2_loss(aligned, target):
    """Mean squared difference over all elements."""
    aligned = np.asarray(aligned, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    check_same_shape(aligned, target, ("aligned", "target"))
    return float(np.mean((aligned - target) ** 2))


@dataclass
class PreparedBatch:
    """Weight-independent encoder inputs for one or more instances, stacked."""

    query_in: np.ndarray
    window_in: np.ndarray
    target: np.ndarray  # (N, C)


def prepare_batch(instances, model):
    """Stack ``(current, reference, flow, target)`` instances into one batch."""
    queries, windows, targets = [], [], []
    for current, reference, flow, target in instances:
        query_in, window_in, shape = prepare_inputs(current, reference, flow, model)
        target = check_grid(target, "target", dtype=np.float64)
        if target.shape != shape:
            raise ValueError(f"target {target.shape} does not match grid {shape}")
        queries.append(query_in)
        windows.append(window_in)
        targets.append(target.reshape(-1, shape[2]))
    if not queries:
        raise ValueError("at least one instance is required")
    return PreparedBatch(np.concatenate(queries), np.concatenate(windows), np.concatenate(targets))


def batch_loss(batch, model):
    """Mean squared error with exactly rounded summation.

    Central differences subtract two nearly equal losses; pairwise summation
    error alone would swamp gradients that are zero by symmetry (``b_k``).
    """
    cache = attention_forward(batch.query_in, batch.window_in, model)
    resid = cache.output - batch.target
    return math.fsum((resid * resid).ravel()) / resid.size


def batch_backward(batch, model):
    """Loss and exact gradients for a prepared batch.

    Reverse mode through: output = attention @ V; attention = softmax(Q K^T /
    sqrt(dh)); Q, K, V = affine maps of the encoded inputs.
    """
    cache = attention_forward(batch.query_in, batch.window_in, model)
    n, c = cache.output.shape
    heads, dh = model.heads, model.head_dim
    resid = cache.output - batch.target
    loss = float(np.mean(resid**2))

    d_out = (2.0 / resid.size) * resid.reshape(n, heads, dh)
    attn = cache.attention
    v_t = cache.v.transpose(0, 2, 1, 3)  # (N, h, S, dh)
    k_t = cache.k.transpose(0, 2, 1, 3)
    d_attn = (v_t @ d_out[..., None])[..., 0]  # (N, h, S)
    d_logits = attn * (d_attn - np.sum(attn * d_attn, axis=-1, keepdims=True))
    d_logits *= 1.0 / math.sqrt(dh)
    d_q = (d_logits[:, :, None, :] @ k_t)[:, :, 0, :].reshape(n, c)
    # (N, h, S, 1) * (N, h, 1, dh) -> (N, S, h, dh)
    d_k = (d_logits[..., None] * cache.q[:, :, None, :]).transpose(0, 2, 1, 3).reshape(-1, c)
    d_v = (attn[..., None] * d_out[:, :, None, :]).transpose(0, 2, 1, 3).reshape(-1, c)
    window_flat = batch.window_in.reshape(-1, c)

    grads = {
        "W_q": d_q.T @ batch.query_in,
        "b_q": d_q.sum(axis=0),
        "W_k": d_k.T @ window_flat,
        "b_k": d_k.sum(axis=0),
        "W_v": d_v.T @ window_flat,
        "b_v": d_v.sum(axis=0),
    }
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    return loss, grads


def backward(current, reference, flow, target, model):
    """Loss and gradients with respect to all six parameter tensors."""
    return batch_backward(prepare_batch([(current, reference, flow, target)], model), model)


def grad_check(model, instance, eps=1e-4, n_coords=256, seed=0):
    """Largest relative error between analytic and central-difference gradients.

    All coordinates are checked when the model has at most ``n_coords``
    parameters; otherwise a seeded subset of ``n_coords`` is used.
    """
    if not 1e-6 <= eps <= 1e-2:
        raise ValueError("eps must lie in [1e-6, 1e-2]")
    batch = prepare_batch([instance], model)
    _, grads = batch_backward(batch, model)

    sizes = [getattr(model, name).size for name in PARAM_NAMES]
    total = sum(sizes)
    if total <= n_coords:
        picks = np.arange(total)
    else:
        picks = np.sort(np.random.default_rng(seed).choice(total, n_coords, replace=False))
    bounds = np.cumsum([0] + sizes)

    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(bounds, flat, side="right") - 1)
        name, idx = PARAM_NAMES[k], int(flat - bounds[k])
        params = {n: p.copy() for n, p in model.params.items()}
        base = params[name].flat[idx]
        params[name].flat[idx] = base + eps
        up = batch_loss(batch, model.with_params(params))
        params[name].flat[idx] = base - eps
        down = batch_loss(batch, model.with_params(params))
        numeric = (up - down) / (2 * eps)
        analytic = grads[name].flat[idx]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params, grads, state):
    """One bias-corrected Adam step on a dict of arrays; returns new arrays."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out


def adam_step(model, grads, state):
    new_params = adam_update(model.params, grads, state)
    return model.with_params(new_params), state


def cosine_lr(base_lr, it, iterations, min_lr=MIN_LR):
    if iterations <= 1:
        return base_lr
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * it / (iterations - 1)))


def fit(model, dataset, iterations, lr=1e-2, seed=0, schedule="constant", batch_size=None):
    """Train the encoders by Adam on the mean L2 alignment loss.

    Parameters
    ----------
    dataset : sequence of (current, reference, flow, target)
    batch_size : int, optional
        Instances per step. ``None`` uses the full dataset every step;
        otherwise minibatches follow a seeded permutation per epoch.

    Returns
    -------
    model : AlignModel
    trace : list of float
        Loss before each update.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if schedule not in ("constant", "cosine"):
        raise ValueError(f"unknown schedule {schedule!r}")
    dataset = list(dataset)
    if not dataset:
        raise ValueError("at least one instance is required")

    if batch_size is None or batch_size >= len(dataset):
        batches = [prepare_batch(dataset, model)]
        order = None
    else:
        batches = [prepare_batch([inst], model) for inst in dataset]
        rng = np.random.default_rng(seed)
        order = []

    state = AdamState(lr=lr)
    trace = []
    for it in range(iterations):
        if order is None:
            batch = batches[0]
        else:
            if len(order) < batch_size:
                order.extend(rng.permutation(len(dataset)).tolist())
            picked, order[:] = order[:batch_size], order[batch_size:]
            batch = PreparedBatch(
                np.concatenate([batches[i].query_in for i in picked]),
                np.concatenate([batches[i].window_in for i in picked]),
                np.concatenate([batches[i].target for i in picked]),
            )
        try:
            loss, grads = batch_backward(batch, model)
        except NumericalError as exc:
            raise TrainingDiverged(str(exc), trace) from exc
        if not math.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at iteration {it}", trace)
        trace.append(loss)
        if schedule == "cosine":
            state.lr = cosine_lr(lr, it, iterations)
        model, state = adam_step(model, grads, state)
    return model, trace
