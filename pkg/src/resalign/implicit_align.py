"""Implicit resampling-based alignment.

Each current-frame pixel ``[x, y]`` with displacement ``delta`` is aligned by
cross-attention between

* a query built from the current feature plus an encoding of the decimal
  offset ``d / (2w)``, and
* keys/values built from a ``w x w`` reference window anchored at
  ``[x + z_x, y + z_y]`` plus an encoding of each window index ``[i, j] / w``,

where ``delta = z + d`` with ``z = floor(delta)``. The query, key and value
encoders are single linear layers.
"""

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .grid_io import FormatError
from .encoding import EncodingConfig, decompose_offset, positional_encoding
from .validation import check_flow, check_grid

MODEL_MAGIC = b"IAV1"
PARAM_NAMES = ("W_q", "b_q", "W_k", "b_k", "W_v", "b_v")


class NumericalError(ArithmeticError):
    """A non-finite value appeared in the forward or backward pass."""


def window_offsets(window):
    """Window index range ``-floor(w/2) .. w - floor(w/2) - 1``."""
    half = window // 2
    return np.arange(-half, window - half)


@dataclass
class AlignModel:
    """Parameters and configuration of the alignment operator.

    Linear layers act on row vectors as ``y = x @ W.T + b``. Parameters are
    held in float64; the on-disk format stores float32.
    """

    W_q: np.ndarray
    b_q: np.ndarray
    W_k: np.ndarray
    b_k: np.ndarray
    W_v: np.ndarray
    b_v: np.ndarray
    heads: int = 1
    window: int = 2
    pe_decimal: bool = True
    pe_window: bool = True
    encoding: EncodingConfig = field(init=False)

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        c = self.channels
        for name in ("W_q", "W_k", "W_v"):
            if getattr(self, name).shape != (c, c):
                raise ValueError(f"{name} must be {c}x{c}")
        for name in ("b_q", "b_k", "b_v"):
            if getattr(self, name).shape != (c,):
                raise ValueError(f"{name} must have length {c}")
        if c % 4:
            raise ValueError(f"channels ({c}) must be divisible by 4")
        if self.heads < 1 or c % self.heads:
            raise ValueError(f"channels ({c}) must be divisible by heads ({self.heads})")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not all(np.all(np.isfinite(getattr(self, n))) for n in PARAM_NAMES):
            raise ValueError("model parameters must be finite")
        self.encoding = EncodingConfig(c // 4)

    @classmethod
    def initialize(cls, channels, window=2, heads=1, seed=0, **flags):
        """Weights uniform in ``[-1/sqrt(C), 1/sqrt(C)]``, zero biases."""
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(channels)
        mats = [rng.uniform(-bound, bound, size=(channels, channels)) for _ in range(3)]
        zero = np.zeros(channels)
        return cls(mats[0], zero, mats[1], zero, mats[2], zero, heads=heads, window=window, **flags)

    @property
    def channels(self):
        return self.W_q.shape[0]

    @property
    def head_dim(self):
        return self.channels // self.heads

    @property
    def params(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_params(self, params):
        return replace(self, **{name: params[name] for name in PARAM_NAMES})

    def window_encodings(self):
        """``(w*w, 4D)`` encodings of the window indices, ``i``-major order."""
        offs = window_offsets(self.window)
        ii, jj = np.meshgrid(offs, offs, indexing="ij")
        pos = np.stack([ii.ravel(), jj.ravel()], axis=-1) / self.window
        enc = positional_encoding(pos, self.encoding)
        return enc if self.pe_window else np.zeros_like(enc)

    def query_encodings(self, decimal):
        enc = positional_encoding(np.asarray(decimal) / (2 * self.window), self.encoding)
        return enc if self.pe_decimal else np.zeros_like(enc)


@dataclass
class WindowSample:
    values: np.ndarray  # (w, w, C), indexed [i, j]
    encodings: np.ndarray  # (w, w, 4D)
    anchor: tuple


@dataclass
class QuerySample:
    value: np.ndarray  # (C,)
    encoding: np.ndarray  # (4D,)


@dataclass
class EvalStats:
    score_evals: int


def extract_window(reference, x, y, z, model):
    """Reference window around ``[x + z_x, y + z_y]`` with clamped borders."""
    reference = check_grid(reference, "reference", dtype=np.float64)
    h, w_, _ = reference.shape
    ax, ay = int(x + z[0]), int(y + z[1])
    offs = window_offsets(model.window)
    cols = np.clip(ax + offs, 0, w_ - 1)
    rows = np.clip(ay + offs, 0, h - 1)
    values = reference[rows[None, :], cols[:, None]]
    enc = model.window_encodings().reshape(model.window, model.window, -1)
    return WindowSample(values, enc, (ax, ay))


def make_query(current, x, y, d, model):
    current = check_grid(current, "current", dtype=np.float64)
    return QuerySample(current[y, x], model.query_encodings(d))


def _split_heads(arr, heads):
    return arr.reshape(arr.shape[:-1] + (heads, arr.shape[-1] // heads))


def attend(query, window, model):
    """Multi-head softmax cross-attention of one query over one window."""
    c = model.channels
    xq = query.value + query.encoding
    xw = (window.values + window.encodings).reshape(-1, c)
    q = _split_heads(xq @ model.W_q.T + model.b_q, model.heads)  # (h, dh)
    k = _split_heads(xw @ model.W_k.T + model.b_k, model.heads)  # (S, h, dh)
    v = _split_heads(xw @ model.W_v.T + model.b_v, model.heads)
    logits = np.einsum("hd,shd->hs", q, k) / np.sqrt(model.head_dim)
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=-1, keepdims=True)
    out = np.einsum("hs,shd->hd", weights, v).reshape(c)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite attention output")
    return out


@dataclass
class ForwardCache:
    """Intermediate tensors of a vectorized forward pass over ``N = H*W`` pixels."""

    query_in: np.ndarray  # (N, C)
    window_in: np.ndarray  # (N, S, C)
    q: np.ndarray  # (N, h, dh)
    k: np.ndarray  # (N, S, h, dh)
    v: np.ndarray  # (N, S, h, dh)
    attention: np.ndarray  # (N, h, S)
    output: np.ndarray  # (N, C)
    shape: tuple


def gather_windows(reference, flow, model):
    """Window values ``(N, S, C)`` and decimal offsets ``(N, 2)`` for every pixel."""
    h, w_, _ = reference.shape
    parts = decompose_offset(flow.reshape(-1, 2))
    ys, xs = np.divmod(np.arange(h * w_), w_)
    offs = window_offsets(model.window)
    di, dj = np.meshgrid(offs, offs, indexing="ij")
    cols = np.clip((xs + parts.integer[:, 0])[:, None] + di.ravel(), 0, w_ - 1)
    rows = np.clip((ys + parts.integer[:, 1])[:, None] + dj.ravel(), 0, h - 1)
    return reference[rows, cols], parts.decimal


def prepare_inputs(current, reference, flow, model):
    """Encoder inputs for every pixel; independent of the trainable weights.

    Returns ``(query_in, window_in, shape)`` with ``query_in`` of shape
    ``(N, C)`` and ``window_in`` of shape ``(N, w*w, C)``.
    """
    current = check_grid(current, "current", dtype=np.float64)
    reference = check_grid(reference, "reference", dtype=np.float64)
    if current.shape != reference.shape:
        raise ValueError(f"current {current.shape} and reference {reference.shape} differ")
    flow = check_flow(flow, current.shape)
    c = current.shape[2]
    if c != model.channels:
        raise ValueError(f"grid has {c} channels, model expects {model.channels}")
    windows, decimal = gather_windows(reference, flow, model)
    query_in = current.reshape(-1, c) + model.query_encodings(decimal)
    window_in = windows + model.window_encodings()
    return query_in, window_in, current.shape


def attention_forward(query_in, window_in, model, shape=None):
    heads = model.heads
    n, c = query_in.shape
    q = _split_heads(query_in @ model.W_q.T + model.b_q, heads)
    # q . b_k is constant along the window and cancels in the softmax; leaving
    # it out makes the output exactly (not just mathematically) b_k-invariant
    k = _split_heads(window_in @ model.W_k.T, heads)
    v = _split_heads(window_in @ model.W_v.T + model.b_v, heads)
    # (N, h, 1, dh) @ (N, h, dh, S) -> (N, h, S)
    # overflow surfaces as NumericalError below rather than as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        logits = (q[:, :, None, :] @ k.transpose(0, 2, 3, 1))[:, :, 0, :]
        logits *= 1.0 / np.sqrt(model.head_dim)
        logits -= logits.max(axis=-1, keepdims=True)
        attention = np.exp(logits)
        attention /= attention.sum(axis=-1, keepdims=True)
        output = (attention[:, :, None, :] @ v.transpose(0, 2, 1, 3)).reshape(n, c)
    if not np.all(np.isfinite(output)):
        raise NumericalError("non-finite alignment output")
    return ForwardCache(query_in, window_in, q, k, v, attention, output, shape)


def forward(current, reference, flow, model):
    """Vectorized alignment forward pass, keeping intermediates for backprop."""
    query_in, window_in, shape = prepare_inputs(current, reference, flow, model)
    return attention_forward(query_in, window_in, model, shape)


def align(current, reference, flow, model):
    """Align ``reference`` to ``current`` along ``flow``.

    Returns
    -------
    aligned : float32 array of shape (H, W, C)
    stats : EvalStats
        ``score_evals`` counts query-key products, ``w*w*H*W``.
    """
    cache = forward(current, reference, flow, model)
    h, w_, c = cache.shape
    aligned = cache.output.reshape(h, w_, c).astype(np.float32)
    return aligned, EvalStats(score_evals=int(cache.attention.shape[0] * cache.attention.shape[2]))


def encode_model(model):
    c = model.channels
    header = MODEL_MAGIC + struct.pack("<4i", c, model.encoding.n_bands, model.window, model.heads)
    body = b"".join(getattr(model, n).astype("<f4").tobytes() for n in PARAM_NAMES)
    return header + body


def decode_model(data):
    data = bytes(data)
    if data[:4] != MODEL_MAGIC:
        raise FormatError("bad model magic", 0)
    if len(data) < 20:
        raise FormatError("truncated model header", len(data))
    c, n_bands, window, heads = struct.unpack("<4i", data[4:20])
    if c < 4 or n_bands != c // 4:
        raise FormatError(f"inconsistent channels {c} / bands {n_bands}", 4)
    expected = 20 + 4 * 3 * (c * c + c)
    if len(data) != expected:
        raise FormatError(f"model payload is {len(data)} bytes, expected {expected}", 20)
    flat = np.frombuffer(data, dtype="<f4", offset=20).astype(np.float64)
    params, pos = {}, 0
    for name in PARAM_NAMES:
        size = c * c if name.startswith("W") else c
        shape = (c, c) if name.startswith("W") else (c,)
        params[name] = flat[pos:pos + size].reshape(shape)
        pos += size
    return AlignModel(**params, heads=heads, window=window)


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(encode_model(model))


def load_model(path):
    with open(path, "rb") as fh:
        return decode_model(fh.read())
