"""Dense float32 neural kernels.

Every primitive has a batch form over [T, D] arrays; the stateful ones
(causal convolution, LSTM) thread explicit state objects so that chunked
streaming runs reproduce the batch result exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericError, ShapeError, StateError

F32 = np.float32

# Sentinel for an unbounded attention context.
UNBOUNDED = None


def f32(x) -> np.ndarray:
    return np.asarray(x, dtype=F32)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return F32(1.0) / (F32(1.0) + np.exp(-x))


def swish(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def leaky_relu(x: np.ndarray, alpha: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, x, F32(alpha) * x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, F32(0.0))


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def linear(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    """y[t] = x[t] @ w + b for x of shape [T, Din] (or a single [Din] row)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(
            f"linear: input dim {x.shape[-1]} does not match weight rows {w.shape[0]}"
        )
    if b is not None and b.shape[-1] != w.shape[1]:
        raise ShapeError(
            f"linear: bias dim {b.shape[-1]} does not match weight cols {w.shape[1]}"
        )
    y = x @ w
    if b is not None:
        y = y + b
    return y


@dataclass
class ConvState:
    """Last (kernel_size - 1) * dilation input frames of a causal convolution."""

    tail: np.ndarray

    @classmethod
    def init(cls, kernel_size: int, dim: int, dilation: int = 1) -> "ConvState":
        return cls(tail=np.zeros(((kernel_size - 1) * dilation, dim), dtype=F32))


def causal_conv1d(
    x: np.ndarray,
    kernel: np.ndarray,
    state: ConvState,
    dilation: int = 1,
) -> tuple[np.ndarray, ConvState]:
    """Causal 1-D convolution over time.

    x: [T, D], kernel: [K, D, Dout].  y[t] depends only on inputs at
    t - (K-1)*dilation .. t, with the state tail standing in for the
    pre-chunk past.  Chunked calls with threaded state are bit-identical
    to one call on the concatenated input.
    """
    k, din, dout = kernel.shape
    t_len = x.shape[0]
    pad = (k - 1) * dilation
    if x.shape[1] != din:
        raise ShapeError(f"causal_conv1d: input channels {x.shape[1]} != kernel {din}")
    if state.tail.shape != (pad, din):
        raise StateError(
            f"causal_conv1d: state tail shape {state.tail.shape} != expected {(pad, din)}"
        )
    ext = np.concatenate([state.tail, x], axis=0)
    new_state = ConvState(tail=ext[ext.shape[0] - pad:].copy() if pad else ext[:0].copy())
    if t_len == 0:
        return np.zeros((0, dout), dtype=F32), new_state
    # Windowed matmul keeps the per-row accumulation pattern independent of
    # chunk size, which is what makes chunked runs bit-identical.
    win = np.lib.stride_tricks.sliding_window_view(ext, pad + 1, axis=0)
    win = win[:, :, ::dilation] if dilation > 1 else win
    # win: [T, D, K] -> [T, K, D] -> [T, K*D]
    rows = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(t_len, k * din)
    y = rows @ kernel.reshape(k * din, dout)
    return y, new_state


def causal_depthwise_conv1d(
    x: np.ndarray,
    kernel: np.ndarray,
    state: ConvState,
) -> tuple[np.ndarray, ConvState]:
    """Depthwise causal convolution: kernel [K, D], one filter per channel."""
    k, din = kernel.shape
    if x.shape[1] != din:
        raise ShapeError(f"depthwise conv: channels {x.shape[1]} != kernel {din}")
    if state.tail.shape != (k - 1, din):
        raise StateError(
            f"depthwise conv: state tail shape {state.tail.shape} != expected {(k - 1, din)}"
        )
    ext = np.concatenate([state.tail, x], axis=0)
    t_len = x.shape[0]
    new_state = ConvState(tail=ext[ext.shape[0] - (k - 1):].copy() if k > 1 else ext[:0].copy())
    if t_len == 0:
        return np.zeros((0, din), dtype=F32), new_state
    win = np.lib.stride_tricks.sliding_window_view(ext, k, axis=0)  # [T, D, K]
    y = np.einsum("tdk,kd->td", win, kernel).astype(F32)
    return y, new_state


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def init(cls, hidden: int) -> "LstmState":
        return cls(h=np.zeros(hidden, dtype=F32), c=np.zeros(hidden, dtype=F32))


def lstm_step(
    x: np.ndarray, state: LstmState, wx: np.ndarray, wh: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, LstmState]:
    """One LSTM cell update. Gate layout along the 4H axis: i, f, g, o."""
    hidden = state.h.shape[0]
    if wx.shape != (x.shape[0], 4 * hidden) or wh.shape != (hidden, 4 * hidden):
        raise ShapeError(
            f"lstm_step: weight shapes {wx.shape}/{wh.shape} do not match "
            f"input {x.shape[0]} and hidden {hidden}"
        )
    z = x @ wx + state.h @ wh + b
    i, f, g, o = np.split(z, 4)
    c = sigmoid(i) * np.tanh(g) + sigmoid(f) * state.c
    h = sigmoid(o) * np.tanh(c)
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
        raise NumericError("lstm_step produced a non-finite state")
    return h, LstmState(h=h, c=c)


@dataclass(frozen=True)
class AttentionWindow:
    """Visible context around each position: `left`/`right` counts or UNBOUNDED."""

    left: Optional[int]
    right: Optional[int]

    def __post_init__(self):
        for v, side in ((self.left, "left"), (self.right, "right")):
            if v is not None and v < 0:
                raise ShapeError(f"AttentionWindow: negative {side} context {v}")


def window_mask(
    q_index: np.ndarray, k_index: np.ndarray, window: AttentionWindow
) -> np.ndarray:
    """Boolean [Q, K] visibility mask for absolute query/key positions."""
    rel = k_index[None, :] - q_index[:, None]
    mask = np.ones(rel.shape, dtype=bool)
    if window.left is not None:
        mask &= rel >= -window.left
    if window.right is not None:
        mask &= rel <= window.right
    return mask


def masked_mhsa(
    q_in: np.ndarray,
    kv_in: np.ndarray,
    mask: np.ndarray,
    n_heads: int,
    params: dict,
) -> np.ndarray:
    """Multi-head attention of q_in rows over kv_in rows under a boolean mask.

    params: wq, wk, wv, wo [D, D] and bq, bk, bv, bo [D].
    Masked positions get an additive -1e9 before the softmax.
    """
    d = q_in.shape[-1]
    if d % n_heads:
        raise ShapeError(f"mhsa: width {d} not divisible by {n_heads} heads")
    hd = d // n_heads
    nq, nk = q_in.shape[0], kv_in.shape[0]
    if mask.shape != (nq, nk):
        raise ShapeError(f"mhsa: mask shape {mask.shape} != {(nq, nk)}")
    q = linear(q_in, params["wq"], params["bq"]).reshape(nq, n_heads, hd)
    k = linear(kv_in, params["wk"], params["bk"]).reshape(nk, n_heads, hd)
    v = linear(kv_in, params["wv"], params["bv"]).reshape(nk, n_heads, hd)
    scores = np.einsum("qhd,khd->hqk", q, k) * F32(1.0 / np.sqrt(hd))
    scores = scores + np.where(mask[None, :, :], F32(0.0), F32(-1e9))
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    ctx = np.einsum("hqk,khd->qhd", w, v).reshape(nq, d).astype(F32)
    return linear(ctx, params["wo"], params["bo"])


def local_mhsa(
    x: np.ndarray, window: AttentionWindow, n_heads: int, params: dict
) -> np.ndarray:
    """Self-attention where position t sees only [t-left, t+right] (clipped)."""
    idx = np.arange(x.shape[0])
    return masked_mhsa(x, x, window_mask(idx, idx, window), n_heads, params)


def layer_norm(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-6
) -> np.ndarray:
    """Per-position normalization over the feature axis, then affine."""
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return ((x - mean) / np.sqrt(var + F32(eps))) * gain + bias
