"""Conformer encoder assembled from an ArchSpec, in batch and streaming forms.

A conformer block computes

    a = x + 1/2 FFN1(x)
    c = a + MHSA_window(a)
    z = c + ConvModule(c)          # pointwise-GLU, depthwise causal conv, LN, swish, pointwise
    y = LN(z + 1/2 FFN2(z))

so all look-ahead comes from the attention window; the convolution is
causal.  A stacker layer concatenates neighbouring frames, projects back to
model width and halves the frame rate.  The batch entry point is the
single-chunk case of the streaming path, which makes the two equivalent by
construction up to chunk-boundary float noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import nn
from .archdsl import ArchSpec, LayerSpec, get_arch
from .errors import BuildError, ShapeError, StateError
from .store import WeightStore
from .taps import ActTap, tap_act

F32 = np.float32


@dataclass
class EncoderConfig:
    arch: ArchSpec
    d_model: int = 64
    n_heads: int = 4
    conv_kernel: int = 15
    ffn_expansion: int = 4
    input_dim: int = 80
    hop_ms: float = 10.0

    def __post_init__(self):
        if isinstance(self.arch, str):
            self.arch = get_arch(self.arch)
        if self.d_model % self.n_heads:
            raise ShapeError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.conv_kernel < 1:
            raise ShapeError(f"conv_kernel must be >= 1, got {self.conv_kernel}")

    @property
    def subsample_factor(self) -> int:
        return self.arch.subsample_factor


def weight_shapes(config: EncoderConfig) -> Dict[str, Tuple[int, ...]]:
    """Full name -> shape map for every tensor the encoder consumes."""
    d = config.d_model
    f = config.ffn_expansion * d
    k = config.conv_kernel
    shapes: Dict[str, Tuple[int, ...]] = {
        "enc.in_proj.w": (config.input_dim, d),
        "enc.in_proj.b": (d,),
    }
    cb_i = sl_j = 0
    for layer in config.arch.layers:
        if layer.kind == "CB":
            p = f"enc.block{cb_i}"
            for ffn in ("ffn1", "ffn2"):
                shapes[f"{p}.{ffn}.w1"] = (d, f)
                shapes[f"{p}.{ffn}.b1"] = (f,)
                shapes[f"{p}.{ffn}.w2"] = (f, d)
                shapes[f"{p}.{ffn}.b2"] = (d,)
            for m in ("q", "k", "v", "o"):
                shapes[f"{p}.att.w{m}"] = (d, d)
                shapes[f"{p}.att.b{m}"] = (d,)
            shapes[f"{p}.conv.pw1"] = (d, 2 * d)
            shapes[f"{p}.conv.pw1_b"] = (2 * d,)
            shapes[f"{p}.conv.dw"] = (k, d)
            shapes[f"{p}.conv.dw_b"] = (d,)
            shapes[f"{p}.conv.pw2"] = (d, d)
            shapes[f"{p}.conv.pw2_b"] = (d,)
            shapes[f"{p}.conv.ln_g"] = (d,)
            shapes[f"{p}.conv.ln_b"] = (d,)
            shapes[f"{p}.ln_g"] = (d,)
            shapes[f"{p}.ln_b"] = (d,)
            cb_i += 1
        else:
            slots = 2 if layer.right == 0 else layer.right + 1
            shapes[f"enc.sl{sl_j}.proj.w"] = (slots * d, d)
            shapes[f"enc.sl{sl_j}.proj.b"] = (d,)
            sl_j += 1
    return shapes


def init_encoder_weights(
    config: EncoderConfig, seed: int, store: Optional[WeightStore] = None
) -> WeightStore:
    """Seeded uniform [-0.1, 0.1] init; same seed gives bit-identical tensors."""
    rng = np.random.default_rng(seed)
    store = store if store is not None else WeightStore()
    for name, shape in weight_shapes(config).items():
        if name.endswith("ln_g"):
            # unit norm gains keep 17 stacked blocks at O(1) output scale
            store.put(name, np.ones(shape, dtype=F32))
        else:
            store.put(name, rng.uniform(-0.1, 0.1, size=shape).astype(F32))
    return store


class Encoder:
    """Immutable weights + config; shareable across streams."""

    def __init__(self, config: EncoderConfig, store: WeightStore, tap: Optional[ActTap] = None):
        self.config = config
        self.store = store
        self.tap = tap

    @property
    def subsample_factor(self) -> int:
        return self.config.subsample_factor


def build_encoder(config: EncoderConfig, weights: Union[WeightStore, int]) -> Encoder:
    """Assemble an encoder, validating every tensor's presence and shape."""
    if isinstance(weights, int):
        weights = init_encoder_weights(config, seed=weights)
    for name, shape in weight_shapes(config).items():
        if name not in weights:
            raise BuildError(f"missing weight tensor {name!r}")
        got = weights.entry(name).shape
        if tuple(got) != shape:
            raise BuildError(f"weight tensor {name!r} has shape {got}, expected {shape}")
    return Encoder(config, weights)


# ---------------------------------------------------------------------------
# layer streams


def _t_linear(tap, site, x, w, b):
    x = tap_act(tap, site + ":in", x)
    return tap_act(tap, site + ":out", nn.linear(x, w, b))


def _half_ffn(store, tap, prefix, x):
    h = _t_linear(tap, f"{prefix}.w1", x, store.f32(f"{prefix}.w1"), store.f32(f"{prefix}.b1"))
    h = nn.swish(h)
    h = _t_linear(tap, f"{prefix}.w2", h, store.f32(f"{prefix}.w2"), store.f32(f"{prefix}.b2"))
    return x + F32(0.5) * h


class _CBStream:
    """One conformer block as an incremental transformer of its input stream."""

    def __init__(self, enc: Encoder, cb_index: int, window: nn.AttentionWindow):
        self.store = enc.store
        self.tap = enc.tap
        self.prefix = f"enc.block{cb_index}"
        self.n_heads = enc.config.n_heads
        self.d = enc.config.d_model
        self.window = window
        self.right = window.right
        self.left = window.left
        self.conv_state = nn.ConvState.init(enc.config.conv_kernel, enc.config.d_model)
        self.a_buf = np.zeros((0, enc.config.d_model), dtype=F32)
        self.base = 0  # absolute index of a_buf[0]
        self.n_in = 0
        self.n_out = 0

    def _att_params(self):
        s, p = self.store, self.prefix
        return {m: s.f32(f"{p}.att.w{m[-1]}") if m.startswith("w") else s.f32(f"{p}.att.b{m[-1]}")
                for m in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")}

    def _conv_module(self, c: np.ndarray) -> np.ndarray:
        s, p, tap = self.store, self.prefix, self.tap
        u = _t_linear(tap, f"{p}.conv.pw1", c, s.f32(f"{p}.conv.pw1"), s.f32(f"{p}.conv.pw1_b"))
        half = u.shape[-1] // 2
        g = u[:, :half] * nn.sigmoid(u[:, half:])
        g = tap_act(tap, f"{p}.conv.dw:in", g)
        d, self.conv_state = nn.causal_depthwise_conv1d(g, s.f32(f"{p}.conv.dw"), self.conv_state)
        d = d + s.f32(f"{p}.conv.dw_b")
        d = tap_act(tap, f"{p}.conv.dw:out", d)
        d = nn.swish(nn.layer_norm(d, s.f32(f"{p}.conv.ln_g"), s.f32(f"{p}.conv.ln_b")))
        return _t_linear(tap, f"{p}.conv.pw2", d, s.f32(f"{p}.conv.pw2"), s.f32(f"{p}.conv.pw2_b"))

    def push(self, x: np.ndarray, final: bool) -> np.ndarray:
        s, p = self.store, self.prefix
        if x.shape[0]:
            a_new = _half_ffn(s, self.tap, f"{p}.ffn1", x)
            self.a_buf = np.concatenate([self.a_buf, a_new], axis=0)
            self.n_in += x.shape[0]
        e0 = self.n_out
        if final:
            e1 = self.n_in
        elif self.right is None:
            e1 = e0  # unbounded look-ahead: emit only at flush
        else:
            e1 = max(e0, self.n_in - self.right)
        if e1 <= e0:
            return np.zeros((0, self.d), dtype=F32)
        kl = 0 if self.left is None else max(0, e0 - self.left)
        kh = self.n_in if self.right is None else min(self.n_in, e1 + self.right)
        q_idx = np.arange(e0, e1)
        k_idx = np.arange(kl, kh)
        a_q = self.a_buf[e0 - self.base:e1 - self.base]
        a_kv = self.a_buf[kl - self.base:kh - self.base]
        att = nn.masked_mhsa(
            a_q, a_kv, nn.window_mask(q_idx, k_idx, self.window), self.n_heads, self._att_params()
        )
        c = a_q + att
        z = c + self._conv_module(c)
        y = nn.layer_norm(
            _half_ffn(s, self.tap, f"{p}.ffn2", z), s.f32(f"{p}.ln_g"), s.f32(f"{p}.ln_b")
        )
        self.n_out = e1
        keep_from = 0 if self.left is None else max(self.base, e1 - self.left)
        if keep_from > self.base:
            self.a_buf = self.a_buf[keep_from - self.base:]
            self.base = keep_from
        return nn.check_finite(y, f"{p} output")


class _SLStream:
    """One stacker layer: gather-concat-project with 2x subsampling."""

    def __init__(self, enc: Encoder, sl_index: int, layer: LayerSpec):
        self.store = enc.store
        self.tap = enc.tap
        self.prefix = f"enc.sl{sl_index}"
        self.d = enc.config.d_model
        self.k = layer.right
        self.offsets = [-1, 0] if self.k == 0 else list(range(self.k + 1))
        self.buf = np.zeros((0, enc.config.d_model), dtype=F32)
        self.base = 0
        self.n_in = 0
        self.n_out = 0

    def _avail(self, final: bool) -> int:
        if final:
            return (self.n_in + 1) // 2
        last_needed = max(self.offsets)
        if self.n_in - 1 - last_needed < 0:
            return 0
        return (self.n_in - 1 - last_needed) // 2 + 1

    def push(self, x: np.ndarray, final: bool) -> np.ndarray:
        if x.shape[0]:
            self.buf = np.concatenate([self.buf, x], axis=0)
            self.n_in += x.shape[0]
        u1 = self._avail(final)
        u0 = self.n_out
        if u1 <= u0:
            return np.zeros((0, self.d), dtype=F32)
        d = self.d
        u = np.arange(u0, u1)
        idx = 2 * u[:, None] + np.array(self.offsets)[None, :]  # absolute input indices
        valid = (idx >= 0) & (idx < self.n_in)
        rows = np.zeros((idx.shape[0], idx.shape[1], d), dtype=F32)
        safe = np.clip(idx - self.base, 0, self.buf.shape[0] - 1)
        rows[valid] = self.buf[safe[valid]]
        flat = rows.reshape(len(u), len(self.offsets) * d)
        y = _t_linear(
            self.tap, f"{self.prefix}.proj", flat,
            self.store.f32(f"{self.prefix}.proj.w"), self.store.f32(f"{self.prefix}.proj.b"),
        )
        self.n_out = u1
        keep_from = max(self.base, 2 * u1 + min(self.offsets))
        if keep_from > self.base:
            self.buf = self.buf[keep_from - self.base:]
            self.base = keep_from
        return y


class EncoderStreamState:
    """Single-owner per-utterance state: one layer stream per arch layer."""

    def __init__(self, enc: Encoder):
        self.layers: List[object] = []
        cb_i = sl_j = 0
        for layer in enc.config.arch.layers:
            if layer.kind == "CB":
                window = nn.AttentionWindow(layer.left, layer.right)
                self.layers.append(_CBStream(enc, cb_i, window))
                cb_i += 1
            else:
                self.layers.append(_SLStream(enc, sl_j, layer))
                sl_j += 1
        self.finished = False
        self.frames_in = 0
        self.frames_out = 0


def new_stream(enc: Encoder) -> EncoderStreamState:
    return EncoderStreamState(enc)


def encode_stream(
    enc: Encoder,
    state: EncoderStreamState,
    chunk: np.ndarray,
    final: bool = False,
) -> np.ndarray:
    """Push a chunk of [c, input_dim] feature frames; returns emitted [m, D].

    Emits every output frame whose look-ahead window is satisfied; with
    final=True flushes so that the cumulative output equals the batch run.
    """
    if state.finished:
        raise StateError("encode_stream called after final")
    chunk = np.asarray(chunk, dtype=F32).reshape(-1, enc.config.input_dim)
    state.frames_in += chunk.shape[0]
    h = _t_linear(enc.tap, "enc.in_proj", chunk,
                  enc.store.f32("enc.in_proj.w"), enc.store.f32("enc.in_proj.b"))
    for layer in state.layers:
        h = layer.push(h, final)
    if final:
        state.finished = True
    state.frames_out += h.shape[0]
    return h


def encode_full(enc: Encoder, feats: np.ndarray) -> np.ndarray:
    """Whole-utterance encoding; T' = ceil(T / subsample_factor)."""
    feats = np.asarray(feats, dtype=F32)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ShapeError(f"encode_full expects [T, {enc.config.input_dim}], got {feats.shape}")
    out = encode_stream(enc, new_stream(enc), feats, final=True)
    return nn.check_finite(out, "encoder output")


def conformer_block(
    x: np.ndarray, window: nn.AttentionWindow, enc: Encoder, cb_index: int = 0
) -> np.ndarray:
    """Batch form of a single conformer block (zero-initialized conv state)."""
    stream = _CBStream(enc, cb_index, window)
    return stream.push(np.asarray(x, dtype=F32), final=True)


def stacker(x: np.ndarray, k_right: int, enc: Encoder, sl_index: int = 0) -> np.ndarray:
    """Batch form of a stacker layer; k_right == 0 is the default causal stacker."""
    stream = _SLStream(enc, sl_index, LayerSpec("SL", right=k_right))
    return stream.push(np.asarray(x, dtype=F32), final=True)


def expected_param_count(config: EncoderConfig) -> int:
    return sum(int(np.prod(s)) for s in weight_shapes(config).values())
