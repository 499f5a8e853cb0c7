"""Spectrogram-to-waveform synthesis.

Three paths:
  * nGL: offline Griffin-Lim phase reconstruction (oracle/baseline),
  * GL:  streaming Griffin-Lim over a 3-frame window, 3 iterations per
    push, emitting the hop owned by the middle frame (1 hop delay),
  * MG:  a causal MelGAN-style generator (pointwise input conv, four
    causal transposed-conv upsampling stages of 5*5*4*2 = 200x with dilated
    causal residual stacks, tanh output), streamed two frames per call with
    a one-frame look-ahead queue (1 hop delay).

STFT frames are left-aligned: frame t covers samples [t*hop, t*hop+win).
DSP runs in float64 internally; waveforms are returned as float32.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import nn
from .errors import BuildError, ConfigError, ShapeError, StateError
from .store import WeightStore
from .taps import ActTap, tap_act

F32 = np.float32


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    hop: int = 200  # 12.5 ms at 16 kHz
    win_length: int = 800
    n_fft: int = 1024

    def __post_init__(self):
        if not (self.hop <= self.win_length <= self.n_fft):
            raise ConfigError(
                f"need hop <= win_length <= n_fft, got {self.hop}/{self.win_length}/{self.n_fft}"
            )

    @property
    def out_dim(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def frame_ms(self) -> float:
        return 1000.0 * self.hop / self.sample_rate


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (COLA at hop = n/4)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    if n_samples < cfg.win_length:
        return 0
    return 1 + (n_samples - cfg.win_length) // cfg.hop


def stft(wave: np.ndarray, cfg: StftConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Magnitudes and phases, shape [T, n_fft/2 + 1]."""
    wave = np.asarray(wave, dtype=np.float64)
    n = frame_count(wave.shape[0], cfg)
    w = hann(cfg.win_length)
    mags = np.zeros((n, cfg.out_dim))
    phases = np.zeros((n, cfg.out_dim))
    for t in range(n):
        seg = wave[t * cfg.hop: t * cfg.hop + cfg.win_length] * w
        spec = np.fft.rfft(seg, n=cfg.n_fft)
        mags[t] = np.abs(spec)
        phases[t] = np.angle(spec)
    return mags, phases


def istft(mags: np.ndarray, phases: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Windowed overlap-add inverse with per-sample window-square normalization."""
    n = mags.shape[0]
    if n == 0:
        return np.zeros(0)
    w = hann(cfg.win_length)
    total = (n - 1) * cfg.hop + cfg.win_length
    acc = np.zeros(total)
    wsum = np.zeros(total)
    spec = mags * np.exp(1j * phases)
    for t in range(n):
        seg = np.fft.irfft(spec[t], n=cfg.n_fft)[: cfg.win_length] * w
        acc[t * cfg.hop: t * cfg.hop + cfg.win_length] += seg
        wsum[t * cfg.hop: t * cfg.hop + cfg.win_length] += w * w
    return acc / np.maximum(wsum, 1e-10)


def gl_offline(mags: np.ndarray, cfg: StftConfig, n_iters: int = 60) -> np.ndarray:
    """Classic Griffin-Lim: zero-phase init, iterate istft -> stft phase update."""
    mags = np.asarray(mags, dtype=np.float64)
    if mags.shape[0] == 0:
        return np.zeros(0, dtype=F32)
    if np.any(mags < 0):
        raise ShapeError("gl_offline requires non-negative magnitudes")
    phases = np.zeros_like(mags)
    for _ in range(n_iters):
        wave = istft(mags, phases, cfg)
        _, phases = stft(wave, cfg)
    return np.clip(istft(mags, phases, cfg), -1.0, 1.0).astype(F32)


def spectral_convergence(mags: np.ndarray, wave: np.ndarray, cfg: StftConfig) -> float:
    got, _ = stft(wave, cfg)
    return float(np.linalg.norm(got - mags) / max(np.linalg.norm(mags), 1e-12))


# ---------------------------------------------------------------------------
# streaming Griffin-Lim


class GlState:
    """Streaming GL state: w_size magnitude frames with retained phases,
    plus the overlap-add accumulation buffers.  Emits one hop per push after
    a one-push warm-up (delay = w_size - 1 - ind = 1 frame)."""

    def __init__(self, cfg: StftConfig, w_size: int = 3, n_iters: int = 3, ind: int = 1):
        if not (0 <= ind < w_size):
            raise ConfigError(f"ind {ind} outside window of size {w_size}")
        self.cfg = cfg
        self.w_size = w_size
        self.n_iters = n_iters
        self.ind = ind
        self.mags: List[np.ndarray] = []  # ring of the last w_size frames
        self.phases: List[np.ndarray] = []
        self.frames_seen = 0
        self.finalized = 0  # frames already overlap-added
        self.acc = np.zeros(0)
        self.wsum = np.zeros(0)
        self.emitted_samples = 0
        self.flushed = False

    @property
    def delay_frames(self) -> int:
        return self.w_size - 1 - self.ind

    def _ensure(self, upto: int):
        if upto > self.acc.shape[0]:
            grow = upto - self.acc.shape[0]
            self.acc = np.concatenate([self.acc, np.zeros(grow)])
            self.wsum = np.concatenate([self.wsum, np.zeros(grow)])


def _gl_refine_window(state: GlState) -> None:
    """Run n_iters of Griffin-Lim over the frames currently in the ring."""
    cfg = state.cfg
    n = len(state.mags)
    if n == 0:
        return
    w = hann(cfg.win_length)
    w2 = w * w
    local_len = (n - 1) * cfg.hop + cfg.win_length
    mags = np.stack(state.mags)
    phases = np.stack(state.phases)
    for _ in range(state.n_iters):
        acc = np.zeros(local_len)
        wsum = np.zeros(local_len)
        spec = mags * np.exp(1j * phases)
        for t in range(n):
            seg = np.fft.irfft(spec[t], n=cfg.n_fft)[: cfg.win_length] * w
            acc[t * cfg.hop: t * cfg.hop + cfg.win_length] += seg
            wsum[t * cfg.hop: t * cfg.hop + cfg.win_length] += w2
        x = acc / np.maximum(wsum, 1e-10)
        for t in range(n):
            seg = x[t * cfg.hop: t * cfg.hop + cfg.win_length] * w
            phases[t] = np.angle(np.fft.rfft(seg, n=cfg.n_fft))
    for t in range(n):
        state.phases[t] = phases[t]


def _gl_finalize(state: GlState, frame_index: int) -> None:
    """Overlap-add the finished frame's synthesis contribution."""
    cfg = state.cfg
    ring_pos = frame_index - (state.frames_seen - len(state.mags))
    spec = state.mags[ring_pos] * np.exp(1j * state.phases[ring_pos])
    seg = np.fft.irfft(spec, n=cfg.n_fft)[: cfg.win_length] * hann(cfg.win_length)
    start = frame_index * cfg.hop
    state._ensure(start + cfg.win_length)
    state.acc[start: start + cfg.win_length] += seg
    state.wsum[start: start + cfg.win_length] += hann(cfg.win_length) ** 2
    state.finalized = frame_index + 1


def _gl_emit(state: GlState, upto_sample: int) -> np.ndarray:
    state._ensure(upto_sample)
    lo = state.emitted_samples
    out = state.acc[lo:upto_sample] / np.maximum(state.wsum[lo:upto_sample], 1e-10)
    state.emitted_samples = upto_sample
    return np.clip(out, -1.0, 1.0).astype(F32)


def gl_stream_push(state: GlState, frame: np.ndarray) -> np.ndarray:
    """Push one magnitude frame; returns `hop` samples once warm (else empty)."""
    if state.flushed:
        raise StateError("gl_stream_push after flush")
    frame = np.asarray(frame, dtype=np.float64).reshape(-1)
    if frame.shape[0] != state.cfg.out_dim:
        raise ShapeError(
            f"GL frame has {frame.shape[0]} bins, expected {state.cfg.out_dim}"
        )
    state.mags.append(frame)
    state.phases.append(np.zeros(state.cfg.out_dim))
    if len(state.mags) > state.w_size:
        state.mags.pop(0)
        state.phases.pop(0)
    n = state.frames_seen
    state.frames_seen += 1
    _gl_refine_window(state)
    owned = n - state.delay_frames
    if owned < 0:
        return np.zeros(0, dtype=F32)
    _gl_finalize(state, owned)
    return _gl_emit(state, (owned + 1) * state.cfg.hop)


def gl_flush(state: GlState) -> np.ndarray:
    """Finalize pending frames and emit the remaining tail samples."""
    if state.flushed:
        raise StateError("gl_flush called twice")
    state.flushed = True
    if state.frames_seen == 0:
        return np.zeros(0, dtype=F32)
    for f in range(state.finalized, state.frames_seen):
        _gl_finalize(state, f)
    total = (state.frames_seen - 1) * state.cfg.hop + state.cfg.win_length
    return _gl_emit(state, total)


# ---------------------------------------------------------------------------
# streaming MelGAN-style generator


@dataclass(frozen=True)
class MgConfig:
    in_dim: int = 513
    base_channels: int = 32
    up_factors: Tuple[int, ...] = (5, 5, 4, 2)
    res_kernel: int = 3
    dilations: Tuple[int, ...] = (1, 3, 9)

    @property
    def total_upsample(self) -> int:
        out = 1
        for u in self.up_factors:
            out *= u
        return out

    def stage_channels(self) -> List[int]:
        chans = [self.base_channels]
        for _ in self.up_factors:
            chans.append(max(4, chans[-1] // 2))
        return chans


def mg_weight_shapes(cfg: MgConfig) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {
        "voc.mg.in.w": (cfg.in_dim, cfg.base_channels),
        "voc.mg.in.b": (cfg.base_channels,),
    }
    chans = cfg.stage_channels()
    for i, u in enumerate(cfg.up_factors):
        cin, cout = chans[i], chans[i + 1]
        shapes[f"voc.mg.up{i}.w"] = (2 * u, cin, cout)
        shapes[f"voc.mg.up{i}.b"] = (cout,)
        for j, _d in enumerate(cfg.dilations):
            shapes[f"voc.mg.up{i}.res{j}.w1"] = (cfg.res_kernel, cout, cout)
            shapes[f"voc.mg.up{i}.res{j}.b1"] = (cout,)
            shapes[f"voc.mg.up{i}.res{j}.w2"] = (1, cout, cout)
            shapes[f"voc.mg.up{i}.res{j}.b2"] = (cout,)
    shapes["voc.mg.out.w"] = (chans[-1], 1)
    shapes["voc.mg.out.b"] = (1,)
    return shapes


def init_mg_weights(cfg: MgConfig, seed: int, store: Optional[WeightStore] = None) -> WeightStore:
    rng = np.random.default_rng(seed)
    store = store if store is not None else WeightStore()
    for name, shape in mg_weight_shapes(cfg).items():
        store.put(name, rng.uniform(-0.1, 0.1, size=shape).astype(F32))
    return store


class MgGenerator:
    def __init__(self, cfg: MgConfig, store: WeightStore, stft_cfg: Optional[StftConfig] = None,
                 tap: Optional[ActTap] = None):
        stft_cfg = stft_cfg or StftConfig()
        if cfg.total_upsample != stft_cfg.hop:
            raise ConfigError(
                f"upsample factor {cfg.total_upsample} does not match hop {stft_cfg.hop}"
            )
        for name, shape in mg_weight_shapes(cfg).items():
            if name not in store:
                raise BuildError(f"missing weight tensor {name!r}")
            if tuple(store.entry(name).shape) != shape:
                raise BuildError(
                    f"weight tensor {name!r} has shape {store.entry(name).shape}, expected {shape}"
                )
        self.cfg = cfg
        self.store = store
        self.tap = tap


@dataclass
class _TconvState:
    tail: np.ndarray  # pending overlap of (kernel - stride) output samples


class MgState:
    """Per-stream state: one transposed-conv tail plus per-res-block conv
    states for every stage, and the one-frame look-ahead queue."""

    def __init__(self, gen: MgGenerator):
        self.gen = gen
        cfg = gen.cfg
        chans = cfg.stage_channels()
        self.tconv: List[_TconvState] = []
        self.res: List[List[Tuple[nn.ConvState, nn.ConvState]]] = []
        for i, u in enumerate(cfg.up_factors):
            cout = chans[i + 1]
            self.tconv.append(_TconvState(tail=np.zeros((2 * u - u, cout), dtype=F32)))
            self.res.append(
                [
                    (
                        nn.ConvState.init(cfg.res_kernel, cout, dilation=d),
                        nn.ConvState.init(1, cout),
                    )
                    for d in cfg.dilations
                ]
            )
        self.queue = np.zeros((0, cfg.in_dim), dtype=F32)
        self.flushed = False


def _causal_tconv(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, state: _TconvState
) -> np.ndarray:
    """Causal transposed convolution, kernel = 2*stride: input frame t
    contributes to outputs [t*stride, t*stride + kernel); the overlap beyond
    the emitted span is carried in the state tail."""
    k, cin, cout = w.shape
    t_len = x.shape[0]
    full = np.zeros((t_len * stride + (k - stride), cout), dtype=F32)
    for j in range(k):
        contrib = x @ w[j]
        full[j: j + t_len * stride: stride] += contrib
    full[: k - stride] += state.tail
    state.tail = full[t_len * stride:].copy()
    return full[: t_len * stride] + b


def _mg_process(gen: MgGenerator, state: MgState, frames: np.ndarray) -> np.ndarray:
    """Run frames through the generator stack with threaded states."""
    s, cfg, tap = gen.store, gen.cfg, gen.tap
    x = _t_linear(tap, "voc.mg.in", frames, s.f32("voc.mg.in.w"), s.f32("voc.mg.in.b"))
    for i, u in enumerate(cfg.up_factors):
        x = nn.leaky_relu(x)
        x = tap_act(tap, f"voc.mg.up{i}:in", x)
        x = _causal_tconv(x, s.f32(f"voc.mg.up{i}.w"), s.f32(f"voc.mg.up{i}.b"), u, state.tconv[i])
        x = tap_act(tap, f"voc.mg.up{i}:out", x)
        for j, d in enumerate(cfg.dilations):
            st1, st2 = state.res[i][j]
            h = nn.leaky_relu(x)
            h = tap_act(tap, f"voc.mg.up{i}.res{j}.w1:in", h)
            h, st1 = nn.causal_conv1d(h, s.f32(f"voc.mg.up{i}.res{j}.w1"), st1, dilation=d)
            h = h + s.f32(f"voc.mg.up{i}.res{j}.b1")
            h = tap_act(tap, f"voc.mg.up{i}.res{j}.w1:out", h)
            h = nn.leaky_relu(h)
            h, st2 = nn.causal_conv1d(h, s.f32(f"voc.mg.up{i}.res{j}.w2"), st2)
            h = h + s.f32(f"voc.mg.up{i}.res{j}.b2")
            state.res[i][j] = (st1, st2)
            x = x + h
    x = nn.leaky_relu(x)
    y = _t_linear(tap, "voc.mg.out", x, s.f32("voc.mg.out.w"), s.f32("voc.mg.out.b"))
    return np.tanh(y[:, 0])


def _t_linear(tap, site, x, w, b):
    x = tap_act(tap, site + ":in", x)
    return tap_act(tap, site + ":out", nn.linear(x, w, b))


def mg_batch(gen: MgGenerator, frames: np.ndarray) -> np.ndarray:
    """Whole-spectrogram generator run (the oracle for the streaming path)."""
    state = MgState(gen)
    return _mg_process(gen, state, np.asarray(frames, dtype=F32))


def mg_stream_push(state: MgState, frames: np.ndarray) -> np.ndarray:
    """Push a frame pair; processes all but the newest queued frame so the
    stream lags the input by exactly one frame (12.5 ms)."""
    if state.flushed:
        raise StateError("mg_stream_push after flush")
    frames = np.asarray(frames, dtype=F32).reshape(-1, state.gen.cfg.in_dim)
    state.queue = np.concatenate([state.queue, frames], axis=0)
    if state.queue.shape[0] <= 1:
        return np.zeros(0, dtype=F32)
    ready, state.queue = state.queue[:-1], state.queue[-1:]
    return _mg_process(state.gen, state, ready)


def mg_flush(state: MgState) -> np.ndarray:
    if state.flushed:
        raise StateError("mg_flush called twice")
    state.flushed = True
    if state.queue.shape[0] == 0:
        return np.zeros(0, dtype=F32)
    ready, state.queue = state.queue, state.queue[:0]
    return _mg_process(state.gen, state, ready)


# ---------------------------------------------------------------------------
# batch convenience wrapper


def vocode(
    spectrogram: np.ndarray,
    kind: str,
    cfg: Optional[StftConfig] = None,
    mg: Optional[MgGenerator] = None,
    gl_iters: int = 60,
) -> np.ndarray:
    """Batch wrapper over the streaming/offline paths; kind in {gl, ngl, mg}."""
    cfg = cfg or StftConfig()
    spectrogram = np.asarray(spectrogram, dtype=F32)
    kind = kind.lower()
    if kind == "ngl":
        return gl_offline(spectrogram, cfg, n_iters=gl_iters)
    if kind == "gl":
        state = GlState(cfg)
        chunks = [gl_stream_push(state, f) for f in spectrogram]
        chunks.append(gl_flush(state))
        return np.concatenate(chunks) if chunks else np.zeros(0, dtype=F32)
    if kind == "mg":
        if mg is None:
            raise ConfigError("vocode kind 'mg' requires a generator")
        state = MgState(mg)
        chunks = []
        for t in range(0, spectrogram.shape[0], 2):
            chunks.append(mg_stream_push(state, spectrogram[t: t + 2]))
        chunks.append(mg_flush(state))
        return np.concatenate(chunks) if chunks else np.zeros(0, dtype=F32)
    raise ConfigError(f"unknown vocoder kind {kind!r}")
