"""Autoregressive spectrogram decoder.

Per step: the previous frame pair goes through the PreNet; a
location-sensitive cross-attention (queried with the previous step's second
LSTM hidden state) produces a context; PreNet output + context drive two
LSTM layers; (LSTM2 output + context) project to two linear-spectrogram
frames of 12.5 ms each plus a stop probability.  The PostNet refines frames
as a residual, with causal convolutions in streaming mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import nn
from .errors import BuildError, ShapeError, StateError
from .store import WeightStore
from .taps import ActTap, tap_act

F32 = np.float32


@dataclass
class DecoderConfig:
    memory_dim: int = 64
    prenet_units: int = 256
    lstm_units: int = 128  # toy default; reference model uses 1024
    out_dim: int = 513
    frames_per_step: int = 2
    frame_ms: float = 12.5
    postnet_layers: int = 5
    postnet_kernel: int = 5
    postnet_channels: int = 64
    postnet_causal: bool = True
    att_conv_filters: int = 32
    att_conv_kernel: int = 31
    att_depth: int = 128
    max_frames: int = 400

    def __post_init__(self):
        if self.frames_per_step != 2:
            raise ShapeError("decoder emits exactly two frames per step")
        if self.postnet_layers != 5:
            raise ShapeError("PostNet has exactly 5 convolution layers")


def weight_shapes(config: DecoderConfig) -> Dict[str, Tuple[int, ...]]:
    c = config
    h, d, a = c.lstm_units, c.memory_dim, c.att_depth
    pc, pk = c.postnet_channels, c.postnet_kernel
    shapes: Dict[str, Tuple[int, ...]] = {
        "dec.prenet.1.w": (c.frames_per_step * c.out_dim, c.prenet_units),
        "dec.prenet.1.b": (c.prenet_units,),
        "dec.prenet.2.w": (c.prenet_units, c.prenet_units),
        "dec.prenet.2.b": (c.prenet_units,),
        "dec.att.wq": (h, a),
        "dec.att.wm": (d, a),
        "dec.att.wf": (c.att_conv_filters, a),
        "dec.att.v": (a,),
        "dec.att.b": (a,),
        "dec.att.conv": (c.att_conv_kernel, 2, c.att_conv_filters),
        "dec.lstm1.wx": (c.prenet_units + d, 4 * h),
        "dec.lstm1.wh": (h, 4 * h),
        "dec.lstm1.b": (4 * h,),
        "dec.lstm2.wx": (h, 4 * h),
        "dec.lstm2.wh": (h, 4 * h),
        "dec.lstm2.b": (4 * h,),
        "dec.proj.w": (h + d, c.frames_per_step * c.out_dim),
        "dec.proj.b": (c.frames_per_step * c.out_dim,),
        "dec.stop.w": (h + d, 1),
        "dec.stop.b": (1,),
    }
    dims = [c.out_dim] + [pc] * (c.postnet_layers - 1) + [c.out_dim]
    for i in range(c.postnet_layers):
        shapes[f"dec.postnet.{i + 1}.w"] = (pk, dims[i], dims[i + 1])
        shapes[f"dec.postnet.{i + 1}.b"] = (dims[i + 1],)
    return shapes


def init_decoder_weights(
    config: DecoderConfig, seed: int, store: Optional[WeightStore] = None
) -> WeightStore:
    rng = np.random.default_rng(seed)
    store = store if store is not None else WeightStore()
    for name, shape in weight_shapes(config).items():
        store.put(name, rng.uniform(-0.1, 0.1, size=shape).astype(F32))
    return store


class Decoder:
    def __init__(self, config: DecoderConfig, store: WeightStore, tap: Optional[ActTap] = None):
        self.config = config
        self.store = store
        self.tap = tap


def build_decoder(config: DecoderConfig, weights: Union[WeightStore, int]) -> Decoder:
    if isinstance(weights, int):
        weights = init_decoder_weights(config, seed=weights)
    for name, shape in weight_shapes(config).items():
        if name not in weights:
            raise BuildError(f"missing weight tensor {name!r}")
        got = weights.entry(name).shape
        if tuple(got) != shape:
            raise BuildError(f"weight tensor {name!r} has shape {got}, expected {shape}")
    return Decoder(config, weights)


def _t_linear(tap, site, x, w, b):
    x = tap_act(tap, site + ":in", x)
    return tap_act(tap, site + ":out", nn.linear(x, w, b))


def prenet(dec: Decoder, prev_frames: np.ndarray) -> np.ndarray:
    """Two linear+ReLU layers on the flattened previous frame pair."""
    s = dec.store
    x = np.asarray(prev_frames, dtype=F32).reshape(-1)
    h = nn.relu(_t_linear(dec.tap, "dec.prenet.1", x, s.f32("dec.prenet.1.w"), s.f32("dec.prenet.1.b")))
    return nn.relu(_t_linear(dec.tap, "dec.prenet.2", h, s.f32("dec.prenet.2.w"), s.f32("dec.prenet.2.b")))


def lsa_attend(
    dec: Decoder,
    query: np.ndarray,
    memory: np.ndarray,
    prev_alignment: np.ndarray,
    cum_alignment: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Location-sensitive attention over the encoded memory.

    e[m] = v . tanh(Wq q + Wm memory[m] + Wf F[m] + b) with F the same-padded
    convolution (kernel 31, 32 filters) of the stacked (previous, cumulative)
    alignments.  Returns (context, alignment).
    """
    if memory.ndim != 2 or memory.shape[0] < 1:
        raise ShapeError("lsa_attend requires a non-empty memory")
    s = dec.store
    m_len = memory.shape[0]
    loc = np.stack([prev_alignment, cum_alignment], axis=1).astype(F32)  # [M, 2]
    kernel = s.f32("dec.att.conv")
    pad = (kernel.shape[0] - 1) // 2
    # same-padded conv via the causal kernel: append `pad` zeros and shift
    padded = np.concatenate([loc, np.zeros((pad, 2), F32)], axis=0)
    full, _ = nn.causal_conv1d(padded, kernel, nn.ConvState.init(kernel.shape[0], 2))
    feats = full[pad: pad + m_len]
    energies = np.tanh(
        query @ s.f32("dec.att.wq")
        + memory @ s.f32("dec.att.wm")
        + feats @ s.f32("dec.att.wf")
        + s.f32("dec.att.b")
    ) @ s.f32("dec.att.v")
    energies -= energies.max()
    w = np.exp(energies)
    alignment = (w / w.sum()).astype(F32)
    context = alignment @ memory
    return context.astype(F32), alignment


@dataclass
class PostnetState:
    conv_states: List[nn.ConvState]


def init_postnet_state(config: DecoderConfig) -> PostnetState:
    dims = [config.out_dim] + [config.postnet_channels] * (config.postnet_layers - 1)
    return PostnetState(
        conv_states=[nn.ConvState.init(config.postnet_kernel, dims[i]) for i in range(config.postnet_layers)]
    )


def postnet(
    dec: Decoder,
    frames: np.ndarray,
    causal: bool,
    state: Optional[PostnetState] = None,
) -> np.ndarray:
    """5-layer convolutional refiner added to its input as a residual.

    Causal mode is chunkable with exact state threading; non-causal mode is
    batch-only and uses symmetric zero padding.
    """
    if not causal and state is not None:
        raise StateError("non-causal PostNet cannot use streaming states")
    c = dec.config
    frames = np.asarray(frames, dtype=F32)
    x = frames
    own_state = state if state is not None else init_postnet_state(c)
    pad = (c.postnet_kernel - 1) // 2
    for i in range(c.postnet_layers):
        kernel = dec.store.f32(f"dec.postnet.{i + 1}.w")
        bias = dec.store.f32(f"dec.postnet.{i + 1}.b")
        x = tap_act(dec.tap, f"dec.postnet.{i + 1}:in", x)
        if causal:
            x, own_state.conv_states[i] = nn.causal_conv1d(x, kernel, own_state.conv_states[i])
        else:
            padded = np.concatenate([x, np.zeros((pad, x.shape[1]), F32)])
            full, _ = nn.causal_conv1d(padded, kernel, nn.ConvState.init(c.postnet_kernel, x.shape[1]))
            # shift by `pad` so each output is centred on its input
            x = full[pad: pad + frames.shape[0]]
        x = x + bias
        x = tap_act(dec.tap, f"dec.postnet.{i + 1}:out", x)
        if i < c.postnet_layers - 1:
            x = np.tanh(x)
    return frames + x


@dataclass
class DecoderState:
    lstm1: nn.LstmState
    lstm2: nn.LstmState
    prev_frames: np.ndarray
    prev_alignment: np.ndarray
    cum_alignment: np.ndarray
    postnet: PostnetState
    steps: int = 0
    stopped: bool = False


def init_state(dec: Decoder, memory_len: int) -> DecoderState:
    c = dec.config
    return DecoderState(
        lstm1=nn.LstmState.init(c.lstm_units),
        lstm2=nn.LstmState.init(c.lstm_units),
        prev_frames=np.zeros((c.frames_per_step, c.out_dim), dtype=F32),
        prev_alignment=np.zeros(memory_len, dtype=F32),
        cum_alignment=np.zeros(memory_len, dtype=F32),
        postnet=init_postnet_state(c),
    )


def decode_step(
    dec: Decoder, memory: np.ndarray, state: DecoderState
) -> Tuple[np.ndarray, float, DecoderState]:
    """One autoregressive step: two new frames plus a stop probability."""
    if state.stopped:
        raise StateError("decode_step called after the stop flag was set")
    s = dec.store
    p = prenet(dec, state.prev_frames)
    context, alignment = lsa_attend(
        dec, state.lstm2.h, memory, state.prev_alignment, state.cum_alignment
    )
    state.cum_alignment = state.cum_alignment + alignment
    state.prev_alignment = alignment
    x1 = np.concatenate([p, context])
    x1 = tap_act(dec.tap, "dec.lstm1:in", x1)
    h1, state.lstm1 = nn.lstm_step(x1, state.lstm1, s.f32("dec.lstm1.wx"), s.f32("dec.lstm1.wh"), s.f32("dec.lstm1.b"))
    h1 = tap_act(dec.tap, "dec.lstm1:out", h1)
    h1 = tap_act(dec.tap, "dec.lstm2:in", h1)
    h2, state.lstm2 = nn.lstm_step(h1, state.lstm2, s.f32("dec.lstm2.wx"), s.f32("dec.lstm2.wh"), s.f32("dec.lstm2.b"))
    h2 = tap_act(dec.tap, "dec.lstm2:out", h2)
    hc = np.concatenate([h2, context])
    y = _t_linear(dec.tap, "dec.proj", hc, s.f32("dec.proj.w"), s.f32("dec.proj.b"))
    frames = y.reshape(dec.config.frames_per_step, dec.config.out_dim)
    stop_logit = _t_linear(dec.tap, "dec.stop", hc, s.f32("dec.stop.w"), s.f32("dec.stop.b"))
    stop_prob = float(nn.sigmoid(stop_logit)[0])
    state.prev_frames = frames
    state.steps += 1
    return frames, stop_prob, state


@dataclass
class DecodeResult:
    spectrogram: np.ndarray  # [2N, out_dim]
    steps: int
    truncated: bool


def decode(
    dec: Decoder,
    memory: np.ndarray,
    mode: str = "stream",
    sink=None,
    max_frames: Optional[int] = None,
    force_steps: Optional[int] = None,
) -> DecodeResult:
    """Run decode_step until stop_prob > 0.5 or the frame cap is reached.

    Stream mode pushes PostNet-refined frame pairs to `sink` immediately
    (causal PostNet required); batch mode applies the PostNet at the end.
    """
    memory = np.asarray(memory, dtype=F32)
    if memory.ndim != 2 or memory.shape[0] < 1:
        raise ShapeError("decode requires a non-empty memory")
    if mode not in ("stream", "batch"):
        raise ValueError(f"unknown decode mode {mode!r}")
    causal = dec.config.postnet_causal
    if mode == "stream" and not causal:
        raise StateError("streaming decode requires a causal PostNet")
    cap = max_frames if max_frames is not None else dec.config.max_frames
    state = init_state(dec, memory.shape[0])
    raw: List[np.ndarray] = []
    out: List[np.ndarray] = []
    truncated = False
    while True:
        frames, stop_prob, state = decode_step(dec, memory, state)
        raw.append(frames)
        if mode == "stream":
            refined = postnet(dec, frames, causal=True, state=state.postnet)
            out.append(refined)
            if sink is not None:
                sink(refined)
        total = dec.config.frames_per_step * state.steps
        if force_steps is not None:
            if state.steps >= force_steps:
                break
        elif stop_prob > 0.5:
            state.stopped = True
            break
        if total >= cap:
            truncated = True
            break
    if mode == "batch":
        spectrogram = postnet(dec, np.concatenate(raw, axis=0), causal=causal)
    else:
        spectrogram = np.concatenate(out, axis=0)
    return DecodeResult(spectrogram=spectrogram.astype(F32), steps=state.steps, truncated=truncated)
