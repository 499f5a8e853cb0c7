"""End-to-end orchestration: stream the encoder while audio arrives, then
stream decoder + vocoder after end-of-speech; plus the perturbation oracle
that measures encoder look-ahead empirically.

Front-end: 80 triangular mel filters over the power spectrum of 25 ms
windows at a 10 ms hop, log-compressed as log(max(x, 1e-5)).
"""
from __future__ import annotations

import wave as wave_module
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import decoder as dec_mod
from . import encoder as enc_mod
from . import vocoder as voc_mod
from .archdsl import ArchSpec, get_arch
from .errors import ConfigError, StateError
from .store import WeightStore

F32 = np.float32


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    win: int = 400  # 25 ms
    hop: int = 160  # 10 ms
    n_fft: int = 512
    fmin: float = 125.0
    fmax: float = 7600.0


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular filters, shape [n_fft/2 + 1, n_mels]."""
    n_bins = cfg.n_fft // 2 + 1
    freqs = np.linspace(0, cfg.sample_rate / 2, n_bins)
    mel_pts = np.linspace(_hz_to_mel(cfg.fmin), _hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    fb = np.zeros((n_bins, cfg.n_mels))
    for i in range(cfg.n_mels):
        lo, mid, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (freqs - lo) / max(mid - lo, 1e-9)
        down = (hi - freqs) / max(hi - mid, 1e-9)
        fb[:, i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb.astype(F32)


def log_mel(samples: np.ndarray, cfg: FrontendConfig, fb: Optional[np.ndarray] = None) -> np.ndarray:
    """Log-mel frames for every fully covered window; [T, n_mels]."""
    samples = np.asarray(samples, dtype=np.float64)
    fb = fb if fb is not None else mel_filterbank(cfg)
    if samples.shape[0] < cfg.win:
        return np.zeros((0, cfg.n_mels), dtype=F32)
    n = 1 + (samples.shape[0] - cfg.win) // cfg.hop
    w = voc_mod.hann(cfg.win)
    frames = np.zeros((n, cfg.n_mels), dtype=F32)
    for t in range(n):
        seg = samples[t * cfg.hop: t * cfg.hop + cfg.win] * w
        power = np.abs(np.fft.rfft(seg, n=cfg.n_fft)) ** 2
        frames[t] = np.log(np.maximum(power @ fb, 1e-5)).astype(F32)
    return frames


@dataclass
class Pipeline:
    encoder: enc_mod.Encoder
    decoder: dec_mod.Decoder
    vocoder_kind: str = "gl"
    stft_cfg: voc_mod.StftConfig = field(default_factory=voc_mod.StftConfig)
    frontend_cfg: FrontendConfig = field(default_factory=FrontendConfig)
    mg: Optional[voc_mod.MgGenerator] = None

    def __post_init__(self):
        if self.decoder.config.out_dim != self.stft_cfg.out_dim:
            raise ConfigError(
                f"decoder out_dim {self.decoder.config.out_dim} != "
                f"n_fft/2+1 = {self.stft_cfg.out_dim}"
            )
        if self.encoder.config.d_model != self.decoder.config.memory_dim:
            raise ConfigError("encoder output dim must equal decoder memory dim")
        if self.vocoder_kind == "mg" and self.mg is None:
            raise ConfigError("vocoder kind 'mg' needs generator weights")


def build_pipeline(
    arch: str | ArchSpec,
    seed: int = 42,
    vocoder: str = "gl",
    d_model: int = 64,
    n_heads: int = 4,
    lstm_units: int = 128,
    postnet_channels: int = 64,
    max_frames: int = 400,
    weights: Optional[WeightStore] = None,
) -> Pipeline:
    """Assemble a toy-scale pipeline with seeded or preloaded weights."""
    arch_spec = get_arch(arch) if isinstance(arch, str) else arch
    stft_cfg = voc_mod.StftConfig()
    enc_cfg = enc_mod.EncoderConfig(arch=arch_spec, d_model=d_model, n_heads=n_heads)
    dec_cfg = dec_mod.DecoderConfig(
        memory_dim=d_model,
        lstm_units=lstm_units,
        out_dim=stft_cfg.out_dim,
        postnet_channels=postnet_channels,
        max_frames=max_frames,
    )
    mg_cfg = voc_mod.MgConfig(in_dim=stft_cfg.out_dim)
    if weights is None:
        weights = WeightStore()
        enc_mod.init_encoder_weights(enc_cfg, seed, store=weights)
        dec_mod.init_decoder_weights(dec_cfg, seed + 1, store=weights)
        voc_mod.init_mg_weights(mg_cfg, seed + 2, store=weights)
    encoder = enc_mod.build_encoder(enc_cfg, weights)
    decoder = dec_mod.build_decoder(dec_cfg, weights)
    mg = voc_mod.MgGenerator(mg_cfg, weights, stft_cfg) if "voc.mg.in.w" in weights else None
    return Pipeline(
        encoder=encoder,
        decoder=decoder,
        vocoder_kind=vocoder.lower(),
        stft_cfg=stft_cfg,
        mg=mg,
    )


def pipeline_weights(pipeline: Pipeline) -> WeightStore:
    return pipeline.encoder.store


LISTENING = "listening"
GENERATING = "generating"
DONE = "done"


class StreamSession:
    """Single-owner per-utterance session.

    feed_audio during Listening converts samples to features and streams the
    encoder; end_of_speech flushes the encoder and runs the streaming
    decoder + vocoder, delivering audio chunks to the sink in order.
    """

    def __init__(self, pipeline: Pipeline, sink: Optional[Callable[[np.ndarray], None]] = None):
        self.pipeline = pipeline
        self.sink = sink
        self.phase = LISTENING
        self.enc_state = enc_mod.new_stream(pipeline.encoder)
        self.fb = mel_filterbank(pipeline.frontend_cfg)
        self.sample_buf = np.zeros(0, dtype=np.float64)
        self.samples_seen = 0
        self.frames_done = 0
        self.memory: List[np.ndarray] = []
        self.audio: List[np.ndarray] = []

    @property
    def memory_frames(self) -> np.ndarray:
        if not self.memory:
            return np.zeros((0, self.pipeline.encoder.config.d_model), dtype=F32)
        return np.concatenate(self.memory, axis=0)


def feed_audio(session: StreamSession, samples: np.ndarray) -> int:
    """Push raw samples; returns the number of new memory frames."""
    if session.phase != LISTENING:
        raise StateError(f"feed_audio in phase {session.phase}")
    cfg = session.pipeline.frontend_cfg
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    session.sample_buf = np.concatenate([session.sample_buf, samples])
    session.samples_seen += samples.shape[0]
    # frames are tied to absolute sample positions, so chunking cannot drift
    buf_start = session.samples_seen - session.sample_buf.shape[0]
    n_total = 0 if session.samples_seen < cfg.win else 1 + (session.samples_seen - cfg.win) // cfg.hop
    new = n_total - session.frames_done
    if new <= 0:
        emitted = enc_mod.encode_stream(
            session.pipeline.encoder, session.enc_state,
            np.zeros((0, cfg.n_mels), dtype=F32),
        )
    else:
        lo = session.frames_done * cfg.hop - buf_start
        feats = np.zeros((new, cfg.n_mels), dtype=F32)
        w = voc_mod.hann(cfg.win)
        for i in range(new):
            seg = session.sample_buf[lo + i * cfg.hop: lo + i * cfg.hop + cfg.win] * w
            power = np.abs(np.fft.rfft(seg, n=cfg.n_fft)) ** 2
            feats[i] = np.log(np.maximum(power @ session.fb, 1e-5)).astype(F32)
        session.frames_done = n_total
        emitted = enc_mod.encode_stream(session.pipeline.encoder, session.enc_state, feats)
        # drop samples no longer needed by any future frame
        keep_from = session.frames_done * cfg.hop - buf_start
        if keep_from > 0:
            session.sample_buf = session.sample_buf[keep_from:]
    if emitted.shape[0]:
        session.memory.append(emitted)
    return emitted.shape[0]


def end_of_speech(session: StreamSession) -> np.ndarray:
    """Flush the encoder, then stream decoder + vocoder; returns the waveform."""
    if session.phase != LISTENING:
        raise StateError(f"end_of_speech in phase {session.phase}")
    pipe = session.pipeline
    emitted = enc_mod.encode_stream(
        pipe.encoder, session.enc_state,
        np.zeros((0, pipe.frontend_cfg.n_mels), dtype=F32), final=True,
    )
    if emitted.shape[0]:
        session.memory.append(emitted)
    memory = session.memory_frames
    if memory.shape[0] == 0:
        session.phase = DONE
        raise StateError("end_of_speech with empty memory (no complete input frame)")
    session.phase = GENERATING

    kind = pipe.vocoder_kind
    gl_state = voc_mod.GlState(pipe.stft_cfg) if kind == "gl" else None
    mg_state = voc_mod.MgState(pipe.mg) if kind == "mg" else None
    ngl_frames: List[np.ndarray] = []

    def emit(samples: np.ndarray) -> None:
        if samples.shape[0] == 0:
            return
        session.audio.append(samples)
        if session.sink is not None:
            session.sink(samples)

    def on_frames(frames: np.ndarray) -> None:
        mags = np.maximum(frames, 0.0)
        if kind == "gl":
            for f in mags:
                emit(voc_mod.gl_stream_push(gl_state, f))
        elif kind == "mg":
            emit(voc_mod.mg_stream_push(mg_state, mags))
        else:
            ngl_frames.append(mags)

    dec_mod.decode(pipe.decoder, memory, mode="stream", sink=on_frames)
    if kind == "gl":
        emit(voc_mod.gl_flush(gl_state))
    elif kind == "mg":
        emit(voc_mod.mg_flush(mg_state))
    else:
        spec = np.concatenate(ngl_frames, axis=0) if ngl_frames else np.zeros((0, pipe.stft_cfg.out_dim), F32)
        emit(voc_mod.gl_offline(spec, pipe.stft_cfg))
    session.phase = DONE
    return np.concatenate(session.audio) if session.audio else np.zeros(0, dtype=F32)


def run_batch(pipeline: Pipeline, samples: np.ndarray) -> np.ndarray:
    """Non-streaming reference: encode_full, batch decode, batch vocode."""
    feats = log_mel(samples, pipeline.frontend_cfg)
    if feats.shape[0] == 0:
        raise StateError("input too short for a single feature frame")
    memory = enc_mod.encode_full(pipeline.encoder, feats)
    result = dec_mod.decode(pipeline.decoder, memory, mode="batch")
    mags = np.maximum(result.spectrogram, 0.0)
    return voc_mod.vocode(mags, pipeline.vocoder_kind, pipeline.stft_cfg, mg=pipeline.mg)


def measure_lookahead(
    encoder: enc_mod.Encoder, t_len: int, seed: int = 1234, eps: float = 1.0, tol: float = 1e-9
) -> int:
    """Perturbation oracle for the encoder's algorithmic look-ahead.

    Perturbs each input frame on channel 0 by eps and finds the earliest
    output frame that changes; the look-ahead is max over t of
    t - subsample * first_changed(t), in input frames.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((t_len, encoder.config.input_dim)).astype(F32)
    base = enc_mod.encode_full(encoder, x)
    s = encoder.subsample_factor
    best = 0
    for t in range(t_len):
        xp = x.copy()
        xp[t, 0] += eps
        out = enc_mod.encode_full(encoder, xp)
        changed = np.flatnonzero(np.abs(out - base).max(axis=1) > tol)
        if changed.size:
            best = max(best, t - s * int(changed[0]))
    return best


def perceived_delay(delay_ms: float, rtf: float) -> float:
    """Time from end-of-speech to first audio: algorithmic delay / RTF."""
    if rtf <= 0:
        raise ValueError(f"rtf must be positive, got {rtf}")
    return delay_ms / rtf


# ---------------------------------------------------------------------------
# WAV I/O (16-bit signed PCM, mono)


def write_wav(path, samples: np.ndarray, sample_rate: int = 16000) -> None:
    pcm = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = (pcm * 32767.0).astype("<i2")
    with wave_module.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave_module.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ConfigError("expected 16-bit mono PCM WAV")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return samples.astype(F32), rate


class WavSink:
    """Ordered PCM chunk writer implementing the audio sink contract."""

    def __init__(self, path, sample_rate: int = 16000):
        self._fh = wave_module.open(str(path), "wb")
        self._fh.setnchannels(1)
        self._fh.setsampwidth(2)
        self._fh.setframerate(sample_rate)

    def __call__(self, samples: np.ndarray) -> None:
        pcm = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
        pcm = (pcm * 32767.0).astype("<i2")
        self._fh.writeframes(pcm.tobytes())

    def close(self) -> None:
        self._fh.close()
