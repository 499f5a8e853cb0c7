"""Latency/RTF measurement harness and CSV/SVG report emitter.

Measurements are wall-clock per streaming call, single-threaded, on the
host CPU.  Published phone latencies and WERs are carried only as
annotations (see PAPER_REFERENCE); they are never asserted or recomputed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import decoder as dec_mod
from . import encoder as enc_mod
from . import vocoder as voc_mod
from . import runtime as rt
from .archdsl import DelayReport, NAMED_CONFIGS, analyze_delay, get_arch
from .errors import ConfigError
from .store import serialized_size


@dataclass
class BenchReport:
    name: str
    component: str  # encoder | decoder | vocoder | pipeline
    chunk_ms: float
    mean_ms: float
    median_ms: float
    p95_ms: float
    rtf: float
    model_size_bytes: int
    iterations: int
    warmup: int


@dataclass(frozen=True)
class PaperEntry:
    value: float
    unit: str
    source: str


#: Published reference numbers, keyed by metric; annotation-only.
PAPER_REFERENCE: Dict[str, PaperEntry] = {
    # WER [%] per system
    "wer.base": PaperEntry(14.7, "%", "non-streaming encoder + decoder, offline phase recovery"),
    "wer.sdec_ngl": PaperEntry(14.7, "%", "streaming decoder, offline phase recovery"),
    "wer.gl": PaperEntry(14.8, "%", "streaming decoder, streaming phase recovery"),
    "wer.mg": PaperEntry(16.0, "%", "streaming decoder, neural generator"),
    "wer.causal": PaperEntry(19.1, "%", "fully causal encoder"),
    "wer.lsa1": PaperEntry(17.6, "%", "look-ahead attention, depth 1"),
    "wer.lsa2": PaperEntry(16.4, "%", "look-ahead attention, depth 2"),
    "wer.lsa_ls2": PaperEntry(15.3, "%", "look-ahead attention + stackers, depth 2"),
    "wer.int8_gl": PaperEntry(15.4, "%", "int8 encoder + int8 decoder, streaming phase recovery"),
    "wer.int8_mg": PaperEntry(15.9, "%", "int8 encoder + int8 decoder, neural generator"),
    "wer.int4_gl": PaperEntry(15.6, "%", "int4 encoder + int8 decoder, streaming phase recovery"),
    "wer.int4_mg": PaperEntry(15.8, "%", "int4 encoder + int8 decoder, neural generator"),
    # published model sizes [MB]
    "size.encoder_f32": PaperEntry(436, "MB", "float32 encoder"),
    "size.encoder_int8": PaperEntry(111, "MB", "int8 encoder"),
    "size.encoder_int4": PaperEntry(70, "MB", "int4 encoder"),
    "size.sdec_gl_f32": PaperEntry(122, "MB", "float32 decoder, streaming phase recovery"),
    "size.sdec_gl_int8": PaperEntry(30, "MB", "int8 decoder, streaming phase recovery"),
    "size.sdec_mg_f32": PaperEntry(147, "MB", "float32 decoder + neural generator"),
    "size.sdec_mg_int8": PaperEntry(55, "MB", "int8 decoder + neural generator"),
    "size.gl": PaperEntry(0.1, "MB", "streaming phase recovery"),
    "size.mg": PaperEntry(25, "MB", "neural generator"),
    # published phone measurements (not reproducible here)
    "latency.encoder_f32": PaperEntry(40, "ms", "float32 encoder, 80 ms chunk, phone CPU"),
    "latency.encoder_int8": PaperEntry(32, "ms", "int8 encoder, 80 ms chunk, phone CPU"),
    "rtf.encoder_f32": PaperEntry(2.0, "x", "float32 encoder, phone CPU"),
    "rtf.encoder_int8": PaperEntry(2.5, "x", "int8 encoder, phone CPU"),
    "perceived_delay.encoder_f32": PaperEntry(400, "ms", "float32 encoder, phone CPU"),
    "perceived_delay.encoder_int8": PaperEntry(320, "ms", "int8 encoder, phone CPU"),
}

#: Config-name -> published WER, for plot annotations.
CONFIG_WER = {
    "causal": 19.1,
    "lsa1": 17.6,
    "lsa2": 16.4,
    "lsa_ls2": 15.3,
    "base": 14.7,
}


def paper_wer(config_name: str) -> Optional[float]:
    return CONFIG_WER.get(config_name.lower())


def _percentile(sorted_vals: List[float], q: float) -> float:
    if len(sorted_vals) == 1:
        return sorted_vals[0]
    pos = q * (len(sorted_vals) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(sorted_vals) - 1)
    return sorted_vals[lo] + (sorted_vals[hi] - sorted_vals[lo]) * (pos - lo)


def measure(
    call: Callable[[], None],
    chunk_ms: float,
    iters: int,
    warmup: int,
    name: str,
    component: str,
    model_size_bytes: int = 0,
) -> BenchReport:
    """Time `call` per iteration; warmup calls are excluded from stats."""
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    for _ in range(warmup):
        call()
    samples = []
    for _ in range(iters):
        t0 = time.perf_counter()
        call()
        samples.append((time.perf_counter() - t0) * 1000.0)
    samples.sort()
    mean = sum(samples) / len(samples)
    return BenchReport(
        name=name,
        component=component,
        chunk_ms=chunk_ms,
        mean_ms=mean,
        median_ms=_percentile(samples, 0.5),
        p95_ms=_percentile(samples, 0.95),
        rtf=chunk_ms / mean if mean > 0 else float("inf"),
        model_size_bytes=model_size_bytes,
        iterations=iters,
        warmup=warmup,
    )


def bench_component(
    part: str,
    arch: str = "lsa_ls2",
    iters: int = 20,
    warmup: int = 5,
    chunk_ms: Optional[float] = None,
    seed: int = 42,
    d_model: int = 64,
) -> BenchReport:
    """Build a toy component and benchmark one streaming call.

    Default chunk: 80 ms for the encoder, 25 ms (one decode step / one
    frame pair) for decoder, vocoder and pipeline.
    """
    part = part.lower()
    pipe = rt.build_pipeline(arch, seed=seed, d_model=d_model, vocoder="gl")
    rng = np.random.default_rng(seed)
    if part == "encoder":
        chunk_ms = chunk_ms if chunk_ms is not None else 80.0
        frames_per_chunk = max(1, int(round(chunk_ms / pipe.encoder.config.hop_ms)))
        feats = rng.standard_normal((frames_per_chunk, pipe.encoder.config.input_dim)).astype(np.float32)
        state = enc_mod.new_stream(pipe.encoder)

        def call():
            nonlocal state
            if state.finished or state.frames_in > 4000:
                state = enc_mod.new_stream(pipe.encoder)
            enc_mod.encode_stream(pipe.encoder, state, feats)

        size = serialized_size(_scoped(pipe.encoder.store, "enc."))
        return measure(call, chunk_ms, iters, warmup, arch, "encoder", size)
    if part == "decoder":
        chunk_ms = chunk_ms if chunk_ms is not None else 25.0
        memory = rng.standard_normal((64, pipe.encoder.config.d_model)).astype(np.float32)
        dec_state = dec_mod.init_state(pipe.decoder, memory.shape[0])

        def call():
            nonlocal dec_state
            if dec_state.steps > 4000:
                dec_state = dec_mod.init_state(pipe.decoder, memory.shape[0])
            dec_mod.decode_step(pipe.decoder, memory, dec_state)

        size = serialized_size(_scoped(pipe.decoder.store, "dec."))
        return measure(call, chunk_ms, iters, warmup, arch, "decoder", size)
    if part == "vocoder":
        chunk_ms = chunk_ms if chunk_ms is not None else 25.0
        frame = np.abs(rng.standard_normal(pipe.stft_cfg.out_dim)).astype(np.float32)
        gl_state = voc_mod.GlState(pipe.stft_cfg)

        def call():
            voc_mod.gl_stream_push(gl_state, frame)
            voc_mod.gl_stream_push(gl_state, frame)

        return measure(call, chunk_ms, iters, warmup, "gl", "vocoder", 0)
    if part == "pipeline":
        chunk_ms = chunk_ms if chunk_ms is not None else 25.0
        audio = rng.standard_normal(16000 // 4).astype(np.float32) * 0.1

        def call():
            session = rt.StreamSession(pipe)
            rt.feed_audio(session, audio)
            rt.end_of_speech(session)

        size = serialized_size(pipe.encoder.store)
        report = measure(call, chunk_ms, iters, warmup, arch, "pipeline", size)
        return report
    raise ConfigError(f"unknown component {part!r}")


def _scoped(store, prefix):
    from .store import WeightStore

    out = WeightStore()
    for name in store.names():
        if name.startswith(prefix):
            out.put_entry(name, store.entry(name))
    return out


# ---------------------------------------------------------------------------
# report emission

CSV_COLUMNS = [
    "name",
    "component",
    "chunk_ms",
    "mean_ms",
    "p95_ms",
    "rtf",
    "size_bytes",
    "lookahead_frames",
    "delay_ms",
    "perceived_delay_ms",
    "paper_wer",
]


def report_csv(
    reports: Sequence[BenchReport],
    delay_reports: Optional[Dict[str, DelayReport]] = None,
) -> str:
    delay_reports = delay_reports or {}
    lines = [",".join(CSV_COLUMNS)]
    for r in reports:
        d = delay_reports.get(r.name)
        wer = paper_wer(r.name)
        perceived = "" if d is None else f"{d.delay_ms / r.rtf:.3f}"
        row = [
            r.name,
            r.component,
            f"{r.chunk_ms:g}",
            f"{r.mean_ms:.3f}",
            f"{r.p95_ms:.3f}",
            f"{r.rtf:.3f}",
            str(r.model_size_bytes),
            "" if d is None else str(d.lookahead_frames),
            "" if d is None else f"{d.delay_ms:g}",
            perceived,
            "" if wer is None else f"{wer:g}",
        ]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def delay_quality_svg(points: Optional[Dict[str, tuple]] = None) -> str:
    """Scatter of algorithmic delay (x, ms) vs published WER (y, %).

    points: name -> (delay_ms, wer); defaults to every named config with a
    published WER, using the 10 ms-hop delay calculus.
    """
    if points is None:
        points = {}
        for name in NAMED_CONFIGS:
            wer = paper_wer(name)
            if wer is not None:
                points[name] = (analyze_delay(get_arch(name)).delay_ms, wer)
        points["base"] = (10000.0, CONFIG_WER["base"])
    width, height, margin = 640, 420, 60
    xs = [p[0] for p in points.values()]
    ys = [p[1] for p in points.values()]
    x_max = max(xs) * 1.1 or 1.0
    y_lo, y_hi = min(ys) - 0.5, max(ys) + 0.5

    def sx(x):
        return margin + (width - 2 * margin) * x / x_max

    def sy(y):
        return height - margin - (height - 2 * margin) * (y - y_lo) / (y_hi - y_lo)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 15}" text-anchor="middle" '
        f'font-size="14">algorithmic delay [ms]</text>',
        f'<text x="18" y="{height // 2}" font-size="14" '
        f'transform="rotate(-90 18 {height // 2})" text-anchor="middle">WER [%]</text>',
    ]
    for name in sorted(points):
        x, y = points[name]
        cx, cy = sx(x), sy(y)
        parts.append(
            f'<circle class="config-marker" cx="{cx:.1f}" cy="{cy:.1f}" r="5" fill="crimson"/>'
        )
        parts.append(
            f'<text x="{cx + 8:.1f}" y="{cy - 6:.1f}" font-size="12">{name} ({y:g}%)</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(
    reports: Sequence[BenchReport],
    delay_reports: Optional[Dict[str, DelayReport]],
    fmt: str,
    path,
) -> str:
    """Write the CSV table or the delay/quality SVG; returns the text."""
    if fmt == "csv":
        text = report_csv(reports, delay_reports)
    elif fmt == "svg":
        text = delay_quality_svg()
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return text
