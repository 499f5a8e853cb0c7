"""Self-contained acceptance checks for the whole engine.

Each check builds its own toy-scale models, exercises one advertised
guarantee and returns (ok, detail).  `run_selftest` prints one line per
check; the same functions back the test suite and the service endpoint.
"""
from __future__ import annotations

import io
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import bench as bench_mod
from . import decoder as dec_mod
from . import encoder as enc_mod
from . import quant as quant_mod
from . import runtime as rt
from . import store as store_mod
from . import vocoder as voc_mod
from .archdsl import NAMED_CONFIGS, analyze_delay, get_arch, parse_arch, render_arch

F32 = np.float32

EXPECTED_LOOKAHEAD = {
    "causal": 0,
    "ls1": 11,
    "lsa1": 20,
    "ls2": 37,
    "lsa_ls1": 41,
    "lsa2": 80,
    "lsa_ls2": 99,
}


def _small_encoder(name: str, d_model: int = 16, n_heads: int = 2) -> enc_mod.Encoder:
    cfg = enc_mod.EncoderConfig(arch=get_arch(name), d_model=d_model, n_heads=n_heads)
    return enc_mod.build_encoder(cfg, 7)


def check_stream_batch_encoder() -> Tuple[bool, str]:
    """Chunked streaming equals whole-utterance encoding for every config."""
    rng = np.random.default_rng(0)
    t_len = 160
    worst = 0.0
    for name in NAMED_CONFIGS:
        enc = _small_encoder(name)
        feats = rng.standard_normal((t_len, enc.config.input_dim)).astype(F32)
        batch = enc_mod.encode_full(enc, feats)
        state = enc_mod.new_stream(enc)
        outs = []
        pos = 0
        for size in (1, 7, 16, 3, 40, 25):
            outs.append(enc_mod.encode_stream(enc, state, feats[pos:pos + size]))
            pos += size
        outs.append(enc_mod.encode_stream(enc, state, feats[pos:], final=True))
        streamed = np.concatenate(outs, axis=0)
        if streamed.shape != batch.shape:
            return False, f"{name}: shape {streamed.shape} vs {batch.shape}"
        diff = float(np.abs(streamed - batch).max())
        worst = max(worst, diff)
        if diff > 1e-4:
            return False, f"{name}: max |stream - batch| = {diff:.2e} > 1e-4"
    return True, f"7 configs, T={t_len}, max diff {worst:.2e} <= 1e-4"


def check_lookahead_oracle() -> Tuple[bool, str]:
    """Perturbation-measured look-ahead equals the analytic delay walk."""
    for name, expected in EXPECTED_LOOKAHEAD.items():
        spec = get_arch(name)
        report = analyze_delay(spec)
        if report.lookahead_frames != expected:
            return False, f"{name}: analytic {report.lookahead_frames} != {expected}"
        enc = _small_encoder(name)
        t_len = max(32, 4 * expected)
        measured = rt.measure_lookahead(enc, t_len)
        if measured != expected:
            return False, f"{name}: measured {measured} != analytic {expected}"
    d = {k: analyze_delay(get_arch(k)).lookahead_frames for k in EXPECTED_LOOKAHEAD}
    if not (d["ls1"] < d["lsa1"] and d["ls2"] < d["lsa2"]):
        return False, "stacker look-ahead should undercut attention look-ahead"
    return True, "measured == analytic on 7 configs; LS < LSA at both depths"


def check_arch_dsl() -> Tuple[bool, str]:
    """Named configs parse, round-trip through the renderer, and have 17 blocks."""
    for name, text in NAMED_CONFIGS.items():
        spec = parse_arch(text, name=name)
        if spec.cb_count != 17:
            return False, f"{name}: {spec.cb_count} conformer blocks, expected 17"
        rendered = render_arch(spec)
        if parse_arch(rendered) != spec:
            return False, f"{name}: render/parse round-trip changed the architecture"
    return True, "7 configs parse, round-trip, and contain 17 conformer blocks"


def check_stream_batch_decoder() -> Tuple[bool, str]:
    """Streaming decode (postnet threaded per step) equals batch decode."""
    cfg = dec_mod.DecoderConfig(memory_dim=16, lstm_units=32, out_dim=129,
                                postnet_channels=8, prenet_units=32)
    dec = dec_mod.build_decoder(cfg, 11)
    rng = np.random.default_rng(5)
    memory = rng.standard_normal((30, cfg.memory_dim)).astype(F32)
    chunks: List[np.ndarray] = []
    res_s = dec_mod.decode(dec, memory, mode="stream", sink=chunks.append, force_steps=20)
    res_b = dec_mod.decode(dec, memory, mode="batch", force_steps=20)
    streamed = np.concatenate(chunks, axis=0)
    if streamed.shape[0] < 40:
        return False, f"only {streamed.shape[0]} frames decoded, need >= 40"
    if streamed.shape != res_b.spectrogram.shape:
        return False, f"shape {streamed.shape} vs {res_b.spectrogram.shape}"
    diff = float(np.abs(streamed - res_b.spectrogram).max())
    if diff > 1e-5:
        return False, f"max |stream - batch| = {diff:.2e} > 1e-5"
    if res_s.steps != 20 or streamed.shape[0] != 2 * res_s.steps:
        return False, "decoder must emit exactly two frames per step"
    return True, f"{streamed.shape[0]} frames, max diff {diff:.2e} <= 1e-5"


def _spec_snr_db(mags: np.ndarray, wave: np.ndarray, cfg: voc_mod.StftConfig) -> float:
    """Reconstruction SNR in the spectrogram domain (target vs re-analyzed)."""
    return -20.0 * np.log10(max(voc_mod.spectral_convergence(mags, wave, cfg), 1e-10))


def check_vocoders() -> Tuple[bool, str]:
    cfg = voc_mod.StftConfig()
    t = np.arange(8000)
    sine = (0.6 * np.sin(2 * np.pi * 440.0 * t / cfg.sample_rate)).astype(np.float64)
    mags, _ = voc_mod.stft(sine, cfg)

    # streaming delay: first push emits nothing, second emits exactly one hop
    st = voc_mod.GlState(cfg)
    if st.delay_frames != 1:
        return False, f"GL delay is {st.delay_frames} frames, expected 1"
    first = voc_mod.gl_stream_push(st, mags[0])
    second = voc_mod.gl_stream_push(st, mags[1])
    if first.shape[0] != 0 or second.shape[0] != cfg.hop:
        return False, f"GL warm-up emitted {first.shape[0]}/{second.shape[0]} samples"
    chunks = [first, second]
    for f in mags[2:]:
        chunks.append(voc_mod.gl_stream_push(st, f))
    chunks.append(voc_mod.gl_flush(st))
    streamed = np.concatenate(chunks)

    snr_stream = _spec_snr_db(mags, streamed.astype(np.float64), cfg)
    offline = voc_mod.gl_offline(mags, cfg, n_iters=60)
    snr_off = _spec_snr_db(mags, offline.astype(np.float64), cfg)
    if snr_stream < 10.0:
        return False, f"streaming GL SNR {snr_stream:.1f} dB < 10 dB"
    if snr_off < 20.0:
        return False, f"offline GL SNR {snr_off:.1f} dB < 20 dB"
    if snr_stream < snr_off - 6.0:
        return False, f"streaming GL SNR {snr_stream:.1f} dB trails offline by > 6 dB"

    mg_cfg = voc_mod.MgConfig(in_dim=cfg.out_dim)
    gen = voc_mod.MgGenerator(mg_cfg, voc_mod.init_mg_weights(mg_cfg, 3), cfg)
    frames = np.abs(np.random.default_rng(9).standard_normal((12, cfg.out_dim))).astype(F32)
    batch = voc_mod.mg_batch(gen, frames)
    state = voc_mod.MgState(gen)
    parts = [voc_mod.mg_stream_push(state, frames[i:i + 2]) for i in range(0, 12, 2)]
    parts.append(voc_mod.mg_flush(state))
    mg_streamed = np.concatenate(parts)
    mg_diff = float(np.abs(mg_streamed - batch).max())
    if mg_streamed.shape != batch.shape or mg_diff > 1e-5:
        return False, f"MG stream/batch diff {mg_diff:.2e} > 1e-5"
    return True, (
        f"GL delay 1 hop; SNR stream {snr_stream:.1f} dB / offline {snr_off:.1f} dB; "
        f"MG stream==batch diff {mg_diff:.2e}"
    )


def check_chunk_invariance() -> Tuple[bool, str]:
    """The session output does not depend on how the input audio is chunked."""
    pipe = rt.build_pipeline("lsa1", seed=21, d_model=32, max_frames=120)
    rng = np.random.default_rng(2)
    audio = (0.2 * rng.standard_normal(16000)).astype(F32)

    def run(chunk_sizes):
        session = rt.StreamSession(pipe)
        pos = 0
        for c in chunk_sizes:
            rt.feed_audio(session, audio[pos:pos + c])
            pos += c
        if pos < audio.shape[0]:
            rt.feed_audio(session, audio[pos:])
        return rt.end_of_speech(session)

    wave_a = run([16000])
    wave_b = run([160] * 100)
    wave_c = run([1333] * 12)
    if wave_a.shape != wave_b.shape or wave_a.shape != wave_c.shape:
        return False, f"lengths differ: {wave_a.shape} {wave_b.shape} {wave_c.shape}"
    diff = max(float(np.abs(wave_a - wave_b).max()), float(np.abs(wave_a - wave_c).max()))
    if diff > 1e-3:
        return False, f"waveform chunking difference {diff:.2e} > 1e-3"
    return True, f"1 s input, 3 chunkings, max waveform diff {diff:.2e} <= 1e-3"


def check_quantization() -> Tuple[bool, str]:
    cfg = enc_mod.EncoderConfig(arch=get_arch("causal"), d_model=64, n_heads=4)
    weights = enc_mod.init_encoder_weights(cfg, 13)
    size_f32 = store_mod.serialized_size(weights)
    results = {}
    for bits in (8, 4):
        q = quant_mod.quantize_weights(weights, bits)
        # dequantization error bound: half a step per element
        for name in weights.names():
            entry = q.entry(name)
            if entry.qparams is None:
                continue
            w = weights.f32(name)
            deq = q.f32(name)
            bound = entry.qparams.scales * 0.5 + 1e-7
            if np.any(np.abs(w - deq) > bound):
                worst = float(np.abs(w - deq).max())
                return False, f"{bits}-bit dequant error {worst:.2e} exceeds scale/2 on {name}"
        blob = store_mod.to_bytes(q)
        reloaded = store_mod.from_bytes(blob)
        if store_mod.to_bytes(reloaded) != blob or reloaded != q:
            return False, f"{bits}-bit store did not survive save/load bit-identically"
        results[bits] = len(blob) / size_f32
    if not (0.25 <= results[8] <= 0.30):
        return False, f"int8/f32 size ratio {results[8]:.3f} outside [0.25, 0.30]"
    if not (0.125 <= results[4] <= 0.20):
        return False, f"int4/f32 size ratio {results[4]:.3f} outside [0.125, 0.20]"
    return True, (
        f"dequant within scale/2; round-trip bit-identical; "
        f"ratios int8 {results[8]:.3f}, int4 {results[4]:.3f}"
    )


def check_perceived_delay() -> Tuple[bool, str]:
    a = rt.perceived_delay(800.0, 2.5)
    b = rt.perceived_delay(800.0, 2.0)
    if abs(a - 320.0) > 1e-9 or abs(b - 400.0) > 1e-9:
        return False, f"got {a} ms @ rtf 2.5 and {b} ms @ rtf 2.0"
    return True, "800 ms / rtf 2.5 = 320 ms; 800 ms / rtf 2.0 = 400 ms"


def check_bench_report() -> Tuple[bool, str]:
    report = bench_mod.bench_component("encoder", arch="causal", iters=3, warmup=1,
                                       d_model=16)
    if report.rtf <= 0:
        return False, f"rtf {report.rtf} not positive"
    if abs(report.rtf * report.mean_ms - report.chunk_ms) > 1e-6 * report.chunk_ms:
        return False, "rtf * mean_ms != chunk_ms"
    delays = {"causal": analyze_delay(get_arch("causal"))}
    csv_a = bench_mod.report_csv([report], delays)
    csv_b = bench_mod.report_csv([report], delays)
    if csv_a != csv_b:
        return False, "CSV emission is not deterministic"
    svg_a = bench_mod.delay_quality_svg()
    svg_b = bench_mod.delay_quality_svg()
    if svg_a != svg_b:
        return False, "SVG emission is not deterministic"
    for wer in ("19.1", "17.6", "16.4", "15.3", "14.7"):
        if wer not in svg_a:
            return False, f"SVG missing published WER annotation {wer}"
    return True, f"rtf {report.rtf:.2f}; CSV/SVG deterministic; WER annotations present"


CRITERIA: Dict[str, Callable[[], Tuple[bool, str]]] = {
    "stream_batch_encoder": check_stream_batch_encoder,
    "lookahead_oracle": check_lookahead_oracle,
    "arch_dsl": check_arch_dsl,
    "stream_batch_decoder": check_stream_batch_decoder,
    "vocoders": check_vocoders,
    "chunk_invariance": check_chunk_invariance,
    "quantization": check_quantization,
    "perceived_delay": check_perceived_delay,
    "bench_report": check_bench_report,
}


def run_selftest(
    names: Optional[List[str]] = None, out: Optional[io.TextIOBase] = None
) -> List[Tuple[str, bool, str]]:
    """Run the named checks (default all); prints one PASS/FAIL line each."""
    names = names or list(CRITERIA)
    unknown = [n for n in names if n not in CRITERIA]
    if unknown:
        raise ValueError(f"unknown checks: {', '.join(unknown)} "
                         f"(available: {', '.join(CRITERIA)})")
    results = []
    for name in names:
        try:
            ok, detail = CRITERIA[name]()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        print(line, file=out) if out is not None else print(line)
    return results
