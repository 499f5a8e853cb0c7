"""HTTP facade over the conversion engine.

Audio endpoints exchange raw 16-bit mono PCM WAV bytes in the request and
response bodies; structured endpoints use JSON.
"""
from __future__ import annotations

import io
import wave as wave_module

import numpy as np
from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse

from .. import __version__
from .. import bench as bench_mod
from .. import quant as quant_mod
from .. import runtime as rt
from .. import selftest as selftest_mod
from .. import store as store_mod
from ..archdsl import NAMED_CONFIGS, analyze_delay, get_arch, render_arch, validate
from ..errors import (
    BuildError,
    ConfigError,
    FormatError,
    ParseError,
    ShapeError,
    StateError,
)
from . import schemas

_CLIENT_ERRORS = (BuildError, ConfigError, FormatError, ParseError, ShapeError, ValueError)


def _wav_from_bytes(data: bytes) -> np.ndarray:
    try:
        with wave_module.open(io.BytesIO(data), "rb") as fh:
            if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
                raise ConfigError("expected 16-bit mono PCM WAV")
            raw = fh.readframes(fh.getnframes())
    except wave_module.Error as exc:
        raise ConfigError(f"not a valid WAV payload: {exc}") from exc
    return (np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0).astype(np.float32)


def _wav_to_bytes(samples: np.ndarray, sample_rate: int = 16000) -> bytes:
    buf = io.BytesIO()
    pcm = (np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * 32767.0).astype("<i2")
    with wave_module.open(buf, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())
    return buf.getvalue()


def _per_layer(spec, report) -> list:
    rows = []
    s = 1
    for (i, contrib), layer in zip(report.per_layer, spec.layers):
        label = f"{layer.kind}_R{layer.right}" if layer.right else layer.kind
        rows.append(schemas.LayerDelay(layer=f"{i}:{label}", lookahead_frames=contrib,
                                       subsample_before=s))
        if layer.kind == "SL":
            s *= 2
    return rows


def _config_info(name: str) -> schemas.ConfigInfo:
    spec = get_arch(name)
    report = analyze_delay(spec)
    return schemas.ConfigInfo(
        name=name,
        dsl=render_arch(spec),
        cb_count=spec.cb_count,
        sl_count=spec.sl_count,
        subsample_factor=spec.subsample_factor,
        lookahead_frames=report.lookahead_frames,
        delay_ms=report.delay_ms,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="streaming voice conversion service", version=__version__)

    def _client_error(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    for exc_type in _CLIENT_ERRORS:
        app.add_exception_handler(exc_type, _client_error)
    app.add_exception_handler(
        StateError,
        lambda request, exc: JSONResponse(status_code=409, content={"detail": str(exc)}),
    )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(version=__version__)

    @app.get("/configs", response_model=schemas.ConfigsResponse)
    def configs() -> schemas.ConfigsResponse:
        return schemas.ConfigsResponse(configs=[_config_info(n) for n in NAMED_CONFIGS])

    @app.post("/analyze", response_model=schemas.AnalyzeResponse)
    def analyze(req: schemas.AnalyzeRequest) -> schemas.AnalyzeResponse:
        spec = get_arch(req.arch)
        report = analyze_delay(spec, hop_ms=req.hop_ms)
        return schemas.AnalyzeResponse(
            name=spec.name,
            dsl=render_arch(spec),
            cb_count=spec.cb_count,
            sl_count=spec.sl_count,
            subsample_factor=spec.subsample_factor,
            lookahead_frames=report.lookahead_frames,
            delay_ms=report.delay_ms,
            per_layer=_per_layer(spec, report),
            findings=[
                schemas.FindingModel(level=f.level, code=f.code, message=f.message)
                for f in validate(spec)
            ],
        )

    @app.post("/convert")
    async def convert(
        request: Request,
        arch: str = Query("lsa1"),
        seed: int = Query(42),
        vocoder: str = Query("gl"),
        d_model: int = Query(32),
        max_frames: int = Query(200),
        chunk_samples: int = Query(1600),
    ) -> Response:
        samples = _wav_from_bytes(await request.body())
        pipe = rt.build_pipeline(arch, seed=seed, vocoder=vocoder,
                                 d_model=d_model, max_frames=max_frames)
        session = rt.StreamSession(pipe)
        for lo in range(0, samples.shape[0], max(1, chunk_samples)):
            rt.feed_audio(session, samples[lo:lo + chunk_samples])
        out = rt.end_of_speech(session)
        return Response(content=_wav_to_bytes(out), media_type="audio/wav")

    @app.post("/quantize")
    async def quantize(
        request: Request,
        bits: int = Query(8),
        scope: str = Query("all"),
    ) -> Response:
        store = store_mod.from_bytes(await request.body())
        quantized = quant_mod.quantize_weights(store, bits, scope)
        return Response(
            content=store_mod.to_bytes(quantized),
            media_type="application/octet-stream",
        )

    @app.post("/bench", response_model=schemas.BenchResponse)
    def bench(req: schemas.BenchRequest) -> schemas.BenchResponse:
        r = bench_mod.bench_component(
            req.part, arch=req.arch, iters=req.iters, warmup=req.warmup,
            chunk_ms=req.chunk_ms, seed=req.seed,
        )
        return schemas.BenchResponse(**r.__dict__)

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest) -> schemas.ReportResponse:
        reports = [bench_mod.BenchReport(**r.model_dump()) for r in req.reports]
        delays = {name: analyze_delay(get_arch(name)) for name in req.delay_archs}
        if req.fmt == "csv":
            text = bench_mod.report_csv(reports, delays)
        elif req.fmt == "svg":
            text = bench_mod.delay_quality_svg()
        else:
            raise ConfigError(f"unknown report format {req.fmt!r}")
        return schemas.ReportResponse(fmt=req.fmt, text=text)

    @app.post("/selftest", response_model=schemas.SelftestResponse)
    def selftest(req: schemas.SelftestRequest) -> schemas.SelftestResponse:
        results = selftest_mod.run_selftest(req.checks, out=io.StringIO())
        return schemas.SelftestResponse(
            passed=all(ok for _, ok, _ in results),
            results=[
                schemas.SelftestResult(name=n, passed=ok, detail=d)
                for n, ok, d in results
            ],
        )

    return app
