"""Post-training quantization simulation.

Weights: per-output-channel symmetric int8 (scale = max|w|/127) or int4
(scale = max|w|/7), rounded half-away-from-zero and packed.  Activations:
per-site affine int8 calibrated from running min/max over calibration runs.
Inference stays in float32 with quantize-dequantize applied at weights and
activation sites (fake quantization).
"""
from __future__ import annotations

from dataclasses import replace
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import runtime as rt
from .errors import ConfigError
from .store import (
    DTYPE_F32,
    DTYPE_I4,
    DTYPE_I8,
    Entry,
    QuantParams,
    SCHEME_PER_CHANNEL_SYMMETRIC,
    WeightStore,
    pack_int4,
)
from .taps import ActTap, affine_qparams, round_half_away

QMAX = {8: 127, 4: 7}


def quantize_array(w: np.ndarray, bits: int):
    """Per-output-channel symmetric quantization along the last axis.

    Returns (codes int8 array, scales float32 [n_channels]); zero channels
    get scale 1 so dequantization is exact there.
    """
    if bits not in QMAX:
        raise ConfigError(f"unsupported bit width {bits}")
    qmax = QMAX[bits]
    absmax = np.abs(w).max(axis=tuple(range(w.ndim - 1))) if w.ndim > 1 else np.abs(w).max(keepdims=True)
    scales = np.where(absmax > 0, absmax / qmax, 1.0).astype(np.float32)
    codes = np.clip(round_half_away(w / scales), -qmax, qmax).astype(np.int8)
    return codes, scales


def quantize_entry(entry: Entry, bits: int) -> Entry:
    if entry.dtype != DTYPE_F32:
        raise ConfigError("only float32 tensors can be quantized")
    w = np.frombuffer(entry.payload, dtype=np.float32).reshape(entry.shape)
    codes, scales = quantize_array(w, bits)
    params = QuantParams(bits=bits, scheme=SCHEME_PER_CHANNEL_SYMMETRIC, scales=scales)
    if bits == 4:
        return Entry(DTYPE_I4, entry.shape, pack_int4(codes), params)
    return Entry(DTYPE_I8, entry.shape, codes.tobytes(), params)


def quantize_weights(store: WeightStore, bits: int, scope: Optional[str] = None) -> WeightStore:
    """New store with matrix/conv tensors in `scope` quantized.

    scope is a name prefix ("enc", "dec", ...); None or "all" targets every
    tensor.  Rank-1 tensors (biases, norms) stay float32.
    """
    out = WeightStore()
    for name in store.names():
        entry = store.entry(name)
        in_scope = scope in (None, "all") or name.startswith(scope.rstrip(".") + ".")
        if in_scope and entry.dtype == DTYPE_F32 and len(entry.shape) >= 2:
            out.put_entry(name, quantize_entry(entry, bits))
        else:
            out.put_entry(name, entry)
    return out


def calibrate_activations(
    pipeline: "rt.Pipeline", calibration_audio: Sequence[np.ndarray]
) -> Dict[str, QuantParams]:
    """Per-site affine int8 params from running min/max over the given runs."""
    if len(calibration_audio) == 0:
        raise ConfigError("calibration requires at least one utterance")
    tap = ActTap(mode="observe")
    pipeline.encoder.tap = tap
    pipeline.decoder.tap = tap
    if pipeline.mg is not None:
        pipeline.mg.tap = tap
    try:
        for audio in calibration_audio:
            rt.run_batch(pipeline, audio)
    finally:
        pipeline.encoder.tap = None
        pipeline.decoder.tap = None
        if pipeline.mg is not None:
            pipeline.mg.tap = None
    return {site: affine_qparams(lo, hi) for site, (lo, hi) in tap.ranges.items()}


def fake_quant_run(
    pipeline: "rt.Pipeline",
    store: WeightStore,
    act_params: Optional[Dict[str, QuantParams]],
    samples: np.ndarray,
) -> np.ndarray:
    """Float graph execution with quantize-dequantize weights and activations.

    `store` may hold quantized entries (dequantized on access).  With
    act_params None only the weights are fake-quantized; otherwise every
    tapped site must be covered (missing site -> KeyError naming it).
    """
    tap = ActTap(mode="apply", params=act_params) if act_params is not None else None
    quantized = rt.Pipeline(
        encoder=type(pipeline.encoder)(pipeline.encoder.config, store, tap=tap),
        decoder=type(pipeline.decoder)(pipeline.decoder.config, store, tap=tap),
        vocoder_kind=pipeline.vocoder_kind,
        stft_cfg=pipeline.stft_cfg,
        frontend_cfg=pipeline.frontend_cfg,
        mg=(
            type(pipeline.mg)(pipeline.mg.cfg, store, pipeline.stft_cfg, tap=tap)
            if pipeline.mg is not None
            else None
        ),
    )
    return rt.run_batch(quantized, samples)
