"""Activation taps: observation and fake-quantization hooks at op boundaries.

Model code calls `tap_act(tap, site, x)` on the input and output of every
linear / convolution / LSTM.  With no tap installed this is a no-op; in
observe mode the tap records per-site min/max; in apply mode it runs the
activation through quantize-dequantize using previously calibrated params.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .store import QuantParams, SCHEME_PER_TENSOR_AFFINE


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def fake_quant_affine(x: np.ndarray, scale: float, zero_point: int) -> np.ndarray:
    q = np.clip(round_half_away(x / np.float32(scale)) + zero_point, -128, 127)
    return ((q - zero_point) * np.float32(scale)).astype(np.float32)


def affine_qparams(lo: float, hi: float) -> QuantParams:
    """int8 affine params from an observed range; degenerate ranges are widened."""
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if hi - lo < 1e-6:
        lo, hi = lo - 1e-3, hi + 1e-3
    scale = (hi - lo) / 255.0
    zp = int(np.clip(-128 - round_half_away(np.float64(lo / scale)), -128, 127))
    return QuantParams(
        bits=8,
        scheme=SCHEME_PER_TENSOR_AFFINE,
        scales=np.array([scale], dtype=np.float32),
        zero_points=np.array([zp], dtype=np.int32),
    )


@dataclass
class ActTap:
    """Per-site activation hook; mode is "observe" or "apply"."""

    mode: str = "observe"
    ranges: Dict[str, tuple] = field(default_factory=dict)
    params: Dict[str, QuantParams] = field(default_factory=dict)

    def __call__(self, site: str, x: np.ndarray) -> np.ndarray:
        if self.mode == "observe":
            lo = float(x.min()) if x.size else 0.0
            hi = float(x.max()) if x.size else 0.0
            if site in self.ranges:
                plo, phi = self.ranges[site]
                self.ranges[site] = (min(plo, lo), max(phi, hi))
            else:
                self.ranges[site] = (lo, hi)
            return x
        if site not in self.params:
            raise KeyError(f"no activation quant params for site {site!r}")
        p = self.params[site]
        return fake_quant_affine(x, float(p.scales[0]), int(p.zero_points[0]))


def tap_act(tap: Optional[ActTap], site: str, x: np.ndarray) -> np.ndarray:
    return tap(site, x) if tap is not None else x
