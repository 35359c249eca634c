"""Numeric grounding for the reduced-precision devices.

Min-max INT8 affine quantization (symmetric and asymmetric) and
binary16 rounding, plus SQNR to compare degradation. These routines
justify treating precision loss as a per-device accuracy penalty
rather than simulating arithmetic per layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

FP16_MAX = 65504.0
QMIN, QMAX = -128, 127


class QuantError(ValueError):
    pass


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    symmetric: bool

    def __post_init__(self):
        if not (self.scale > 0) or not math.isfinite(self.scale):
            raise QuantError(f"scale must be a positive finite number, got {self.scale}")
        if not (QMIN <= self.zero_point <= QMAX):
            raise QuantError(f"zero_point must lie in [{QMIN}, {QMAX}], got {self.zero_point}")


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise QuantError("empty tensor")
    if not np.all(np.isfinite(arr)):
        raise QuantError("tensor contains non-finite values")
    return arr


def fit_quant_params(values, symmetric: bool = True) -> QuantParams:
    """Min-max INT8 parameters for a tensor.

    Symmetric: scale = max(|min|, |max|) / 127, zero_point = 0. An
    all-zero tensor gets scale 1. Asymmetric: scale = (max - min) / 255
    with zero_point placing the minimum at -128.
    """
    arr = _as_array(values)
    lo = float(arr.min())
    hi = float(arr.max())
    if symmetric:
        amax = max(abs(lo), abs(hi))
        scale = amax / 127.0 if amax > 0 else 1.0
        return QuantParams(scale=scale, zero_point=0, symmetric=True)
    span = hi - lo
    scale = span / 255.0 if span > 0 else 1.0
    zero_point = int(np.clip(-128 - round(lo / scale), QMIN, QMAX))
    return QuantParams(scale=scale, zero_point=zero_point, symmetric=False)


def quantize(values, params: QuantParams) -> np.ndarray:
    """INT8 codes for a tensor; round half to even, clamp to [-128, 127]."""
    arr = _as_array(values)
    codes = np.rint(arr / params.scale) + params.zero_point
    return np.clip(codes, QMIN, QMAX).astype(np.int32)


def dequantize(codes, params: QuantParams) -> np.ndarray:
    arr = np.asarray(codes, dtype=np.float64)
    return (arr - params.zero_point) * params.scale


def quantize_dequantize(values, params: QuantParams) -> np.ndarray:
    """Round-trip through INT8. Error is at most scale/2 when unclamped."""
    return dequantize(quantize(values, params), params)


def round_fp16(values) -> np.ndarray:
    """Round to binary16 (nearest even), saturating at +-65504."""
    arr = _as_array(values)
    with np.errstate(over="ignore"):
        out = arr.astype(np.float16).astype(np.float64)
    # values past the largest normal round to inf; the hardware saturates
    out = np.where(np.isposinf(out), FP16_MAX, out)
    out = np.where(np.isneginf(out), -FP16_MAX, out)
    return out


def sqnr(original, degraded) -> float:
    """Signal-to-quantization-noise ratio in dB; +inf for exact match."""
    orig = _as_array(original)
    deg = np.asarray(degraded, dtype=np.float64)
    if orig.shape != deg.shape:
        raise QuantError(f"shape mismatch: {orig.shape} vs {deg.shape}")
    if not np.all(np.isfinite(deg)):
        raise QuantError("degraded tensor contains non-finite values")
    signal = float(np.sum(orig * orig))
    if signal == 0.0:
        raise QuantError("SQNR undefined for an all-zero original tensor")
    noise = float(np.sum((orig - deg) ** 2))
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(signal / noise)


def fp16_spread_ulps(values) -> float:
    """Tensor spread measured in binary16 ulps at its magnitude.

    Used to skip near-constant tensors where comparing quantization
    formats is meaningless.
    """
    arr = _as_array(values)
    span = float(arr.max() - arr.min())
    amax = float(np.max(np.abs(arr)))
    if amax == 0.0:
        return 0.0
    ulp = float(np.spacing(np.float16(min(amax, FP16_MAX))))
    return span / ulp
