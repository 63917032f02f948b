"""Behavioural model of the analogue conditioning chain and ADC.

Signal path: programmable gain, +1.65 V level shift, 94 kHz one-pole
anti-alias low-pass, then unipolar 12-bit sampling over 0..3.3 V with
clip detection in the outer 2% of the range. ``code_to_signal`` refers
codes back to millivolts at the instrument input.

The anti-alias stage is a bilinear-discretised one pole. Run it at a
few-times-oversampled rate (the sample loop uses 4x) so its magnitude
and phase track the analogue response through 50 kHz; discretised at the
tick rate itself, a digital one pole cannot reproduce the analogue
roll-off that close to Nyquist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

PGA_GAINS = (0, 1, 2, 4, 8, 16, 32, 64)
FULL_SCALE_V = 3.3
OFFSET_V = 1.65
MAX_CODE = 4095
CLIP_FRACTION = 0.02
CLIP_LOW_V = CLIP_FRACTION * FULL_SCALE_V  # 0.066
CLIP_HIGH_V = FULL_SCALE_V - CLIP_FRACTION * FULL_SCALE_V  # 3.234

_CODE_PER_VOLT = MAX_CODE / FULL_SCALE_V
_MV_PER_CODE = FULL_SCALE_V * 1000.0 / MAX_CODE


class FrontEndError(ValueError):
    """Invalid front-end setting."""


def check_gain(gain: int) -> int:
    if gain not in PGA_GAINS:
        raise FrontEndError(f"gain {gain} not in {PGA_GAINS}")
    return gain


@dataclass
class FrontEndConfig:
    f_aa_hz: float = 94_000.0  # anti-alias cutoff
    oversample: int = 4  # anti-alias substeps per digitisation tick
    adc_noise_rms_v: float = 0.0  # optional additive sampling noise
    bypass: bool = False  # ideal path: skip conditioning and quantisation


@dataclass
class FrontEndState:
    """Anti-alias filter memory plus the most recent clip flags."""

    f_aa_hz: float = 94_000.0
    aa_state: float | None = None  # filter memory, volts; primed on first use
    clip_low: bool = False
    clip_high: bool = False


def _aa_coeffs(f_aa_hz: float, dt: float) -> tuple[float, float, float]:
    # bilinear transform of H(s) = w0/(s + w0)
    w0 = 2.0 * math.pi * f_aa_hz
    c = 2.0 / dt
    b0 = w0 / (c + w0)
    a1 = (w0 - c) / (c + w0)
    return b0, b0, a1


def condition(
    state: FrontEndState, v_in: float, gain: int, dt: float
) -> float:
    """Advance the conditioning chain one step of ``dt``; returns ADC-pin volts."""
    if dt <= 0.0:
        raise FrontEndError(f"dt must be positive, got {dt}")
    check_gain(gain)
    x = gain * v_in + OFFSET_V
    b0, b1, a1 = _aa_coeffs(state.f_aa_hz, dt)
    z = state.aa_state
    if z is None:
        # prime the filter settled at the mid-scale offset so power-on
        # does not latch a spurious clip
        z = (1.0 - b0) * OFFSET_V
    y = b0 * x + z
    state.aa_state = b1 * x - a1 * y
    return y


def condition_block(
    state: FrontEndState, v_in: np.ndarray, gain: int, dt: float
) -> np.ndarray:
    """Vectorised ``condition`` over a block of input samples."""
    if dt <= 0.0:
        raise FrontEndError(f"dt must be positive, got {dt}")
    check_gain(gain)
    if len(v_in) == 0:
        return np.empty(0)
    x = gain * v_in + OFFSET_V
    b0, b1, a1 = _aa_coeffs(state.f_aa_hz, dt)
    z = state.aa_state
    if z is None:
        z = (1.0 - b0) * OFFSET_V
    y, zf = lfilter([b0, b1], [1.0, a1], x, zi=np.array([z]))
    state.aa_state = float(zf[0])
    return y


def adc_sample(v_adc: float) -> tuple[int, bool, bool]:
    """Quantise one pin voltage to a 12-bit code plus clip flags."""
    clipped = min(max(v_adc, 0.0), FULL_SCALE_V)
    code = int(round(clipped * _CODE_PER_VOLT))
    return code, v_adc <= CLIP_LOW_V, v_adc >= CLIP_HIGH_V


def adc_block(v_adc: np.ndarray) -> tuple[np.ndarray, bool, bool]:
    """Quantise a block; clip flags are OR-ed over the block."""
    codes = np.rint(np.clip(v_adc, 0.0, FULL_SCALE_V) * _CODE_PER_VOLT)
    return (
        codes,
        bool(np.any(v_adc <= CLIP_LOW_V)),
        bool(np.any(v_adc >= CLIP_HIGH_V)),
    )


def code_to_signal(code: int, gain: int) -> float:
    """Input-referred millivolts for an ADC code at the given gain."""
    check_gain(gain)
    if gain == 0:
        raise FrontEndError("gain 0 disables the input; codes are not referable")
    return (code * _MV_PER_CODE - OFFSET_V * 1000.0) / gain


def code_to_signal_block(codes: np.ndarray, gain: int) -> np.ndarray:
    check_gain(gain)
    if gain == 0:
        raise FrontEndError("gain 0 disables the input; codes are not referable")
    return (codes * _MV_PER_CODE - OFFSET_V * 1000.0) / gain
