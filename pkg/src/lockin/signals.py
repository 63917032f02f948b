"""Deterministic test-signal synthesis.

Specs are small frozen dataclasses that compose: sines, squares, seeded
white noise, sums, and step envelopes, plus a drive that follows the
instrument's own square-wave stimulus output. Noise is counter-based:
the draw for digitisation tick ``n`` is a pure function of (seed, n), so
streams are reproducible, splittable, and independent of block sizes.
One fresh draw is made per digitisation tick; sub-tick evaluation points
hold the tick's value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

TWO_PI = 2.0 * math.pi
DEFAULT_TICK_RATE_HZ = 200_000.0


class SignalError(ValueError):
    """Invalid signal description."""


@dataclass(frozen=True)
class Sine:
    amplitude_mv: float
    frequency_hz: float
    phase_rad: float = 0.0

    def __post_init__(self) -> None:
        _check_amplitude(self.amplitude_mv)
        _check_frequency(self.frequency_hz)


@dataclass(frozen=True)
class Square:
    """Symmetric square wave of peak amplitude +/-A about zero."""

    amplitude_mv: float
    frequency_hz: float

    def __post_init__(self) -> None:
        _check_amplitude(self.amplitude_mv)
        _check_frequency(self.frequency_hz)


@dataclass(frozen=True)
class WhiteNoise:
    rms_mv: float
    seed: int = 0

    def __post_init__(self) -> None:
        _check_amplitude(self.rms_mv)


@dataclass(frozen=True)
class Sum:
    parts: tuple["SignalSpec", ...]


@dataclass(frozen=True)
class StepEnvelope:
    """Gates the inner signal off before ``t_on_s``."""

    inner: "SignalSpec"
    t_on_s: float = 0.0


@dataclass(frozen=True)
class ReferenceDriven:
    """Follows the instrument's square-wave stimulus output at +/-A.

    Ticks that land exactly on a level transition take the band-limited
    midpoint value (zero), so the sampled drive carries no phase of its
    own relative to the in-phase reference.
    """

    amplitude_mv: float

    def __post_init__(self) -> None:
        _check_amplitude(self.amplitude_mv)


SignalSpec = Union[Sine, Square, WhiteNoise, Sum, StepEnvelope, ReferenceDriven]


def _check_amplitude(a: float) -> None:
    if a < 0.0:
        raise SignalError(f"amplitude must be non-negative, got {a}")


def _check_frequency(f: float) -> None:
    if f <= 0.0:
        raise SignalError(f"frequency must be positive, got {f}")


def noise_draws(seed: int, start_tick: int, count: int) -> np.ndarray:
    """Standard-normal draws for ticks [start_tick, start_tick + count).

    Each counter step of the generator yields four 64-bit words; tick n
    maps to word n, and the top 53 bits become an open-interval uniform
    that is pushed through the inverse normal CDF.
    """
    if count <= 0:
        return np.empty(0)
    offset = start_tick % 4
    gen = Philox(key=seed, counter=[start_tick // 4, 0, 0, 0])
    words = gen.random_raw(offset + count)[offset:]
    u = (words >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54
    return ndtri(u)


def generate(
    spec: SignalSpec,
    t: float,
    tick_rate_hz: float = DEFAULT_TICK_RATE_HZ,
    ref_m: int | None = None,
) -> float:
    """Evaluate the spec at time ``t`` (seconds); returns millivolts.

    ``tick_rate_hz`` fixes the digitisation grid used for noise draws;
    ``ref_m`` supplies the reference period (samples) needed by
    ReferenceDriven specs.
    """
    if t < 0.0:
        raise SignalError(f"time must be non-negative, got {t}")
    if isinstance(spec, Sine):
        return spec.amplitude_mv * math.sin(
            TWO_PI * spec.frequency_hz * t + spec.phase_rad
        )
    if isinstance(spec, Square):
        frac = (spec.frequency_hz * t) % 1.0
        return spec.amplitude_mv if frac < 0.5 else -spec.amplitude_mv
    if isinstance(spec, WhiteNoise):
        tick = _tick_of(t, tick_rate_hz)
        return spec.rms_mv * float(noise_draws(spec.seed, tick, 1)[0])
    if isinstance(spec, Sum):
        return sum(generate(p, t, tick_rate_hz, ref_m) for p in spec.parts)
    if isinstance(spec, StepEnvelope):
        if t < spec.t_on_s:
            return 0.0
        return generate(spec.inner, t, tick_rate_hz, ref_m)
    if isinstance(spec, ReferenceDriven):
        if ref_m is None:
            raise SignalError("ReferenceDriven needs the reference period ref_m")
        pos = math.fmod(t * tick_rate_hz, ref_m)
        eps = 1e-6
        if pos < eps or abs(pos - ref_m / 2.0) < eps or pos > ref_m - eps:
            return 0.0
        return spec.amplitude_mv if pos < ref_m / 2.0 else -spec.amplitude_mv
    raise SignalError(f"unknown signal spec {spec!r}")


def _tick_of(t: float, tick_rate_hz: float) -> int:
    # valid times sit on the sub-tick grid; nudge past representation error
    return int(math.floor(t * tick_rate_hz + 1e-6))


def spec_seeds(spec: SignalSpec) -> list[int]:
    """Seeds of every noise component, in traversal order."""
    if isinstance(spec, WhiteNoise):
        return [spec.seed]
    if isinstance(spec, Sum):
        return [s for p in spec.parts for s in spec_seeds(p)]
    if isinstance(spec, StepEnvelope):
        return spec_seeds(spec.inner)
    return []


def reseed(spec: SignalSpec, seed: int) -> SignalSpec:
    """Copy of the spec with every noise seed replaced by ``seed``."""
    if isinstance(spec, WhiteNoise):
        return WhiteNoise(rms_mv=spec.rms_mv, seed=seed)
    if isinstance(spec, Sum):
        return Sum(parts=tuple(reseed(p, seed) for p in spec.parts))
    if isinstance(spec, StepEnvelope):
        return StepEnvelope(inner=reseed(spec.inner, seed), t_on_s=spec.t_on_s)
    return spec


class SignalSampler:
    """Evaluates a spec on the (possibly oversampled) digitisation grid.

    ``block(n0, n_ticks)`` returns ``n_ticks * oversample`` values in mV
    at instants (n0 + i/oversample) / tick_rate. Noise components draw
    once per tick and hold the value across the sub-instants.
    """

    def __init__(
        self,
        spec: SignalSpec,
        tick_rate_hz: float,
        oversample: int = 1,
        ref_m: int | None = None,
    ):
        if tick_rate_hz <= 0.0:
            raise SignalError(f"tick rate must be positive, got {tick_rate_hz}")
        if oversample < 1:
            raise SignalError(f"oversample must be at least 1, got {oversample}")
        self.spec = spec
        self.tick_rate_hz = tick_rate_hz
        self.oversample = oversample
        self.ref_m = ref_m

    def block(self, n0: int, n_ticks: int, ref_m: int | None = None) -> np.ndarray:
        r = self.oversample
        sub = np.arange(n0 * r, (n0 + n_ticks) * r, dtype=np.float64)
        t = sub / (r * self.tick_rate_hz)
        m = ref_m if ref_m is not None else self.ref_m
        return self._eval(self.spec, t, n0, n_ticks, m)

    def _eval(
        self,
        spec: SignalSpec,
        t: np.ndarray,
        n0: int,
        n_ticks: int,
        ref_m: int | None,
    ) -> np.ndarray:
        r = self.oversample
        if isinstance(spec, Sine):
            return spec.amplitude_mv * np.sin(
                TWO_PI * spec.frequency_hz * t + spec.phase_rad
            )
        if isinstance(spec, Square):
            frac = (spec.frequency_hz * t) % 1.0
            return np.where(frac < 0.5, spec.amplitude_mv, -spec.amplitude_mv)
        if isinstance(spec, WhiteNoise):
            z = noise_draws(spec.seed, n0, n_ticks)
            return np.repeat(spec.rms_mv * z, r)
        if isinstance(spec, Sum):
            out = np.zeros(len(t))
            for p in spec.parts:
                out += self._eval(p, t, n0, n_ticks, ref_m)
            return out
        if isinstance(spec, StepEnvelope):
            inner = self._eval(spec.inner, t, n0, n_ticks, ref_m)
            return np.where(t >= spec.t_on_s, inner, 0.0)
        if isinstance(spec, ReferenceDriven):
            if ref_m is None:
                raise SignalError("ReferenceDriven needs the reference period ref_m")
            # level transitions sit exactly on tick boundaries, which are
            # sub-instant multiples; resolve them at sub-instant precision
            period = ref_m * r
            rem = np.arange(n0 * r, (n0 + n_ticks) * r, dtype=np.int64) % period
            level = np.where(
                rem < period / 2, spec.amplitude_mv, -spec.amplitude_mv
            )
            level[(rem == 0) | (2 * rem == period)] = 0.0
            return level
        raise SignalError(f"unknown signal spec {spec!r}")
