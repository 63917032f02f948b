"""Digitisation scheduling for internal and external referencing.

Internal mode pins the reference to an exact integer fraction of the
digitisation rate. External mode derives the sample clock from a 64x
frequency multiplier locked to an incoming TTL signal, choosing an
undersampling factor so the effective rate stays at or below the ADC
limit of 200 kHz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

ADC_MAX_RATE_HZ = 200_000.0
REQUEST_RANGE_HZ = (1.0, 50_000.0)
DEFAULT_MEASURE_WINDOW_S = 0.5  # resolves 2 Hz at the bottom of the lock range
DEFAULT_LOCK_RANGE_HZ = (130.0, 6_000.0)

# (inclusive upper frequency bound, undersampling factor N); samples per
# TTL cycle is 64/N, with N = 0.5 meaning both-edges sampling (128).
EXTERNAL_LADDER: tuple[tuple[float, float], ...] = (
    (1_562.5, 0.5),
    (3_125.0, 1.0),
    (6_250.0, 2.0),
    (12_500.0, 4.0),
    (25_000.0, 8.0),
    (50_000.0, 16.0),
)


class ScheduleError(ValueError):
    """Requested frequency cannot be scheduled."""


class LockFailure(RuntimeError):
    """The external reference cannot be measured or locked."""


@dataclass(frozen=True)
class InternalSchedule:
    f_d: float  # digitisation rate, Hz
    m: int  # samples per reference period
    f_r_actual: float  # realised reference frequency, Hz


@dataclass(frozen=True)
class ExternalSchedule:
    f_ext: float  # measured TTL frequency, Hz
    samples_per_period: int  # 64/N
    undersampling: float  # N
    f_d_effective: float  # Hz


def plan_internal(f_requested: float, f_d: float) -> InternalSchedule:
    """Round the request onto the digitisation grid: m = round(f_d / f)."""
    if f_d <= 0.0:
        raise ScheduleError(f"digitisation rate must be positive, got {f_d}")
    lo, hi = REQUEST_RANGE_HZ
    if not lo <= f_requested <= hi:
        raise ScheduleError(
            f"reference frequency {f_requested} Hz outside [{lo}, {hi}] Hz"
        )
    m = max(int(round(f_d / f_requested)), 3)
    return InternalSchedule(f_d=f_d, m=m, f_r_actual=f_d / m)


def plan_external(f_ext: float) -> ExternalSchedule:
    """Pick the undersampling rung that maximises the rate within 200 kHz."""
    if f_ext <= 0.0:
        raise ScheduleError(f"TTL frequency must be positive, got {f_ext}")
    for bound, n in EXTERNAL_LADDER:
        if f_ext <= bound:
            spp = int(round(64 / n))
            return ExternalSchedule(
                f_ext=f_ext,
                samples_per_period=spp,
                undersampling=n,
                f_d_effective=spp * f_ext,
            )
    raise ScheduleError(f"TTL frequency {f_ext} Hz above the 50 kHz ladder")


def reference_square(n: int, m: int) -> bool:
    """Stimulus square-wave level at sample ``n``: high for the first half-period."""
    if m < 3:
        raise ScheduleError(f"samples per period must be at least 3, got {m}")
    if n < 0:
        raise ScheduleError(f"sample index must be non-negative, got {n}")
    return (n % m) < m / 2


def measure_external_frequency(
    ttl_edges,
    window_s: float,
    lock_range_hz: tuple[float, float] = DEFAULT_LOCK_RANGE_HZ,
) -> float:
    """Rising-edge count over the window; raises LockFailure when unusable."""
    if window_s <= 0.0:
        raise ScheduleError(f"window must be positive, got {window_s}")
    count = len(list(ttl_edges))
    if count < 2:
        raise LockFailure(f"only {count} rising edge(s) in {window_s} s window")
    freq = count / window_s
    lo, hi = lock_range_hz
    if not lo <= freq <= hi:
        raise LockFailure(
            f"measured {freq:.1f} Hz outside multiplier lock range [{lo}, {hi}] Hz"
        )
    return freq


def simulated_edges(f_ttl: float, window_s: float) -> list[float]:
    """Rising-edge timestamps of an ideal TTL train starting at t = 0."""
    if f_ttl <= 0.0:
        return []
    count = max(int(math.ceil(window_s * f_ttl - 1e-9)), 0)
    return [k / f_ttl for k in range(count)]
