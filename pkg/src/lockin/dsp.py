"""Streaming dual-phase demodulation core.

Everything here runs at 64-bit float precision. The scalar functions are
the normative per-sample state transitions; the ``*_block`` variants are
vectorised equivalents used by the sample-loop for throughput (their
agreement with the scalar path is enforced by tests). State containers
are plain mutable dataclasses owned by a single caller, so every update
is a deterministic transition on explicit state and inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

TWO_PI = 2.0 * math.pi


class DspError(ValueError):
    """Parameter outside the demodulator's valid range."""


@dataclass(frozen=True)
class FilterCoefficient:
    """Exponential-filter weight together with the settings it encodes."""

    alpha: float
    tau: float  # filter time constant, seconds
    f_d: float  # digitisation rate, Hz


def compute_alpha(tau: float, f_d: float) -> FilterCoefficient:
    """Weight of the one-pole exponential filter for time constant ``tau``.

    The cutoff is f_c = 1/(2*pi*tau). With g = 2*pi*f_c/f_d the weight is

        alpha = cos(g) - 1 + sqrt(cos^2(g) - 4*cos(g) + 3)

    which tends to g in the small-g limit. The implied cutoff must sit
    below f_d/2 for the filter to make sense.
    """
    if tau <= 0.0:
        raise DspError(f"time constant must be positive, got {tau}")
    if f_d <= 0.0:
        raise DspError(f"digitisation rate must be positive, got {f_d}")
    g = 1.0 / (tau * f_d)  # 2*pi*f_c/f_d with f_c = 1/(2*pi*tau)
    if g >= math.pi:
        raise DspError(
            f"cutoff 1/(2*pi*{tau}) is not below half the rate {f_d}"
        )
    c = math.cos(g)
    alpha = c - 1.0 + math.sqrt(c * c - 4.0 * c + 3.0)
    return FilterCoefficient(alpha=alpha, tau=tau, f_d=f_d)


@dataclass(frozen=True)
class QuadraturePair:
    """In-phase / quadrature reference sample (prefactor-2 sinusoids)."""

    qx: float
    qy: float


def reference_pair(n: int, m: int, k: int = 1) -> QuadraturePair:
    """Reference pair for sample ``n`` of an ``m``-sample period, harmonic ``k``.

    qx = 2 sin(2*pi*k*n/m), qy = 2 cos(2*pi*k*n/m). The index is reduced
    modulo m before the trig call so the argument stays small at any n.
    """
    if m < 3:
        raise DspError(f"samples per period must be at least 3, got {m}")
    if k < 1:
        raise DspError(f"harmonic number must be at least 1, got {k}")
    if n < 0:
        raise DspError(f"sample index must be non-negative, got {n}")
    ang = (TWO_PI / m) * ((k * n) % m)
    return QuadraturePair(qx=2.0 * math.sin(ang), qy=2.0 * math.cos(ang))


def mix(s: float, q: QuadraturePair) -> tuple[float, float]:
    """Multiply one signal sample (mV) by the reference pair."""
    return (q.qx * s, q.qy * s)


def filter_step(state: float, value: float, alpha: float) -> float:
    """One exponential-average update; pure in its arguments."""
    if not 0.0 < alpha <= 1.0:
        raise DspError(f"filter weight must be in (0, 1], got {alpha}")
    return state + alpha * (value - state)


@dataclass
class HarmonicChannel:
    """Two-stage filter state for one detection harmonic. Units: mV."""

    k: int
    x1: float = 0.0
    y1: float = 0.0
    x2: float = 0.0
    y2: float = 0.0

    def reset(self) -> None:
        self.x1 = self.y1 = self.x2 = self.y2 = 0.0


def demod_update(
    channels: list[HarmonicChannel], s: float, n: int, m: int, alpha: float
) -> list[HarmonicChannel]:
    """Advance every channel by one sample: mix, then two cascaded filters."""
    if not channels:
        raise DspError("channel list must not be empty")
    if len({ch.k for ch in channels}) != len(channels):
        raise DspError("channel harmonics must be distinct")
    for ch in channels:
        q = reference_pair(n, m, ch.k)
        x0, y0 = mix(s, q)
        ch.x1 = filter_step(ch.x1, x0, alpha)
        ch.x2 = filter_step(ch.x2, ch.x1, alpha)
        ch.y1 = filter_step(ch.y1, y0, alpha)
        ch.y2 = filter_step(ch.y2, ch.y1, alpha)
    return channels


def amplitude_phase(x2: float, y2: float) -> tuple[float, float]:
    """Total amplitude and four-quadrant phase in (-pi, pi]; (0,0) -> (0,0)."""
    r2 = math.hypot(x2, y2)
    phi2 = math.atan2(y2, x2)
    if phi2 <= -math.pi:  # atan2(-0.0, x<0) lands on -pi
        phi2 += TWO_PI
    return (r2, phi2)


@dataclass(frozen=True)
class DemodOutput:
    """Settled demodulator reading: components plus polar form. Units: mV/rad."""

    x2: float
    y2: float
    r2: float
    phi2: float

    @classmethod
    def from_components(cls, x2: float, y2: float) -> "DemodOutput":
        r2, phi2 = amplitude_phase(x2, y2)
        return cls(x2=x2, y2=y2, r2=r2, phi2=phi2)


@dataclass
class SyncAccumulator:
    """Running one-period averager of the mixer outputs. Units: mV."""

    m: int
    sum_x: float = 0.0
    sum_y: float = 0.0
    count: int = 0

    def __post_init__(self) -> None:
        if self.m < 3:
            raise DspError(f"samples per period must be at least 3, got {self.m}")

    def reset(self) -> None:
        self.sum_x = self.sum_y = 0.0
        self.count = 0


def sync_update(
    acc: SyncAccumulator, x0: float, y0: float
) -> tuple[float, float] | None:
    """Accumulate one mixed sample; emit the period mean when it completes."""
    acc.sum_x += x0
    acc.sum_y += y0
    acc.count += 1
    if acc.count < acc.m:
        return None
    out = (acc.sum_x / acc.m, acc.sum_y / acc.m)
    acc.reset()
    return out


@dataclass
class NoiseTracker:
    """Exponentially weighted mean/variance of the amplitude output."""

    mean_r: float = 0.0  # mV
    var_r: float = 0.0  # mV^2

    def reset(self) -> None:
        self.mean_r = 0.0
        self.var_r = 0.0


def noise_update(tracker: NoiseTracker, r2: float, alpha: float) -> float:
    """Update the tracker with one amplitude sample; returns the std estimate.

    The squared deviation uses the mean from before this update, and the
    variance is clamped at zero to absorb rounding.
    """
    if not 0.0 < alpha <= 1.0:
        raise DspError(f"filter weight must be in (0, 1], got {alpha}")
    d = r2 - tracker.mean_r
    tracker.mean_r += alpha * d
    tracker.var_r = (1.0 - alpha) * (tracker.var_r + alpha * d * d)
    if tracker.var_r < 0.0:
        tracker.var_r = 0.0
    return math.sqrt(tracker.var_r)


def step_response_model(t, tau: float, r_inf: float):
    """Amplitude-vs-time of the two-stage filter after a step at t = 0.

    r_inf * (1 - exp(-t/tau) * (1 + t/tau)). Used as a fitting model and
    test oracle only, never in the signal path. Accepts scalars or arrays.
    """
    if tau <= 0.0:
        raise DspError(f"time constant must be positive, got {tau}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise DspError("time must be non-negative")
    u = t / tau
    out = r_inf * (1.0 - np.exp(-u) * (1.0 + u))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Vectorised block equivalents (used by the sample loop)


def reference_tables(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Sine/cosine lookup tables over one m-sample reference period.

    Entry j equals sin/cos(2*pi*j/m) exactly as the scalar path computes
    it, so table lookups reproduce ``reference_pair`` bit for bit.
    """
    if m < 3:
        raise DspError(f"samples per period must be at least 3, got {m}")
    ang = (TWO_PI / m) * np.arange(m, dtype=float)
    return np.sin(ang), np.cos(ang)


def ema_block(x: np.ndarray, alpha: float, state: float) -> tuple[np.ndarray, float]:
    """Exponential average of a block, starting from ``state``."""
    if len(x) == 0:
        return np.empty(0), state
    y, _ = lfilter(
        [alpha], [1.0, alpha - 1.0], x, zi=np.array([(1.0 - alpha) * state])
    )
    return y, float(y[-1])


def demod_block(
    channels: list[HarmonicChannel],
    s: np.ndarray,
    n0: int,
    m: int,
    alpha: float,
    tables: tuple[np.ndarray, np.ndarray] | None = None,
    series_for: int | None = None,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Vectorised ``demod_update`` over a block of samples.

    Channel states advance to the end of the block. When ``series_for``
    names a harmonic, that channel's per-sample (x2, y2) series are
    returned for downstream per-sample consumers.
    """
    if len(s) == 0:
        return (np.empty(0), np.empty(0)) if series_for is not None else None
    if tables is None:
        tables = reference_tables(m)
    sin_t, cos_t = tables
    n = np.arange(n0, n0 + len(s), dtype=np.int64)
    series = None
    for ch in channels:
        idx = (ch.k * n) % m
        x0 = (2.0 * sin_t[idx]) * s
        y0 = (2.0 * cos_t[idx]) * s
        x1, ch.x1 = ema_block(x0, alpha, ch.x1)
        x2, ch.x2 = ema_block(x1, alpha, ch.x2)
        y1, ch.y1 = ema_block(y0, alpha, ch.y1)
        y2, ch.y2 = ema_block(y1, alpha, ch.y2)
        if series_for is not None and ch.k == series_for:
            series = (x2, y2)
    return series


def mix_block(
    s: np.ndarray,
    n0: int,
    m: int,
    k: int,
    tables: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Mixer outputs (x0, y0) for a block of samples."""
    if tables is None:
        tables = reference_tables(m)
    sin_t, cos_t = tables
    idx = (k * np.arange(n0, n0 + len(s), dtype=np.int64)) % m
    return (2.0 * sin_t[idx]) * s, (2.0 * cos_t[idx]) * s


def sync_block(
    acc: SyncAccumulator, x0: np.ndarray, y0: np.ndarray
) -> list[tuple[float, float]]:
    """Vectorised ``sync_update`` over a block; returns emitted period means."""
    out: list[tuple[float, float]] = []
    m = acc.m
    pos = 0
    remaining = len(x0)
    # complete the partially filled period first
    need = m - acc.count
    if remaining < need:
        acc.sum_x += float(x0.sum())
        acc.sum_y += float(y0.sum())
        acc.count += remaining
        return out
    acc.sum_x += float(x0[:need].sum())
    acc.sum_y += float(y0[:need].sum())
    out.append((acc.sum_x / m, acc.sum_y / m))
    acc.reset()
    pos = need
    n_full = (len(x0) - pos) // m
    if n_full:
        bx = x0[pos : pos + n_full * m].reshape(n_full, m).sum(axis=1) / m
        by = y0[pos : pos + n_full * m].reshape(n_full, m).sum(axis=1) / m
        out.extend(zip(bx.tolist(), by.tolist()))
        pos += n_full * m
    if pos < len(x0):
        acc.sum_x = float(x0[pos:].sum())
        acc.sum_y = float(y0[pos:].sum())
        acc.count = len(x0) - pos
    return out


def noise_block(
    tracker: NoiseTracker, r2: np.ndarray, alpha: float
) -> np.ndarray:
    """Vectorised ``noise_update`` over an amplitude block; returns std series."""
    if len(r2) == 0:
        return np.empty(0)
    mean, mean_f = ema_block(r2, alpha, tracker.mean_r)
    prev_mean = np.empty_like(mean)
    prev_mean[0] = tracker.mean_r
    prev_mean[1:] = mean[:-1]
    d = r2 - prev_mean
    var, _ = lfilter(
        [(1.0 - alpha) * alpha],
        [1.0, alpha - 1.0],
        d * d,
        zi=np.array([(1.0 - alpha) * tracker.var_r]),
    )
    tracker.mean_r = mean_f
    tracker.var_r = max(float(var[-1]), 0.0)
    return np.sqrt(np.maximum(var, 0.0))
