"""Experiment scenarios: deterministic end-to-end runs of the instrument.

Each scenario owns a fresh instrument driven in accelerated time, so
runs are bit-reproducible for a fixed configuration, signal, and seeds,
and independent runs can be dispatched in parallel. Settled values are
the mean of the trailing 10% of frames after a ten-time-constant wait;
detuned runs widen the window to an integer number of beat periods.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from . import dsp, frontend, timing
from .device import ExternalReference, Instrument, InstrumentConfig
from .frontend import FrontEndConfig
from .protocol import FRAME_INTERVAL_S, OutputFrame, format_frame, parse_frame
from .signals import (
    ReferenceDriven,
    SignalSampler,
    SignalSpec,
    Sine,
    Square,
    StepEnvelope,
    Sum,
    WhiteNoise,
    reseed,
)
from .transport import DeviceRunner

SETTLE_TIME_CONSTANTS = 10.0
ADC_HEADROOM_MV = 0.8 * frontend.OFFSET_V * 1000.0  # target peak at the PGA output


class LabError(ValueError):
    """Scenario cannot be built or evaluated."""


@dataclass
class Scenario:
    spec: SignalSpec
    duration_s: float
    config: InstrumentConfig = field(default_factory=InstrumentConfig)
    front_end: FrontEndConfig = field(default_factory=FrontEndConfig)
    external: ExternalReference | None = None
    commands: tuple[tuple[float, str], ...] = ()  # (time, line) at window edges


@dataclass
class ScenarioResult:
    times: list[float]
    frames: list[OutputFrame]
    analogue_v: list[float]

    def lines(self) -> list[str]:
        return [format_frame(f) for f in self.frames]

    def r1(self) -> np.ndarray:
        return np.array([f.r1 for f in self.frames])

    def phi1(self) -> np.ndarray:
        return np.array([f.phi1 for f in self.frames])


def run_scenario(scenario: Scenario) -> ScenarioResult:
    """Drive the full pipeline for the scenario's duration."""
    if scenario.duration_s <= 0.0:
        raise LabError(f"duration must be positive, got {scenario.duration_s}")
    runner = DeviceRunner(
        config=scenario.config,
        front_end=scenario.front_end,
        external=scenario.external,
        signal=scenario.spec,
    )
    pending = sorted(scenario.commands, key=lambda c: c[0])
    n_windows = int(round(scenario.duration_s / FRAME_INTERVAL_S))
    times: list[float] = []
    frames: list[OutputFrame] = []
    analogue: list[float] = []
    for k in range(n_windows):
        t_start = k * FRAME_INTERVAL_S
        while pending and pending[0][0] <= t_start + 1e-9:
            _, line = pending.pop(0)
            diagnostic = runner.submit(line)
            if diagnostic is not None and "lock failure" not in diagnostic:
                raise LabError(f"scenario command {line!r} rejected: {diagnostic}")
        runner.step_window()
        times.append((k + 1) * FRAME_INTERVAL_S)
        frames.append(runner.last_frame)
        analogue.append(runner.instrument.analogue.value_v)
    return ScenarioResult(times=times, frames=frames, analogue_v=analogue)


def settled_window_s(
    duration_s: float, beat_hz: float | None = None
) -> float:
    """Trailing averaging window: 10% of the run, widened to whole beats."""
    window = 0.1 * duration_s
    if beat_hz is not None and beat_hz > 0.0:
        beat_period = 1.0 / beat_hz
        window = max(1, math.ceil(window / beat_period)) * beat_period
    return window


def settled_amplitude(
    result: ScenarioResult, tau: float, beat_hz: float | None = None
) -> float:
    """Mean amplitude over the trailing window; requires a settled run."""
    t = np.array(result.times)
    window = settled_window_s(t[-1], beat_hz)
    start = t[-1] - window
    if start < SETTLE_TIME_CONSTANTS * tau - 1e-9:
        raise LabError(
            f"run of {t[-1]} s leaves no settled window after "
            f"{SETTLE_TIME_CONSTANTS} time constants of {tau} s"
        )
    mask = t > start + 1e-9
    return float(result.r1()[mask].mean())


def settled_phase(result: ScenarioResult, tau: float) -> float:
    """Circular-safe mean phase over the trailing window."""
    t = np.array(result.times)
    window = settled_window_s(t[-1])
    mask = t > t[-1] - window + 1e-9
    phi = result.phi1()[mask]
    return float(math.atan2(np.sin(phi).mean(), np.cos(phi).mean()))


def detuning_response(delta_f_hz, tau: float):
    """Settled amplitude ratio of the two-stage filter at a detuning."""
    x = 2.0 * math.pi * np.asarray(delta_f_hz, dtype=float) * tau
    out = 1.0 / (1.0 + x * x)
    return float(out) if out.ndim == 0 else out


# -- step response ------------------------------------------------------------


@dataclass(frozen=True)
class StepFit:
    r_inf: float  # mV
    tau_star: float  # seconds
    residual_rms: float  # mV


def fit_step_response(times, values, t0: float = 0.0) -> StepFit:
    """Least-squares fit of the two-stage step response for t > t0."""
    t = np.asarray(times, dtype=float)
    r = np.asarray(values, dtype=float)
    mask = t > t0
    if mask.sum() < 4:
        raise LabError("need at least 4 points after the step to fit")
    tt = t[mask] - t0
    rr = r[mask]
    r_inf0 = float(rr[-max(1, len(rr) // 10) :].mean())
    if r_inf0 <= 0.0:
        raise LabError("step fit needs a positive settled amplitude")
    # crude time-constant start: first crossing of the one-tau level (26.4%)
    level = 0.26424 * r_inf0
    above = np.nonzero(rr >= level)[0]
    tau0 = float(tt[above[0]]) if len(above) else float(tt[-1] / 4.0)
    tau0 = max(tau0, float(tt[0]) / 4.0)

    def model(t, r_inf, tau_star):
        return dsp.step_response_model(t, tau_star, r_inf)

    try:
        popt, _ = curve_fit(model, tt, rr, p0=[r_inf0, tau0], maxfev=10000)
    except RuntimeError as exc:
        raise LabError(f"step fit did not converge: {exc}") from None
    r_inf, tau_star = float(popt[0]), float(popt[1])
    if tau_star <= 0.0:
        raise LabError(f"step fit returned non-positive time constant {tau_star}")
    resid = rr - model(tt, *popt)
    return StepFit(
        r_inf=r_inf,
        tau_star=tau_star,
        residual_rms=float(np.sqrt(np.mean(resid * resid))),
    )


def run_step(
    tau: float,
    amplitude_mv: float = 380.0,
    frequency_hz: float = 1_000.0,
    duration_s: float | None = None,
    gain: int = 1,
) -> ScenarioResult:
    """Amplitude step from zero at t = 0, signal locked to the reference."""
    config = InstrumentConfig(
        reference_hz=frequency_hz, time_constant_s=tau, input_gain=gain
    )
    if duration_s is None:
        duration_s = max(2.0, (SETTLE_TIME_CONSTANTS + 3.0) * tau)
    spec = StepEnvelope(Sine(amplitude_mv, frequency_hz), t_on_s=0.0)
    return run_scenario(Scenario(spec=spec, duration_s=duration_s, config=config))


# -- frequency-response sweep ---------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    frequency_hz: float  # stimulus frequency
    detuning_hz: float
    amplitude_mv: float  # settled response
    ratio: float  # normalised to the on-tune peak


@dataclass(frozen=True)
class FrequencyResponse:
    reference_hz: float
    tau: float
    peak_mv: float
    points: tuple[SweepPoint, ...]
    delta_f_1pct_hz: float | None


def frequency_response_sweep(
    reference_hz: float,
    detunings_hz,
    tau: float,
    amplitude_mv: float = 250.0,
    gain: int = 1,
) -> FrequencyResponse:
    """Settled response versus detuning from the reference, plus the
    interpolated half-width where the response falls to 1% of peak."""
    config = InstrumentConfig(
        reference_hz=reference_hz, time_constant_s=tau, input_gain=gain
    )
    f_r = timing.plan_internal(reference_hz, config.sample_rate_hz).f_r_actual

    def settled_at(delta: float) -> float:
        beat = abs(delta) if delta else None
        window = settled_window_s(
            (SETTLE_TIME_CONSTANTS + 1.5) * tau, beat_hz=beat
        )
        duration = SETTLE_TIME_CONSTANTS * tau + window + 2.0 * FRAME_INTERVAL_S
        duration = math.ceil(duration / FRAME_INTERVAL_S) * FRAME_INTERVAL_S
        result = run_scenario(
            Scenario(
                spec=Sine(amplitude_mv, f_r + delta),
                duration_s=duration,
                config=config,
            )
        )
        return settled_amplitude(result, tau, beat_hz=beat)

    peak = settled_at(0.0)
    points = []
    for delta in detunings_hz:
        r = settled_at(float(delta))
        points.append(
            SweepPoint(
                frequency_hz=f_r + delta,
                detuning_hz=float(delta),
                amplitude_mv=r,
                ratio=r / peak,
            )
        )
    return FrequencyResponse(
        reference_hz=f_r,
        tau=tau,
        peak_mv=peak,
        points=tuple(points),
        delta_f_1pct_hz=_half_width_at(points, 0.01),
    )


def _half_width_at(points: list[SweepPoint], level: float) -> float | None:
    """Linear interpolation of |detuning| where the ratio crosses ``level``."""
    pos = sorted(
        (p for p in points if p.detuning_hz > 0), key=lambda p: p.detuning_hz
    )
    for a, b in zip(pos, pos[1:]):
        if a.ratio >= level >= b.ratio:
            if a.ratio == b.ratio:
                return a.detuning_hz
            frac = (a.ratio - level) / (a.ratio - b.ratio)
            return a.detuning_hz + frac * (b.detuning_hz - a.detuning_hz)
    return None


# -- harmonic analysis ----------------------------------------------------------


def harmonic_table(
    spec: Square,
    k_max: int,
    tau: float,
    gain: int = 1,
    sample_rate_hz: float = 200_000.0,
    front_end: FrontEndConfig | None = None,
) -> list[tuple[int, float]]:
    """Settled amplitude at each harmonic of a square-wave input.

    Detection runs at every harmonic of the realised reference
    simultaneously: each harmonic's reference pair spins k times faster,
    so every Fourier coefficient up to ``k_max`` comes out of one run.
    """
    if k_max < 1:
        raise LabError(f"k_max must be at least 1, got {k_max}")
    schedule = timing.plan_internal(spec.frequency_hz, sample_rate_hz)
    if k_max * schedule.f_r_actual > sample_rate_hz / 2.0:
        raise LabError(
            f"harmonic {k_max} of {schedule.f_r_actual:.1f} Hz is beyond the "
            f"Nyquist limit of {sample_rate_hz / 2.0:.0f} Hz"
        )
    fe = front_end if front_end is not None else FrontEndConfig()
    coeff = dsp.compute_alpha(tau, sample_rate_hz)
    channels = [dsp.HarmonicChannel(k=k) for k in range(1, k_max + 1)]
    front = frontend.FrontEndState(f_aa_hz=fe.f_aa_hz)
    oversample = 1 if fe.bypass else fe.oversample
    sampler = SignalSampler(
        Square(spec.amplitude_mv, schedule.f_r_actual),
        sample_rate_hz,
        oversample=oversample,
    )
    tabs = dsp.reference_tables(schedule.m)
    duration = (SETTLE_TIME_CONSTANTS + 1.5) * tau
    n_windows = int(math.ceil(duration / FRAME_INTERVAL_S))
    per_window = int(round(sample_rate_hz * FRAME_INTERVAL_S))
    history: list[list[float]] = []
    n = 0
    for _ in range(n_windows):
        mv = sampler.block(n, per_window)
        if fe.bypass:
            s_mv = mv
        else:
            v_adc = frontend.condition_block(
                front, mv / 1000.0, gain, 1.0 / (sample_rate_hz * oversample)
            )
            codes, _, _ = frontend.adc_block(v_adc[::oversample])
            s_mv = frontend.code_to_signal_block(codes, gain)
        dsp.demod_block(channels, s_mv, n, schedule.m, coeff.alpha, tabs)
        n += per_window
        history.append([math.hypot(ch.x2, ch.y2) for ch in channels])
    tail = np.array(history[-max(1, n_windows // 10) :])
    settled = tail.mean(axis=0)
    return [(ch.k, float(settled[i])) for i, ch in enumerate(channels)]


# -- noise robustness -------------------------------------------------------------


@dataclass(frozen=True)
class SnrPoint:
    snr: float
    seed: int
    gain: int
    amplitude_mv: float  # settled, input-referred
    error_pct: float  # relative to the noise-free baseline at that gain


def pick_gain(amplitude_mv: float, noise_rms_mv: float) -> int:
    """Highest gain that keeps signal + 4 sigma of noise inside headroom."""
    peak = amplitude_mv + 4.0 * noise_rms_mv
    best = 1
    for g in frontend.PGA_GAINS:
        if g and g * peak <= ADC_HEADROOM_MV:
            best = max(best, g)
    return best


def snr_sweep(
    signal: Sine,
    snr_list,
    tau: float,
    seeds=(1, 2, 3),
    duration_s: float | None = None,
) -> list[SnrPoint]:
    """Relative amplitude error versus signal-to-noise ratio (RMS over RMS).

    Each point uses the highest input gain that avoids clipping at its
    noise level; errors are taken against a noise-free run at that gain.
    """
    if duration_s is None:
        # the trailing 10% window must sit entirely past the settling wait
        duration_s = SETTLE_TIME_CONSTANTS * tau / 0.9 + 1.0
    duration_s = math.ceil(duration_s / FRAME_INTERVAL_S) * FRAME_INTERVAL_S
    rms_signal = signal.amplitude_mv / math.sqrt(2.0)
    baselines: dict[int, float] = {}
    points: list[SnrPoint] = []
    for snr in snr_list:
        if snr <= 0.0:
            raise LabError(f"signal-to-noise ratio must be positive, got {snr}")
        noise_rms = rms_signal / snr
        gain = pick_gain(signal.amplitude_mv, noise_rms)
        if gain not in baselines:
            config = InstrumentConfig(
                reference_hz=signal.frequency_hz,
                time_constant_s=tau,
                input_gain=gain,
            )
            clean = run_scenario(
                Scenario(spec=signal, duration_s=duration_s, config=config)
            )
            baselines[gain] = settled_amplitude(clean, tau)
        for seed in seeds:
            config = InstrumentConfig(
                reference_hz=signal.frequency_hz,
                time_constant_s=tau,
                input_gain=gain,
            )
            noisy = Sum(parts=(signal, WhiteNoise(rms_mv=noise_rms, seed=seed)))
            result = run_scenario(
                Scenario(spec=noisy, duration_s=duration_s, config=config)
            )
            r = settled_amplitude(result, tau)
            points.append(
                SnrPoint(
                    snr=float(snr),
                    seed=int(seed),
                    gain=gain,
                    amplitude_mv=r,
                    error_pct=100.0 * (r - baselines[gain]) / baselines[gain],
                )
            )
    return points


# -- amplitude roll-off ------------------------------------------------------------


def rolloff_sweep(
    frequencies_hz,
    tau: float = 0.2,
    amplitude_mv: float = 250.0,
    gain: int = 1,
) -> list[tuple[float, float]]:
    """Settled amplitude at each realised reference frequency, with the
    stimulus locked to the reference (one run per point)."""
    out: list[tuple[float, float]] = []
    for f in frequencies_hz:
        config = InstrumentConfig(
            reference_hz=float(f), time_constant_s=tau, input_gain=gain
        )
        f_act = timing.plan_internal(float(f), config.sample_rate_hz).f_r_actual
        duration = (SETTLE_TIME_CONSTANTS + 2.5) * tau
        duration = math.ceil(duration / FRAME_INTERVAL_S) * FRAME_INTERVAL_S
        result = run_scenario(
            Scenario(
                spec=Sine(amplitude_mv, f_act),
                duration_s=duration,
                config=config,
            )
        )
        out.append((f_act, settled_amplitude(result, tau)))
    return out


# -- phase calibration ---------------------------------------------------------------


def calibrate_phase_offset(
    config: InstrumentConfig | None = None,
    amplitude_mv: float = 250.0,
    front_end: FrontEndConfig | None = None,
) -> float:
    """Systematic phase offset: settled phase with the instrument's own
    square-wave stimulus fed back to the input. Subtract from measurements."""
    cfg = config if config is not None else InstrumentConfig()
    if cfg.external_reference:
        raise LabError("phase calibration requires internal referencing")
    tau = cfg.time_constant_s
    duration = (SETTLE_TIME_CONSTANTS + 1.5) * tau
    duration = math.ceil(duration / FRAME_INTERVAL_S) * FRAME_INTERVAL_S
    result = run_scenario(
        Scenario(
            spec=ReferenceDriven(amplitude_mv=amplitude_mv),
            duration_s=duration,
            config=cfg,
            front_end=front_end if front_end is not None else FrontEndConfig(),
        )
    )
    return settled_phase(result, tau)


# -- tabular files ---------------------------------------------------------------------

FRAME_COLUMNS = (
    "time_s",
    "error",
    "output_gain",
    "input_gain",
    "sync_on",
    "external_on",
    "samples_per_period",
    "sample_rate_hz",
    "reference_hz",
    "time_constant_s",
    "undersampling",
    "r1_mv",
    "phi1_rad",
    "s1_mv",
    "x1_mv",
    "y1_mv",
    "x_n_mv",
    "x_n1_mv",
    "x_n2_mv",
    "y_n_mv",
    "y_n1_mv",
    "y_n2_mv",
    "lowest_harmonic",
)

SIGNAL_COLUMNS = (
    "kind",
    "amplitude_mv",
    "frequency_hz",
    "phase_rad",
    "rms_mv",
    "seed",
    "t_on_s",
)


def write_frames_csv(path, result: ScenarioResult) -> None:
    """One frame per row, wire-format tokens, comma separated."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FRAME_COLUMNS)
        for t, frame in zip(result.times, result.frames):
            tokens = format_frame(frame).rstrip("\r\n").split(" ")
            writer.writerow([f"{t:.1f}", *tokens])


def read_frames_csv(path) -> ScenarioResult:
    times: list[float] = []
    frames: list[OutputFrame] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != FRAME_COLUMNS:
            raise LabError(f"unexpected header {header!r}")
        for row in reader:
            times.append(float(row[0]))
            frames.append(parse_frame(" ".join(row[1:]) + "\r\n"))
    return ScenarioResult(times=times, frames=frames, analogue_v=[])


def write_signal_csv(path, spec: SignalSpec) -> None:
    """Flatten a spec into one row per component."""
    rows = _flatten_signal(spec, t_on=None)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SIGNAL_COLUMNS)
        writer.writerows(rows)


def _flatten_signal(spec: SignalSpec, t_on: float | None) -> list[list]:
    if isinstance(spec, Sum):
        out = []
        for p in spec.parts:
            out.extend(_flatten_signal(p, t_on))
        return out
    if isinstance(spec, StepEnvelope):
        if t_on is not None:
            raise LabError("nested step envelopes cannot be written to a table")
        return _flatten_signal(spec.inner, spec.t_on_s)
    t = "" if t_on is None else repr(t_on)
    if isinstance(spec, Sine):
        return [[
            "sine", repr(spec.amplitude_mv), repr(spec.frequency_hz),
            repr(spec.phase_rad), "", "", t,
        ]]
    if isinstance(spec, Square):
        return [[
            "square", repr(spec.amplitude_mv), repr(spec.frequency_hz),
            "", "", "", t,
        ]]
    if isinstance(spec, WhiteNoise):
        return [["noise", repr(spec.rms_mv), "", "", repr(spec.rms_mv), str(spec.seed), t]]
    if isinstance(spec, ReferenceDriven):
        return [["reference", repr(spec.amplitude_mv), "", "", "", "", t]]
    raise LabError(f"cannot serialise signal {spec!r}")


def read_signal_csv(path, seed_override: int | None = None) -> SignalSpec:
    parts: list[SignalSpec] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SIGNAL_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise LabError(f"signal table missing columns {sorted(missing)}")
        for row in reader:
            parts.append(_signal_from_row(row))
    if not parts:
        raise LabError("signal table has no components")
    spec: SignalSpec = parts[0] if len(parts) == 1 else Sum(parts=tuple(parts))
    if seed_override is not None:
        spec = reseed(spec, seed_override)
    return spec


def _signal_from_row(row: dict) -> SignalSpec:
    kind = (row["kind"] or "").strip().lower()
    def num(name: str, default: float | None = None) -> float:
        raw = (row[name] or "").strip()
        if not raw:
            if default is None:
                raise LabError(f"{kind} row needs a value for {name}")
            return default
        return float(raw)

    if kind == "sine":
        part: SignalSpec = Sine(num("amplitude_mv"), num("frequency_hz"), num("phase_rad", 0.0))
    elif kind == "square":
        part = Square(num("amplitude_mv"), num("frequency_hz"))
    elif kind == "noise":
        part = WhiteNoise(rms_mv=num("rms_mv"), seed=int(num("seed", 0.0)))
    elif kind == "reference":
        part = ReferenceDriven(amplitude_mv=num("amplitude_mv"))
    else:
        raise LabError(f"unknown signal kind {row['kind']!r}")
    t_on = (row["t_on_s"] or "").strip()
    if t_on:
        part = StepEnvelope(inner=part, t_on_s=float(t_on))
    return part
