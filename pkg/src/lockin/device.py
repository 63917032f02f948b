"""The virtual lock-in instrument.

Binds scheduling, the analogue front-end model, and the demodulation
core into a sample loop, applies protocol commands, and snapshots output
frames on the 0.1 s cadence. The per-sample ``tick`` path is the
normative state transition; ``process_window`` is its vectorised twin
used for throughput (tests pin their agreement).

One logical owner advances the loop. Commands are applied between
windows, i.e. on tick boundaries, so no frame mixes configurations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from . import dsp, frontend, protocol, timing
from .frontend import FrontEndConfig, FrontEndState
from .signals import SignalSampler, noise_draws
from .timing import ExternalSchedule, InternalSchedule, LockFailure, ScheduleError

FRAME_INTERVAL_S = protocol.FRAME_INTERVAL_S
_REFERENCE_BUDGET = 4 * 200_000.0  # harmonic channels x rate the firmware sustains


class ConfigError(ValueError):
    """Invalid instrument configuration."""


def max_higher_harmonics(sample_rate_hz: float) -> int:
    """Per-tick compute budget: higher harmonics sustainable beside the
    fundamental at the given digitisation rate."""
    return int(_REFERENCE_BUDGET / sample_rate_hz) - 1


@dataclass
class InstrumentConfig:
    sample_rate_hz: float = 200_000.0
    reference_hz: float = 1_000.0
    input_gain: int = 1
    time_constant_s: float = 0.6
    sync_filter: bool = False
    external_reference: bool = False
    lowest_harmonic: int = 2
    output_gain: float = 10.0

    def __post_init__(self) -> None:
        if not 0.0 < self.sample_rate_hz <= timing.ADC_MAX_RATE_HZ:
            raise ConfigError(
                f"digitisation rate {self.sample_rate_hz} Hz outside "
                f"(0, {timing.ADC_MAX_RATE_HZ}] Hz"
            )
        lo, hi = protocol.FREQUENCY_RANGE_HZ
        if not lo <= self.reference_hz <= hi:
            raise ConfigError(
                f"reference frequency {self.reference_hz} Hz outside [{lo}, {hi}]"
            )
        if self.input_gain not in frontend.PGA_GAINS:
            raise ConfigError(
                f"input gain {self.input_gain} not in {frontend.PGA_GAINS}"
            )
        lo, hi = protocol.TIME_CONSTANT_RANGE_S
        if not lo <= self.time_constant_s <= hi:
            raise ConfigError(
                f"time constant {self.time_constant_s} s outside [{lo}, {hi}]"
            )
        lo, hi = protocol.OUTPUT_GAIN_RANGE
        if not lo <= self.output_gain <= hi:
            raise ConfigError(
                f"output gain {self.output_gain} outside [{lo}, {hi}]"
            )
        if self.lowest_harmonic < protocol.MIN_HARMONIC:
            raise ConfigError(
                f"lowest higher harmonic {self.lowest_harmonic} below "
                f"{protocol.MIN_HARMONIC}"
            )


@dataclass
class ExternalReference:
    """Simulated TTL reference environment seen by the instrument."""

    ttl_hz: float | None = None
    pll_tuned: bool = False
    lock_range_hz: tuple[float, float] = timing.DEFAULT_LOCK_RANGE_HZ
    measure_window_s: float = timing.DEFAULT_MEASURE_WINDOW_S


@dataclass
class AnalogueOutput:
    """Smoothed 0..3.3 V output tracking the scaled amplitude."""

    value_v: float = 0.0
    cutoff_hz: float = 1.59


def analogue_output_update(
    out: AnalogueOutput, r_mv: float, output_gain: float, dt: float
) -> AnalogueOutput:
    """Advance the output pin one step: clamp the scaled target to the
    0..3.3 V rails, then smooth through the one-pole filter."""
    if dt <= 0.0:
        raise ConfigError(f"dt must be positive, got {dt}")
    target = min(max(output_gain * r_mv / 1000.0, 0.0), 3.3)
    p = math.exp(-2.0 * math.pi * out.cutoff_hz * dt)
    out.value_v = p * out.value_v + (1.0 - p) * target
    return out


class Instrument:
    """Virtual device: sample pipeline plus command and frame handling."""

    def __init__(
        self,
        config: InstrumentConfig | None = None,
        front_end: FrontEndConfig | None = None,
        external: ExternalReference | None = None,
    ):
        self.config = config if config is not None else InstrumentConfig()
        self.front_cfg = front_end if front_end is not None else FrontEndConfig()
        self.external = external if external is not None else ExternalReference()
        self.front = FrontEndState(f_aa_hz=self.front_cfg.f_aa_hz)
        self.analogue = AnalogueOutput()
        self.noise = dsp.NoiseTracker()
        self.schedule: InternalSchedule | ExternalSchedule | None = None
        self.coeff: dsp.FilterCoefficient | None = None
        self.lock_failed = False
        self.clip_latch = False
        self.last_sync = (0.0, 0.0)
        self.frame_count = 0
        self.n = 0  # sample index within the active schedule
        self._tick_frac = 0.0
        self._tables: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.channels: list[dsp.HarmonicChannel] = []
        self.sync_acc: dsp.SyncAccumulator | None = None
        self._build_channels()
        if self.config.external_reference:
            self.schedule = None
            self.lock_failed = True
        else:
            self._plan_internal()

    # -- configuration plumbing -------------------------------------------

    def _build_channels(self) -> None:
        n = self.config.lowest_harmonic
        self.channels = [dsp.HarmonicChannel(k=1)] + [
            dsp.HarmonicChannel(k=k) for k in (n, n + 1, n + 2)
        ]

    def _plan_internal(self) -> None:
        self.schedule = timing.plan_internal(
            self.config.reference_hz, self.config.sample_rate_hz
        )
        self.lock_failed = False
        self._after_schedule_change()

    def _after_schedule_change(self) -> None:
        rate = self.reported_rate_hz
        self.coeff = (
            dsp.compute_alpha(self.config.time_constant_s, rate) if rate else None
        )
        self._reset_detection()

    def _reset_detection(self) -> None:
        for ch in self.channels:
            ch.reset()
        self.noise.reset()
        self.last_sync = (0.0, 0.0)
        self.n = 0
        self._tick_frac = 0.0
        m = self.samples_per_period
        self.sync_acc = dsp.SyncAccumulator(m=m) if m >= 3 else None

    # -- derived quantities -------------------------------------------------

    @property
    def locked(self) -> bool:
        return self.schedule is not None

    @property
    def samples_per_period(self) -> int:
        if isinstance(self.schedule, InternalSchedule):
            return self.schedule.m
        if isinstance(self.schedule, ExternalSchedule):
            return self.schedule.samples_per_period
        return 0

    @property
    def reported_rate_hz(self) -> float:
        """Digitisation rate the device believes in (frame field)."""
        if isinstance(self.schedule, InternalSchedule):
            return self.schedule.f_d
        if isinstance(self.schedule, ExternalSchedule):
            return self.schedule.f_d_effective
        return 0.0

    @property
    def true_rate_hz(self) -> float:
        """Physical tick rate: in external mode the multiplied TTL clock."""
        if isinstance(self.schedule, InternalSchedule):
            return self.schedule.f_d
        if isinstance(self.schedule, ExternalSchedule):
            ttl = self.external.ttl_hz
            if ttl is None:
                return 0.0
            return self.schedule.samples_per_period * ttl
        return 0.0

    @property
    def reported_reference_hz(self) -> float:
        if isinstance(self.schedule, InternalSchedule):
            return self.schedule.f_r_actual
        if isinstance(self.schedule, ExternalSchedule):
            return self.schedule.f_ext
        return 0.0

    @property
    def alpha(self) -> float:
        if self.coeff is None:
            raise ConfigError("no active schedule")
        return self.coeff.alpha

    def _tables_for(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        tabs = self._tables.get(m)
        if tabs is None:
            tabs = dsp.reference_tables(m)
            self._tables = {m: tabs}  # keep only the active period
        return tabs

    def reference_output(self, n: int | None = None) -> bool:
        """Level of the square-wave stimulus pin at sample ``n`` (default now)."""
        m = self.samples_per_period
        if m < 3:
            return False
        return timing.reference_square(self.n if n is None else n, m)

    # -- command handling ----------------------------------------------------

    def apply_command(self, cmd: protocol.Command) -> str | None:
        """Apply one parsed command; returns a diagnostic when ignored."""
        cfg = self.config
        if isinstance(cmd, protocol.ToggleSyncFilter):
            self.config = replace(cfg, sync_filter=not cfg.sync_filter)
            self.channels[0].reset()
            self.noise.reset()
            self.last_sync = (0.0, 0.0)
            if self.sync_acc is not None:
                self.sync_acc.reset()
            return None
        if isinstance(cmd, protocol.ToggleReferenceMode):
            if cfg.external_reference:
                self.config = replace(cfg, external_reference=False)
                self._plan_internal()
            else:
                self.config = replace(cfg, external_reference=True)
                self.schedule = None
                self.coeff = None
                self.lock_failed = True
                self._reset_detection()
            return None
        if isinstance(cmd, protocol.SetFrequency):
            self.config = replace(cfg, reference_hz=cmd.hz)
            if not self.config.external_reference:
                self._plan_internal()
            return None
        if isinstance(cmd, protocol.SetInputGain):
            self.config = replace(cfg, input_gain=cmd.n)
            self._reset_detection()
            return None
        if isinstance(cmd, protocol.SetTimeConstant):
            self.config = replace(cfg, time_constant_s=cmd.seconds)
            rate = self.reported_rate_hz
            self.coeff = dsp.compute_alpha(cmd.seconds, rate) if rate else None
            self._reset_detection()
            return None
        if isinstance(cmd, protocol.SetOutputGain):
            self.config = replace(cfg, output_gain=cmd.value)
            return None
        if isinstance(cmd, protocol.SetLowestHarmonic):
            self.config = replace(cfg, lowest_harmonic=cmd.n)
            fundamental = self.channels[0]
            self._build_channels()
            self.channels[0] = fundamental
            return None
        if isinstance(cmd, protocol.QueryExternalFrequency):
            if not cfg.external_reference:
                return "query ignored: internal reference mode"
            return self._query_external()
        raise ConfigError(f"unknown command {cmd!r}")

    def _query_external(self) -> str | None:
        env = self.external
        self.schedule = None
        self.coeff = None
        self.lock_failed = True
        if env.ttl_hz is None:
            self._reset_detection()
            return "lock failure: no TTL reference present"
        if not env.pll_tuned:
            self._reset_detection()
            return "lock failure: multiplier not tuned"
        try:
            edges = timing.simulated_edges(env.ttl_hz, env.measure_window_s)
            measured = timing.measure_external_frequency(
                edges, env.measure_window_s, env.lock_range_hz
            )
            self.schedule = timing.plan_external(measured)
        except (LockFailure, ScheduleError) as exc:
            self._reset_detection()
            return f"lock failure: {exc}"
        self.lock_failed = False
        self._after_schedule_change()
        return None

    def apply_line(self, line: str) -> str | None:
        """Parse and apply one command line; diagnostics leave state unchanged."""
        try:
            cmd = protocol.parse_command(line)
        except protocol.CommandError as exc:
            return str(exc)
        return self.apply_command(cmd)

    # -- sample loop -----------------------------------------------------------

    def window_ticks(self) -> int:
        """Ticks that fall in the next 0.1 s frame window."""
        rate = self.true_rate_hz
        if rate <= 0.0 or not self.locked:
            return 0
        raw = rate * FRAME_INTERVAL_S + self._tick_frac
        n = int(math.floor(raw + 1e-9))
        self._tick_frac = raw - n
        return n

    def tick(self, v_in: float) -> None:
        """Process one digitisation tick with input ``v_in`` volts (scalar path).

        The front end holds ``v_in`` across its oversampled substeps; the
        ADC reads the substep output at the tick instant.
        """
        if not self.locked or self.coeff is None:
            raise ConfigError("cannot tick without an active schedule")
        gain = self.config.input_gain
        m = self.samples_per_period
        alpha = self.coeff.alpha
        r = self.front_cfg.oversample
        sub_dt = 1.0 / (self.true_rate_hz * r)
        if self.front_cfg.bypass:
            s_mv = v_in * 1000.0
        else:
            v_adc = frontend.condition(self.front, v_in, gain, sub_dt)
            for _ in range(r - 1):
                frontend.condition(self.front, v_in, gain, sub_dt)
            if self.front_cfg.adc_noise_rms_v > 0.0:
                v_adc += self.front_cfg.adc_noise_rms_v * float(
                    noise_draws(_adc_noise_key(self.front_cfg), self.n, 1)[0]
                )
            code, clip_lo, clip_hi = frontend.adc_sample(v_adc)
            self.front.clip_low, self.front.clip_high = clip_lo, clip_hi
            self.clip_latch = self.clip_latch or clip_lo or clip_hi
            s_mv = frontend.code_to_signal(code, gain) if gain else 0.0
        if self.config.sync_filter and self.sync_acc is not None:
            q = dsp.reference_pair(self.n, m, 1)
            x0, y0 = dsp.mix(s_mv, q)
            emitted = dsp.sync_update(self.sync_acc, x0, y0)
            if emitted is not None:
                self.last_sync = emitted
                dsp.noise_update(self.noise, math.hypot(*emitted), alpha)
            dsp.demod_update(self.channels[1:], s_mv, self.n, m, alpha)
            r_now = math.hypot(*self.last_sync)
        else:
            dsp.demod_update(self.channels, s_mv, self.n, m, alpha)
            fund = self.channels[0]
            r_now = math.hypot(fund.x2, fund.y2)
            dsp.noise_update(self.noise, r_now, alpha)
        self._analogue_step(r_now, 1.0 / self.true_rate_hz)
        self.n += 1

    def _analogue_step(self, r_mv: float, dt: float) -> None:
        analogue_output_update(self.analogue, r_mv, self.config.output_gain, dt)

    def process_window(self, sampler: SignalSampler, n_ticks: int) -> None:
        """Vectorised tick loop over one frame window."""
        if n_ticks <= 0:
            return
        if not self.locked or self.coeff is None:
            raise ConfigError("cannot process samples without an active schedule")
        gain = self.config.input_gain
        m = self.samples_per_period
        alpha = self.coeff.alpha
        r = self.front_cfg.oversample
        rate = self.true_rate_hz
        mv = sampler.block(self.n, n_ticks, ref_m=m)
        if self.front_cfg.bypass:
            s_mv = mv[::r] if r > 1 else mv
        else:
            v_adc = frontend.condition_block(
                self.front, mv / 1000.0, gain, 1.0 / (rate * r)
            )
            v_tick = v_adc[::r]
            if self.front_cfg.adc_noise_rms_v > 0.0:
                v_tick = v_tick + self.front_cfg.adc_noise_rms_v * noise_draws(
                    _adc_noise_key(self.front_cfg), self.n, n_ticks
                )
            codes, clip_lo, clip_hi = frontend.adc_block(v_tick)
            self.front.clip_low, self.front.clip_high = (
                bool(v_tick[-1] <= frontend.CLIP_LOW_V),
                bool(v_tick[-1] >= frontend.CLIP_HIGH_V),
            )
            self.clip_latch = self.clip_latch or clip_lo or clip_hi
            s_mv = (
                frontend.code_to_signal_block(codes, gain)
                if gain
                else np.zeros(n_ticks)
            )
        tabs = self._tables_for(m)
        if self.config.sync_filter and self.sync_acc is not None:
            count_before = self.sync_acc.count
            x0, y0 = dsp.mix_block(s_mv, self.n, m, 1, tabs)
            emitted = dsp.sync_block(self.sync_acc, x0, y0)
            dsp.demod_block(self.channels[1:], s_mv, self.n, m, alpha, tabs)
            r_series = np.full(n_ticks, math.hypot(*self.last_sync))
            pos = m - count_before - 1
            for xbar, ybar in emitted:
                r_em = math.hypot(xbar, ybar)
                dsp.noise_update(self.noise, r_em, alpha)
                r_series[pos:] = r_em
                self.last_sync = (xbar, ybar)
                pos += m
        else:
            x2s, y2s = dsp.demod_block(
                self.channels, s_mv, self.n, m, alpha, tabs, series_for=1
            )
            r_series = np.sqrt(x2s * x2s + y2s * y2s)
            dsp.noise_block(self.noise, r_series, alpha)
        self._analogue_block(r_series, 1.0 / rate)
        self.n += n_ticks

    def _analogue_block(self, r_mv: np.ndarray, dt: float) -> None:
        targets = np.clip(self.config.output_gain * r_mv / 1000.0, 0.0, 3.3)
        p = math.exp(-2.0 * math.pi * self.analogue.cutoff_hz * dt)
        y, _ = lfilter(
            [1.0 - p], [1.0, -p], targets, zi=np.array([p * self.analogue.value_v])
        )
        self.analogue.value_v = float(y[-1])

    # -- frames -------------------------------------------------------------

    def emit_frame(self) -> protocol.OutputFrame:
        """Snapshot the output record and clear the clip latch."""
        cfg = self.config
        if cfg.sync_filter:
            x, y = self.last_sync
        else:
            x, y = self.channels[0].x2, self.channels[0].y2
        r1, phi1 = dsp.amplitude_phase(x, y)
        if self.locked and cfg.external_reference:
            assert isinstance(self.schedule, ExternalSchedule)
            spp = self.schedule.samples_per_period
            undersampling = self.schedule.undersampling
        elif cfg.external_reference:
            spp, undersampling = 128, 0.5  # pending rung before a query succeeds
        else:
            spp, undersampling = self.samples_per_period, 0.0
        frame = protocol.OutputFrame(
            error=(1 if self.clip_latch else 0) | (2 if self.lock_failed else 0),
            output_gain=cfg.output_gain,
            input_gain=cfg.input_gain,
            sync_on=cfg.sync_filter,
            external_on=cfg.external_reference,
            samples_per_period=spp,
            sample_rate_hz=self.reported_rate_hz,
            reference_hz=self.reported_reference_hz,
            time_constant_s=cfg.time_constant_s,
            undersampling=undersampling,
            r1=r1,
            phi1=phi1,
            s1=math.sqrt(self.noise.var_r),
            x1=x,
            y1=y,
            x_n=self.channels[1].x2,
            x_n1=self.channels[2].x2,
            x_n2=self.channels[3].x2,
            y_n=self.channels[1].y2,
            y_n1=self.channels[2].y2,
            y_n2=self.channels[3].y2,
            lowest_harmonic=cfg.lowest_harmonic,
        )
        self.clip_latch = False
        self.frame_count += 1
        return frame

    @property
    def sim_time_s(self) -> float:
        return self.frame_count * FRAME_INTERVAL_S


def _adc_noise_key(cfg: FrontEndConfig) -> int:
    # distinct stream from any signal noise seed
    return 0x5EED_ADC0
