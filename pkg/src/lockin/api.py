"""HTTP/WebSocket service wrapping the instrument and the signal lab.

REST endpoints cover planning, the line codec, live device control, and
accelerated experiment runs; ``/bridge`` is a WebSocket speaking the
identical line protocol (command lines in, frame lines out) for browser
front panels. One device session runs per service process.
"""

from __future__ import annotations

import asyncio
import contextlib
import queue
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException, WebSocket
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import dsp, lab, protocol, timing
from .device import ExternalReference, InstrumentConfig, max_higher_harmonics
from .frontend import FrontEndConfig
from .lab import Scenario, ScenarioResult
from .signals import (
    ReferenceDriven,
    SignalSpec,
    Sine,
    Square,
    StepEnvelope,
    Sum,
    WhiteNoise,
)
from .transport import DeviceRunner


# -- wire models -------------------------------------------------------------


class AlphaRequest(BaseModel):
    time_constant_s: float
    sample_rate_hz: float = 200_000.0


class AlphaResponse(BaseModel):
    alpha: float
    time_constant_s: float
    sample_rate_hz: float
    cutoff_hz: float


class InternalPlanRequest(BaseModel):
    frequency_hz: float
    sample_rate_hz: float = 200_000.0


class InternalPlanResponse(BaseModel):
    sample_rate_hz: float
    samples_per_period: int
    reference_hz: float


class ExternalPlanRequest(BaseModel):
    ttl_hz: float


class ExternalPlanResponse(BaseModel):
    ttl_hz: float
    samples_per_period: int
    undersampling: float
    sample_rate_hz: float


class LineRequest(BaseModel):
    line: str


class CommandResponse(BaseModel):
    accepted: bool
    command: str | None = None
    diagnostic: str | None = None


class FrameModel(BaseModel):
    error: int
    output_gain: float
    input_gain: int
    sync_on: bool
    external_on: bool
    samples_per_period: int
    sample_rate_hz: float
    reference_hz: float
    time_constant_s: float
    undersampling: float
    r1: float
    phi1: float
    s1: float
    x1: float
    y1: float
    x_n: float
    x_n1: float
    x_n2: float
    y_n: float
    y_n1: float
    y_n2: float
    lowest_harmonic: int

    @classmethod
    def from_frame(cls, frame: protocol.OutputFrame) -> "FrameModel":
        return cls(**vars(frame))

    def to_frame(self) -> protocol.OutputFrame:
        return protocol.OutputFrame(**self.model_dump())


class FrameLineResponse(BaseModel):
    line: str


class SignalPart(BaseModel):
    """Flat description of one signal component (mirrors the table format)."""

    kind: str
    amplitude_mv: float = 0.0
    frequency_hz: float = 0.0
    phase_rad: float = 0.0
    rms_mv: float = 0.0
    seed: int = 0
    t_on_s: float | None = None

    def to_spec(self) -> SignalSpec:
        kind = self.kind.strip().lower()
        if kind == "sine":
            part: SignalSpec = Sine(self.amplitude_mv, self.frequency_hz, self.phase_rad)
        elif kind == "square":
            part = Square(self.amplitude_mv, self.frequency_hz)
        elif kind == "noise":
            part = WhiteNoise(rms_mv=self.rms_mv, seed=self.seed)
        elif kind == "reference":
            part = ReferenceDriven(amplitude_mv=self.amplitude_mv)
        else:
            raise HTTPException(422, f"unknown signal kind {self.kind!r}")
        if self.t_on_s is not None:
            part = StepEnvelope(inner=part, t_on_s=self.t_on_s)
        return part


def _combine(parts: list[SignalPart]) -> SignalSpec:
    if not parts:
        raise HTTPException(422, "signal needs at least one component")
    specs = [p.to_spec() for p in parts]
    return specs[0] if len(specs) == 1 else Sum(parts=tuple(specs))


class ConfigModel(BaseModel):
    sample_rate_hz: float = 200_000.0
    reference_hz: float = 1_000.0
    input_gain: int = 1
    time_constant_s: float = 0.6
    sync_filter: bool = False
    external_reference: bool = False
    lowest_harmonic: int = 2
    output_gain: float = 10.0

    def to_config(self) -> InstrumentConfig:
        try:
            return InstrumentConfig(**self.model_dump())
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from None

    @classmethod
    def from_config(cls, config: InstrumentConfig) -> "ConfigModel":
        return cls(**vars(config))


class FrontEndModel(BaseModel):
    f_aa_hz: float = 94_000.0
    oversample: int = 4
    adc_noise_rms_v: float = 0.0
    bypass: bool = False

    def to_config(self) -> FrontEndConfig:
        return FrontEndConfig(**self.model_dump())


class DeviceState(BaseModel):
    config: ConfigModel
    locked: bool
    lock_failed: bool
    sim_time_s: float
    analogue_out_v: float
    max_higher_harmonics: int
    last_frame: FrameModel | None = None
    last_line: str = ""


class ExternalEnvRequest(BaseModel):
    ttl_hz: float | None = None
    pll_tuned: bool = True


class ScenarioRequest(BaseModel):
    signal: list[SignalPart]
    duration_s: float
    config: ConfigModel = Field(default_factory=ConfigModel)
    front_end: FrontEndModel = Field(default_factory=FrontEndModel)
    commands: list[tuple[float, str]] = Field(default_factory=list)
    external_ttl_hz: float | None = None
    pll_tuned: bool = True
    include_frames: bool = True


class ScenarioResponse(BaseModel):
    times: list[float]
    lines: list[str]
    frames: list[FrameModel] | None = None


class StepRequest(BaseModel):
    tau: float
    amplitude_mv: float = 380.0
    frequency_hz: float = 1_000.0
    duration_s: float | None = None


class StepResponse(BaseModel):
    r_inf_mv: float
    tau_star_s: float
    residual_rms_mv: float
    times: list[float]
    r1_mv: list[float]


class SweepRequest(BaseModel):
    reference_hz: float = 1_000.0
    detunings_hz: list[float]
    tau: float = 0.6
    amplitude_mv: float = 250.0


class SweepPointModel(BaseModel):
    frequency_hz: float
    detuning_hz: float
    amplitude_mv: float
    ratio: float


class SweepResponse(BaseModel):
    reference_hz: float
    peak_mv: float
    delta_f_1pct_hz: float | None
    points: list[SweepPointModel]


class HarmonicsRequest(BaseModel):
    amplitude_mv: float = 250.0
    frequency_hz: float = 100.0
    k_max: int = 21
    tau: float = 0.6


class HarmonicsResponse(BaseModel):
    harmonics: list[tuple[int, float]]


class SnrRequest(BaseModel):
    amplitude_mv: float = 4.0
    frequency_hz: float = 1_000.0
    tau: float = 6.0
    snr: list[float]
    seeds: list[int] = Field(default_factory=lambda: [1, 2, 3])
    duration_s: float | None = None


class SnrPointModel(BaseModel):
    snr: float
    seed: int
    gain: int
    amplitude_mv: float
    error_pct: float


class SnrResponse(BaseModel):
    points: list[SnrPointModel]


class RolloffRequest(BaseModel):
    frequencies_hz: list[float]
    tau: float = 0.2
    amplitude_mv: float = 250.0


class RolloffResponse(BaseModel):
    points: list[tuple[float, float]]  # (realised frequency, settled mV)
    normalised: list[tuple[float, float]]  # relative to the first point


class PhaseOffsetRequest(BaseModel):
    config: ConfigModel = Field(default_factory=ConfigModel)
    amplitude_mv: float = 250.0
    bypass_front_end: bool = False


class PhaseOffsetResponse(BaseModel):
    phi_star_rad: float
    phi_star_deg: float


# -- application -------------------------------------------------------------


def create_app(
    runner: DeviceRunner | None = None,
    real_time: bool = True,
    panel_dir: str | Path | None = None,
) -> FastAPI:
    """Build the service around one device session."""
    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        if app.state.real_time:
            app.state.runner.start(real_time=True)
        try:
            yield
        finally:
            app.state.runner.stop()

    app = FastAPI(title="lockin", version="0.1.0", lifespan=lifespan)
    app.state.runner = runner if runner is not None else DeviceRunner()
    app.state.real_time = real_time

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "service": "lockin"}

    # -- pure core wrappers

    @app.post("/dsp/alpha", response_model=AlphaResponse)
    def alpha(req: AlphaRequest) -> AlphaResponse:
        try:
            coeff = dsp.compute_alpha(req.time_constant_s, req.sample_rate_hz)
        except dsp.DspError as exc:
            raise HTTPException(422, str(exc)) from None
        return AlphaResponse(
            alpha=coeff.alpha,
            time_constant_s=coeff.tau,
            sample_rate_hz=coeff.f_d,
            cutoff_hz=1.0 / (2.0 * 3.141592653589793 * coeff.tau),
        )

    @app.post("/plan/internal", response_model=InternalPlanResponse)
    def plan_internal(req: InternalPlanRequest) -> InternalPlanResponse:
        try:
            s = timing.plan_internal(req.frequency_hz, req.sample_rate_hz)
        except timing.ScheduleError as exc:
            raise HTTPException(422, str(exc)) from None
        return InternalPlanResponse(
            sample_rate_hz=s.f_d, samples_per_period=s.m, reference_hz=s.f_r_actual
        )

    @app.post("/plan/external", response_model=ExternalPlanResponse)
    def plan_external(req: ExternalPlanRequest) -> ExternalPlanResponse:
        try:
            s = timing.plan_external(req.ttl_hz)
        except timing.ScheduleError as exc:
            raise HTTPException(422, str(exc)) from None
        return ExternalPlanResponse(
            ttl_hz=s.f_ext,
            samples_per_period=s.samples_per_period,
            undersampling=s.undersampling,
            sample_rate_hz=s.f_d_effective,
        )

    @app.post("/protocol/command/parse", response_model=CommandResponse)
    def parse_cmd(req: LineRequest) -> CommandResponse:
        try:
            cmd = protocol.parse_command(req.line)
        except protocol.CommandError as exc:
            return CommandResponse(accepted=False, diagnostic=str(exc))
        return CommandResponse(accepted=True, command=repr(cmd))

    @app.post("/protocol/frame/parse", response_model=FrameModel)
    def parse_frame(req: LineRequest) -> FrameModel:
        try:
            return FrameModel.from_frame(protocol.parse_frame(req.line))
        except protocol.FrameError as exc:
            raise HTTPException(422, str(exc)) from None

    @app.post("/protocol/frame/format", response_model=FrameLineResponse)
    def format_frame(req: FrameModel) -> FrameLineResponse:
        try:
            return FrameLineResponse(line=protocol.format_frame(req.to_frame()))
        except protocol.FrameError as exc:
            raise HTTPException(422, str(exc)) from None

    # -- live device

    @app.get("/device", response_model=DeviceState)
    def device_state() -> DeviceState:
        r = app.state.runner
        inst = r.instrument
        return DeviceState(
            config=ConfigModel.from_config(inst.config),
            locked=inst.locked,
            lock_failed=inst.lock_failed,
            sim_time_s=inst.sim_time_s,
            analogue_out_v=inst.analogue.value_v,
            max_higher_harmonics=max_higher_harmonics(inst.config.sample_rate_hz),
            last_frame=(
                FrameModel.from_frame(r.last_frame) if r.last_frame else None
            ),
            last_line=r.last_line,
        )

    @app.post("/device/command", response_model=CommandResponse)
    def device_command(req: LineRequest) -> CommandResponse:
        diagnostic = app.state.runner.submit(req.line)
        return CommandResponse(accepted=diagnostic is None, diagnostic=diagnostic)

    @app.post("/device/signal")
    def device_signal(parts: list[SignalPart]) -> dict:
        app.state.runner.set_signal(_combine(parts))
        return {"status": "ok"}

    @app.post("/device/external")
    def device_external(req: ExternalEnvRequest) -> dict:
        env = app.state.runner.instrument.external
        env.ttl_hz = req.ttl_hz
        env.pll_tuned = req.pll_tuned
        return {"status": "ok"}

    # -- accelerated experiments

    @app.post("/lab/scenario", response_model=ScenarioResponse)
    def lab_scenario(req: ScenarioRequest) -> ScenarioResponse:
        external = None
        if req.external_ttl_hz is not None or req.config.external_reference:
            external = ExternalReference(
                ttl_hz=req.external_ttl_hz, pll_tuned=req.pll_tuned
            )
        scenario = Scenario(
            spec=_combine(req.signal),
            duration_s=req.duration_s,
            config=req.config.to_config(),
            front_end=req.front_end.to_config(),
            external=external,
            commands=tuple((t, line) for t, line in req.commands),
        )
        try:
            result = lab.run_scenario(scenario)
        except lab.LabError as exc:
            raise HTTPException(422, str(exc)) from None
        return _scenario_response(result, req.include_frames)

    @app.post("/lab/step", response_model=StepResponse)
    def lab_step(req: StepRequest) -> StepResponse:
        try:
            result = lab.run_step(
                tau=req.tau,
                amplitude_mv=req.amplitude_mv,
                frequency_hz=req.frequency_hz,
                duration_s=req.duration_s,
            )
            fit = lab.fit_step_response(result.times, result.r1(), t0=0.0)
        except (lab.LabError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from None
        return StepResponse(
            r_inf_mv=fit.r_inf,
            tau_star_s=fit.tau_star,
            residual_rms_mv=fit.residual_rms,
            times=result.times,
            r1_mv=[float(v) for v in result.r1()],
        )

    @app.post("/lab/frequency-response", response_model=SweepResponse)
    def lab_sweep(req: SweepRequest) -> SweepResponse:
        try:
            sweep = lab.frequency_response_sweep(
                req.reference_hz, req.detunings_hz, req.tau, req.amplitude_mv
            )
        except (lab.LabError, timing.ScheduleError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from None
        return SweepResponse(
            reference_hz=sweep.reference_hz,
            peak_mv=sweep.peak_mv,
            delta_f_1pct_hz=sweep.delta_f_1pct_hz,
            points=[SweepPointModel(**vars(p)) for p in sweep.points],
        )

    @app.post("/lab/harmonics", response_model=HarmonicsResponse)
    def lab_harmonics(req: HarmonicsRequest) -> HarmonicsResponse:
        try:
            table = lab.harmonic_table(
                Square(req.amplitude_mv, req.frequency_hz), req.k_max, req.tau
            )
        except (lab.LabError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from None
        return HarmonicsResponse(harmonics=table)

    @app.post("/lab/snr", response_model=SnrResponse)
    def lab_snr(req: SnrRequest) -> SnrResponse:
        try:
            points = lab.snr_sweep(
                Sine(req.amplitude_mv, req.frequency_hz),
                req.snr,
                req.tau,
                seeds=req.seeds,
                duration_s=req.duration_s,
            )
        except (lab.LabError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from None
        return SnrResponse(points=[SnrPointModel(**vars(p)) for p in points])

    @app.post("/lab/rolloff", response_model=RolloffResponse)
    def lab_rolloff(req: RolloffRequest) -> RolloffResponse:
        try:
            points = lab.rolloff_sweep(
                req.frequencies_hz, tau=req.tau, amplitude_mv=req.amplitude_mv
            )
        except (lab.LabError, timing.ScheduleError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from None
        first = points[0][1] if points else 1.0
        return RolloffResponse(
            points=points,
            normalised=[(f, r / first) for f, r in points],
        )

    @app.post("/lab/phase-offset", response_model=PhaseOffsetResponse)
    def lab_phase(req: PhaseOffsetRequest) -> PhaseOffsetResponse:
        fe = FrontEndConfig(bypass=True, oversample=1) if req.bypass_front_end else None
        try:
            phi = lab.calibrate_phase_offset(
                config=req.config.to_config(),
                amplitude_mv=req.amplitude_mv,
                front_end=fe,
            )
        except lab.LabError as exc:
            raise HTTPException(422, str(exc)) from None
        return PhaseOffsetResponse(
            phi_star_rad=phi, phi_star_deg=phi * 180.0 / 3.141592653589793
        )

    # -- bridge

    @app.websocket("/bridge")
    async def bridge(ws: WebSocket) -> None:
        await ws.accept()
        runner: DeviceRunner = app.state.runner
        sub = runner.subscribe()
        loop = asyncio.get_running_loop()
        frames: asyncio.Queue[str] = asyncio.Queue(maxsize=64)
        stop = threading.Event()

        def relay() -> None:
            # moves frame lines from the runner thread onto the event loop
            while not stop.is_set():
                try:
                    line = sub.get(timeout=0.2)
                except queue.Empty:
                    continue
                try:
                    loop.call_soon_threadsafe(_offer, frames, line)
                except RuntimeError:
                    return  # loop closed

        relay_thread = threading.Thread(target=relay, daemon=True)
        relay_thread.start()

        async def pump_frames() -> None:
            while True:
                await ws.send_text(await frames.get())

        async def pump_commands() -> None:
            while True:
                text = await ws.receive_text()
                runner.submit(text, timeout=0.0)

        tasks = [
            asyncio.create_task(pump_frames()),
            asyncio.create_task(pump_commands()),
        ]
        for task in tasks:
            task.add_done_callback(_reap_task)
        try:
            await asyncio.wait(tasks, return_when=asyncio.FIRST_EXCEPTION)
        finally:
            # no awaits here: the server may cancel this coroutine as the
            # socket closes, and a suspension point would leak the cancel
            stop.set()
            runner.unsubscribe(sub)
            for task in tasks:
                task.cancel()

    if panel_dir is not None and Path(panel_dir).is_dir():
        app.mount("/panel", StaticFiles(directory=panel_dir, html=True), name="panel")

    return app


def _reap_task(task: "asyncio.Task") -> None:
    if not task.cancelled():
        task.exception()  # retrieve, silencing never-retrieved warnings


def _offer(q: "asyncio.Queue[str]", line: str) -> None:
    # bounded bridge buffer: drop the oldest frame rather than block
    while True:
        try:
            q.put_nowait(line)
            return
        except asyncio.QueueFull:
            try:
                q.get_nowait()
            except asyncio.QueueEmpty:
                pass


def _scenario_response(result: ScenarioResult, include_frames: bool) -> ScenarioResponse:
    return ScenarioResponse(
        times=result.times,
        lines=result.lines(),
        frames=(
            [FrameModel.from_frame(f) for f in result.frames]
            if include_frames
            else None
        ),
    )
