"""Command-line entry points.

``serve`` hosts the HTTP/WebSocket service around a live device;
``emulate`` runs the raw line protocol over stdio or TCP; the ``lab``
subcommands are thin clients that post experiment requests to a running
service and render the returned tables and plots locally.
"""

from __future__ import annotations

import argparse
import csv
import sys

import httpx

from .device import InstrumentConfig
from .lab import read_signal_csv
from .transport import DeviceRunner, TcpServer, run_stdio

DEFAULT_URL = "http://127.0.0.1:8000"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lockin", description="software lock-in amplifier"
    )
    sub = parser.add_subparsers(required=True)

    serve = sub.add_parser("serve", help="run the HTTP/WebSocket service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--fd", type=float, default=200_000.0,
                       help="digitisation rate, Hz")
    serve.add_argument("--scenario", help="signal table driving the live input")
    serve.add_argument("--seed", type=int, default=None,
                       help="override noise seeds in the signal table")
    serve.add_argument("--panel", default="frontpanel/dist",
                       help="static front-panel directory to mount at /panel")
    serve.set_defaults(func=cmd_serve)

    emu = sub.add_parser("emulate", help="run the line protocol directly")
    emu.add_argument("--transport", choices=("stdio", "tcp"), default="stdio")
    emu.add_argument("--host", default="127.0.0.1")
    emu.add_argument("--port", type=int, default=7777)
    emu.add_argument("--clock", choices=("real", "accel"), default="real")
    emu.add_argument("--fd", type=float, default=200_000.0)
    emu.add_argument("--scenario", help="signal table for the simulated input")
    emu.add_argument("--seed", type=int, default=None)
    emu.add_argument("--duration", type=float, default=None,
                     help="seconds of simulated time; required with --clock accel")
    emu.add_argument("--table", help="write emitted frames to this CSV")
    emu.set_defaults(func=cmd_emulate)

    lab_cmd = sub.add_parser("lab", help="experiments against a running service")
    lab_sub = lab_cmd.add_subparsers(required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--url", default=DEFAULT_URL)
        p.add_argument("--table", help="write results to this CSV")
        p.add_argument("--plot", help="write a PNG plot to this path")

    step = lab_sub.add_parser("step", help="step-settling run and fit")
    step.add_argument("--tau", type=float, default=0.6)
    step.add_argument("--amplitude", type=float, default=380.0)
    step.add_argument("--frequency", type=float, default=1000.0)
    step.add_argument("--duration", type=float, default=None)
    common(step)
    step.set_defaults(func=cmd_lab_step)

    sweep = lab_sub.add_parser("freq-response", help="detuning sweep")
    sweep.add_argument("--reference", type=float, default=1000.0)
    sweep.add_argument("--tau", type=float, default=0.6)
    sweep.add_argument("--amplitude", type=float, default=250.0)
    sweep.add_argument(
        "--detunings",
        default="0.5,1,1.5,2,2.5,3,4,5,7,10,15,20,30",
        help="comma-separated detunings in Hz",
    )
    common(sweep)
    sweep.set_defaults(func=cmd_lab_sweep)

    harm = lab_sub.add_parser("harmonics", help="square-wave harmonic table")
    harm.add_argument("--frequency", type=float, default=100.0)
    harm.add_argument("--amplitude", type=float, default=250.0)
    harm.add_argument("--kmax", type=int, default=21)
    harm.add_argument("--tau", type=float, default=0.6)
    common(harm)
    harm.set_defaults(func=cmd_lab_harmonics)

    snr = lab_sub.add_parser("snr", help="noise robustness sweep")
    snr.add_argument("--amplitude", type=float, default=4.0)
    snr.add_argument("--frequency", type=float, default=1000.0)
    snr.add_argument("--tau", type=float, default=6.0)
    snr.add_argument("--snr", default="10,0.01", help="comma-separated ratios")
    snr.add_argument("--seeds", default="1,2,3")
    snr.add_argument("--duration", type=float, default=None)
    common(snr)
    snr.set_defaults(func=cmd_lab_snr)

    roll = lab_sub.add_parser("rolloff", help="amplitude vs frequency sweep")
    roll.add_argument(
        "--frequencies",
        default="1000,2000,5000,10000,15384.6,20000,25000,28571.4,33333.3,40000,50000",
    )
    roll.add_argument("--tau", type=float, default=0.2)
    roll.add_argument("--amplitude", type=float, default=250.0)
    common(roll)
    roll.set_defaults(func=cmd_lab_rolloff)

    phase = lab_sub.add_parser("phase", help="systematic phase offset")
    phase.add_argument("--bypass", action="store_true",
                       help="bypass the analogue front-end model")
    common(phase)
    phase.set_defaults(func=cmd_lab_phase)

    return parser


def _runner_from_args(args) -> DeviceRunner:
    config = InstrumentConfig(sample_rate_hz=args.fd)
    runner = DeviceRunner(config=config)
    if args.scenario:
        runner.set_signal(read_signal_csv(args.scenario, seed_override=args.seed))
    return runner


def cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    app = create_app(runner=_runner_from_args(args), panel_dir=args.panel)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_emulate(args) -> int:
    runner = _runner_from_args(args)
    real_time = args.clock == "real"
    if not real_time and args.duration is None:
        print("--clock accel needs --duration", file=sys.stderr)
        return 2
    recorder = runner.subscribe() if args.table else None
    if recorder is not None:
        recorder.lines.maxsize = 0  # recording sink is unbounded
    try:
        if args.transport == "stdio":
            run_stdio(runner, real_time=real_time, duration_s=args.duration)
        else:
            server = TcpServer(runner, host=args.host, port=args.port)
            server.start()
            print(f"listening on {server.host}:{server.port}", file=sys.stderr)
            try:
                runner.run(real_time=real_time, duration_s=args.duration)
            finally:
                server.stop()
    except KeyboardInterrupt:
        pass
    if recorder is not None:
        _write_recording(args.table, recorder)
    return 0


def _write_recording(path: str, recorder) -> None:
    from .lab import FRAME_COLUMNS

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FRAME_COLUMNS)
        k = 0
        while not recorder.lines.empty():
            line = recorder.lines.get_nowait()
            k += 1
            writer.writerow([f"{k * 0.1:.1f}", *line.split()])


def _client(url: str) -> httpx.Client:
    return httpx.Client(base_url=url, timeout=600.0)


def _post(args, path: str, payload: dict) -> dict:
    with _client(args.url) as client:
        response = client.post(path, json=payload)
        if response.status_code != 200:
            raise SystemExit(f"{path} failed: {response.status_code} {response.text}")
        return response.json()


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _write_table(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _plot_xy(path: str, x, y, xlabel: str, ylabel: str, logx: bool = False) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(x, y, marker="o", markersize=3)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def cmd_lab_step(args) -> int:
    data = _post(args, "/lab/step", {
        "tau": args.tau,
        "amplitude_mv": args.amplitude,
        "frequency_hz": args.frequency,
        "duration_s": args.duration,
    })
    print(
        f"tau* = {data['tau_star_s']:.5f} s  r_inf = {data['r_inf_mv']:.3f} mV  "
        f"residual = {data['residual_rms_mv']:.4f} mV"
    )
    if args.table:
        _write_table(args.table, ["time_s", "r1_mv"],
                     list(zip(data["times"], data["r1_mv"])))
    if args.plot:
        _plot_xy(args.plot, data["times"], data["r1_mv"], "time (s)", "R (mV)")
    return 0


def cmd_lab_sweep(args) -> int:
    data = _post(args, "/lab/frequency-response", {
        "reference_hz": args.reference,
        "detunings_hz": _floats(args.detunings),
        "tau": args.tau,
        "amplitude_mv": args.amplitude,
    })
    width = data["delta_f_1pct_hz"]
    width_text = f"{width:.3f} Hz" if width is not None else "not bracketed"
    print(f"peak = {data['peak_mv']:.3f} mV  half-width(1%) = {width_text}")
    rows = [[p["detuning_hz"], p["frequency_hz"], p["amplitude_mv"], p["ratio"]]
            for p in data["points"]]
    for row in rows:
        print(f"  df={row[0]:>7.2f} Hz  R={row[2]:10.4f} mV  ratio={row[3]:.5f}")
    if args.table:
        _write_table(args.table,
                     ["detuning_hz", "frequency_hz", "amplitude_mv", "ratio"], rows)
    if args.plot:
        _plot_xy(args.plot, [r[0] for r in rows], [r[3] for r in rows],
                 "detuning (Hz)", "R / peak", logx=True)
    return 0


def cmd_lab_harmonics(args) -> int:
    data = _post(args, "/lab/harmonics", {
        "amplitude_mv": args.amplitude,
        "frequency_hz": args.frequency,
        "k_max": args.kmax,
        "tau": args.tau,
    })
    rows = data["harmonics"]
    for k, r in rows:
        print(f"  k={k:>2}  R={r:10.4f} mV")
    if args.table:
        _write_table(args.table, ["harmonic", "amplitude_mv"], rows)
    if args.plot:
        _plot_xy(args.plot, [k for k, _ in rows], [r for _, r in rows],
                 "harmonic", "R (mV)")
    return 0


def cmd_lab_snr(args) -> int:
    data = _post(args, "/lab/snr", {
        "amplitude_mv": args.amplitude,
        "frequency_hz": args.frequency,
        "tau": args.tau,
        "snr": _floats(args.snr),
        "seeds": [int(s) for s in _floats(args.seeds)],
        "duration_s": args.duration,
    })
    rows = [[p["snr"], p["seed"], p["gain"], p["amplitude_mv"], p["error_pct"]]
            for p in data["points"]]
    for row in rows:
        print(f"  snr={row[0]:>8.3g} seed={row[1]} gain={row[2]:>2} "
              f"R={row[3]:9.4f} mV  err={row[4]:+.3f}%")
    if args.table:
        _write_table(args.table,
                     ["snr", "seed", "gain", "amplitude_mv", "error_pct"], rows)
    if args.plot:
        _plot_xy(args.plot, [r[0] for r in rows], [abs(r[4]) for r in rows],
                 "SNR", "|error| (%)", logx=True)
    return 0


def cmd_lab_rolloff(args) -> int:
    data = _post(args, "/lab/rolloff", {
        "frequencies_hz": _floats(args.frequencies),
        "tau": args.tau,
        "amplitude_mv": args.amplitude,
    })
    rows = [[f, r, n] for (f, r), (_, n) in zip(data["points"], data["normalised"])]
    for f, r, n in rows:
        print(f"  f={f:>9.1f} Hz  R={r:9.4f} mV  ratio={n:.5f}")
    if args.table:
        _write_table(args.table, ["frequency_hz", "amplitude_mv", "ratio"], rows)
    if args.plot:
        _plot_xy(args.plot, [r[0] for r in rows], [r[2] for r in rows],
                 "frequency (Hz)", "R / R(1 kHz)", logx=True)
    return 0


def cmd_lab_phase(args) -> int:
    data = _post(args, "/lab/phase-offset", {
        "bypass_front_end": bool(args.bypass),
    })
    print(f"phi* = {data['phi_star_rad']:.6f} rad = {data['phi_star_deg']:.4f} deg")
    if args.table:
        _write_table(args.table, ["phi_star_rad", "phi_star_deg"],
                     [[data["phi_star_rad"], data["phi_star_deg"]]])
    if args.plot:
        pass  # single number, nothing to plot
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
