import io
import queue
import socket
import time

import pytest

from lockin.device import InstrumentConfig
from lockin.protocol import parse_frame
from lockin.signals import Sine
from lockin.transport import DeviceRunner, Subscriber, TcpServer, run_stdio


def test_subscriber_drops_oldest_and_counts():
    sub = Subscriber(maxsize=3)
    for k in range(5):
        sub.push(f"line{k}\r\n")
    assert sub.dropped == 2
    assert sub.get(timeout=0.1) == "line2\r\n"
    assert sub.get(timeout=0.1) == "line3\r\n"
    assert sub.get(timeout=0.1) == "line4\r\n"


def test_submit_reports_parse_errors_without_touching_state():
    runner = DeviceRunner()
    before_tau = runner.instrument.config.time_constant_s
    diag = runner.submit("e99")
    assert "time constant" in diag
    assert runner.instrument.config.time_constant_s == before_tau


def test_commands_apply_between_windows():
    runner = DeviceRunner(signal=Sine(100.0, 1_000.0))
    first = runner.step_window()
    assert parse_frame(first).time_constant_s == 0.6
    assert runner.submit("e3") is None
    second = runner.step_window()
    frame = parse_frame(second)
    # the whole frame reflects the new configuration, never a mixture
    assert frame.time_constant_s == 3.0


def test_runner_real_time_thread_paces_frames():
    runner = DeviceRunner(signal=Sine(50.0, 1_000.0))
    sub = runner.subscribe()
    runner.start(real_time=True)
    try:
        t0 = time.monotonic()
        lines = [sub.get(timeout=1.0) for _ in range(3)]
        elapsed = time.monotonic() - t0
    finally:
        runner.stop()
    assert len(lines) == 3
    assert elapsed > 0.15  # 3 frames at 0.1 s cadence cannot arrive instantly
    for line in lines:
        parse_frame(line)


def test_run_stdio_accelerated():
    runner = DeviceRunner(signal=Sine(100.0, 1_000.0))
    stdin = io.StringIO("e2\nbogus\n")
    stdout = io.StringIO()
    run_stdio(runner, real_time=False, duration_s=0.5, stdin=stdin, stdout=stdout)
    lines = [l for l in stdout.getvalue().split("\r\n") if l]
    assert len(lines) == 5
    frames = [parse_frame(l + "\r\n") for l in lines]
    assert frames[-1].time_constant_s == 2.0  # command applied
    assert runner.instrument.config.time_constant_s == 2.0


def test_tcp_server_single_client_line_protocol():
    runner = DeviceRunner(signal=Sine(100.0, 1_000.0))
    server = TcpServer(runner, port=0)
    server.start()
    runner.start(real_time=True)
    try:
        with socket.create_connection(("127.0.0.1", server.port), timeout=2) as s:
            s.sendall(b"g4\n")
            time.sleep(0.45)
            data = s.recv(1 << 16).decode()
    finally:
        runner.stop()
        server.stop()
    lines = [l for l in data.split("\r\n") if l]
    assert len(lines) >= 2
    assert parse_frame(lines[-1] + "\r\n").input_gain == 4
