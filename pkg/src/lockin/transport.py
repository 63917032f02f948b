"""Sample-loop ownership and the stdio/TCP line transports.

One ``DeviceRunner`` owns the instrument and advances it window by
window. Command lines and frame lines cross thread boundaries only via
ordered queues; commands are applied between windows, and frame fan-out
never blocks the loop (bounded per-subscriber queues drop the oldest
frame and count the loss).
"""

from __future__ import annotations

import queue
import socket
import sys
import threading
import time
from dataclasses import dataclass

from .device import ExternalReference, Instrument, InstrumentConfig
from .frontend import FrontEndConfig
from .protocol import FRAME_INTERVAL_S, CommandError, format_frame, parse_command
from .signals import SignalSampler, SignalSpec, Sine

SUBSCRIBER_QUEUE_FRAMES = 64
ZERO_SIGNAL = Sine(amplitude_mv=0.0, frequency_hz=1.0)


class Subscriber:
    """Bounded frame mailbox; overflow drops the oldest line."""

    def __init__(self, maxsize: int = SUBSCRIBER_QUEUE_FRAMES):
        self.lines: queue.Queue[str] = queue.Queue(maxsize=maxsize)
        self.dropped = 0

    def push(self, line: str) -> None:
        while True:
            try:
                self.lines.put_nowait(line)
                return
            except queue.Full:
                try:
                    self.lines.get_nowait()
                    self.dropped += 1
                except queue.Empty:
                    pass

    def get(self, timeout: float | None = None) -> str:
        return self.lines.get(timeout=timeout)


@dataclass
class _Pending:
    line: str
    reply: queue.Queue


class DeviceRunner:
    """Owns one instrument and its input signal; single loop advances both."""

    def __init__(
        self,
        config: InstrumentConfig | None = None,
        front_end: FrontEndConfig | None = None,
        external: ExternalReference | None = None,
        signal: SignalSpec | None = None,
    ):
        self.instrument = Instrument(
            config=config, front_end=front_end, external=external
        )
        self.signal: SignalSpec = signal if signal is not None else ZERO_SIGNAL
        self._sampler: SignalSampler | None = None
        self._commands: queue.Queue[_Pending] = queue.Queue()
        self._subscribers: list[Subscriber] = []
        self._sub_lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.last_frame = None
        self.last_line = ""

    # -- client side ----------------------------------------------------------

    def subscribe(self) -> Subscriber:
        sub = Subscriber()
        with self._sub_lock:
            self._subscribers.append(sub)
        return sub

    def unsubscribe(self, sub: Subscriber) -> None:
        with self._sub_lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)

    def submit(self, line: str, timeout: float = 2.0) -> str | None:
        """Queue one command line; returns the diagnostic, if any.

        Parse failures are reported immediately without touching state;
        valid commands are applied by the loop between windows. A zero
        timeout queues without waiting for the applied-side diagnostic.
        """
        try:
            parse_command(line)
        except CommandError as exc:
            return str(exc)
        pending = _Pending(line=line, reply=queue.Queue(maxsize=1))
        self._commands.put(pending)
        if self._thread is None or not self._thread.is_alive():
            self._drain_commands()
        if timeout <= 0.0:
            return None
        try:
            return pending.reply.get(timeout=timeout)
        except queue.Empty:
            return "device busy: command not yet applied"

    def set_signal(self, spec: SignalSpec | None) -> None:
        """Swap the simulated input; takes effect at the next window."""
        self.signal = spec if spec is not None else ZERO_SIGNAL
        self._sampler = None

    # -- loop side --------------------------------------------------------------

    def _drain_commands(self) -> None:
        while True:
            try:
                pending = self._commands.get_nowait()
            except queue.Empty:
                return
            diagnostic = self.instrument.apply_line(pending.line)
            try:
                pending.reply.put_nowait(diagnostic)
            except queue.Full:
                pass

    def _sampler_for_rate(self, rate: float) -> SignalSampler:
        if self._sampler is None or self._sampler.tick_rate_hz != rate:
            oversample = (
                1
                if self.instrument.front_cfg.bypass
                else self.instrument.front_cfg.oversample
            )
            self._sampler = SignalSampler(
                self.signal, rate, oversample=oversample
            )
        return self._sampler

    def step_window(self) -> str:
        """Advance one 0.1 s window and return the emitted frame line."""
        self._drain_commands()
        inst = self.instrument
        if inst.locked:
            n_ticks = inst.window_ticks()
            if n_ticks > 0:
                inst.process_window(
                    self._sampler_for_rate(inst.true_rate_hz), n_ticks
                )
        frame = inst.emit_frame()
        line = format_frame(frame)
        self.last_frame = frame
        self.last_line = line
        with self._sub_lock:
            for sub in self._subscribers:
                sub.push(line)
        return line

    def run(self, real_time: bool = True, duration_s: float | None = None) -> None:
        """Loop windows until stopped; paces the wall clock in real time."""
        self._stop.clear()
        start = time.monotonic()
        k = 0
        while not self._stop.is_set():
            if duration_s is not None and k * FRAME_INTERVAL_S >= duration_s:
                return
            if real_time:
                target = start + (k + 1) * FRAME_INTERVAL_S
                delay = target - time.monotonic()
                if delay > 0:
                    if self._stop.wait(delay):
                        return
            self.step_window()
            k += 1

    def start(self, real_time: bool = True) -> None:
        self._thread = threading.Thread(
            target=self.run, kwargs={"real_time": real_time}, daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None


def run_stdio(
    runner: DeviceRunner,
    real_time: bool = True,
    duration_s: float | None = None,
    stdin=None,
    stdout=None,
) -> None:
    """Commands on stdin, frames on stdout, exactly the wire format."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    sub = runner.subscribe()
    writer_stop = threading.Event()

    def read_commands() -> None:
        for raw in stdin:
            if not raw.strip():
                continue
            runner.submit(raw)

    def write_frames() -> None:
        while not writer_stop.is_set():
            try:
                line = sub.get(timeout=0.2)
            except queue.Empty:
                continue
            stdout.write(line)
            stdout.flush()

    reader = threading.Thread(target=read_commands, daemon=True)
    writer = threading.Thread(target=write_frames, daemon=True)
    reader.start()
    writer.start()
    try:
        runner.run(real_time=real_time, duration_s=duration_s)
        # let the writer flush what the run produced
        while not sub.lines.empty():
            time.sleep(0.01)
    finally:
        writer_stop.set()
        writer.join(timeout=1.0)
        runner.unsubscribe(sub)


class TcpServer:
    """Line protocol over TCP; serves one client at a time."""

    def __init__(self, runner: DeviceRunner, host: str = "127.0.0.1", port: int = 0):
        self.runner = runner
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(1)
        self.host, self.port = self._sock.getsockname()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        self._sock.settimeout(0.2)
        while not self._stop.is_set():
            try:
                client, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                self._handle(client)
            finally:
                client.close()

    def _handle(self, client: socket.socket) -> None:
        sub = self.runner.subscribe()
        done = threading.Event()

        def read_commands() -> None:
            buf = b""
            client.settimeout(0.2)
            while not done.is_set():
                try:
                    chunk = client.recv(4096)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf or b"\r" in buf:
                    for sep in (b"\n", b"\r"):
                        if sep in buf:
                            line, buf = buf.split(sep, 1)
                            if line.strip():
                                self.runner.submit(line.decode("ascii", "replace"))
                            break
            done.set()

        reader = threading.Thread(target=read_commands, daemon=True)
        reader.start()
        try:
            while not done.is_set() and not self._stop.is_set():
                try:
                    line = sub.get(timeout=0.2)
                except queue.Empty:
                    continue
                try:
                    client.sendall(line.encode("ascii"))
                except OSError:
                    break
        finally:
            done.set()
            reader.join(timeout=1.0)
            self.runner.unsubscribe(sub)

    def stop(self) -> None:
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None
