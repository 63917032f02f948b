"""Line codec for the instrument's serial interface.

Commands are single letters with an optional numeric argument (a bare
number sets the internal reference frequency); output frames are 22
space-separated fields ending in CRLF. Field text formats are fixed so a
valid frame re-encodes byte-identically after parsing.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Union

ALLOWED_GAINS = (0, 1, 2, 4, 8, 16, 32, 64)
FREQUENCY_RANGE_HZ = (1.0, 50_000.0)
TIME_CONSTANT_RANGE_S = (0.01, 10.0)
OUTPUT_GAIN_RANGE = (0.0, 1e6)
UNDERSAMPLING_VALUES = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
MIN_HARMONIC = 2
FRAME_FIELD_COUNT = 22
FRAME_INTERVAL_S = 0.1


class CommandError(ValueError):
    """Command line rejected; the message is the diagnostic."""


class FrameError(ValueError):
    """Frame line rejected; the message is the diagnostic."""


@dataclass(frozen=True)
class ToggleSyncFilter:
    pass


@dataclass(frozen=True)
class ToggleReferenceMode:
    pass


@dataclass(frozen=True)
class SetFrequency:
    hz: float


@dataclass(frozen=True)
class SetInputGain:
    n: int


@dataclass(frozen=True)
class SetTimeConstant:
    seconds: float


@dataclass(frozen=True)
class SetOutputGain:
    value: float


@dataclass(frozen=True)
class SetLowestHarmonic:
    n: int


@dataclass(frozen=True)
class QueryExternalFrequency:
    pass


Command = Union[
    ToggleSyncFilter,
    ToggleReferenceMode,
    SetFrequency,
    SetInputGain,
    SetTimeConstant,
    SetOutputGain,
    SetLowestHarmonic,
    QueryExternalFrequency,
]


def parse_command(line: str) -> Command:
    """Parse one terminated command line into a validated Command."""
    text = line.strip("\r\n \t")
    if not text:
        raise CommandError("empty command")
    head = text[0]
    if head.isdigit() or head in "+-.":
        hz = _number(text, "reference frequency")
        lo, hi = FREQUENCY_RANGE_HZ
        if not lo <= hz <= hi:
            raise CommandError(
                f"reference frequency {hz} Hz outside [{lo}, {hi}] Hz"
            )
        return SetFrequency(hz=hz)
    arg = text[1:]
    if head == "t":
        _no_arg(arg, "t")
        return ToggleSyncFilter()
    if head == "r":
        _no_arg(arg, "r")
        return ToggleReferenceMode()
    if head == "c":
        _no_arg(arg, "c")
        return QueryExternalFrequency()
    if head == "g":
        n = _integer(arg, "input gain")
        if n not in ALLOWED_GAINS:
            raise CommandError(f"input gain {n} not in {ALLOWED_GAINS}")
        return SetInputGain(n=n)
    if head == "e":
        seconds = _number(arg, "time constant")
        lo, hi = TIME_CONSTANT_RANGE_S
        if not lo <= seconds <= hi:
            raise CommandError(f"time constant {seconds} s outside [{lo}, {hi}] s")
        return SetTimeConstant(seconds=seconds)
    if head == "s":
        value = _number(arg, "output gain")
        lo, hi = OUTPUT_GAIN_RANGE
        if not lo <= value <= hi:
            raise CommandError(f"output gain {value} outside [{lo}, {hi}]")
        return SetOutputGain(value=value)
    if head == "h":
        n = _integer(arg, "lowest higher harmonic")
        if n < MIN_HARMONIC:
            raise CommandError(
                f"lowest higher harmonic {n} below minimum {MIN_HARMONIC}"
            )
        return SetLowestHarmonic(n=n)
    raise CommandError(f"unknown command letter {head!r}")


def _no_arg(arg: str, letter: str) -> None:
    if arg:
        raise CommandError(f"command {letter!r} takes no argument, got {arg!r}")


def _number(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise CommandError(f"{what}: {text!r} is not a number") from None


def _integer(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise CommandError(f"{what}: {text!r} is not an integer") from None


@dataclass
class OutputFrame:
    """The 22-field output record, in wire order."""

    error: int = 0  # bit 1 clipping, bit 2 lock failure
    output_gain: float = 10.0
    input_gain: int = 1
    sync_on: bool = False
    external_on: bool = False
    samples_per_period: int = 0
    sample_rate_hz: float = 0.0
    reference_hz: float = 0.0
    time_constant_s: float = 0.0
    undersampling: float = 0.0  # 0 in internal mode
    r1: float = 0.0  # mV
    phi1: float = 0.0  # radians
    s1: float = 0.0  # mV
    x1: float = 0.0  # mV
    y1: float = 0.0  # mV
    x_n: float = 0.0
    x_n1: float = 0.0
    x_n2: float = 0.0
    y_n: float = 0.0
    y_n1: float = 0.0
    y_n2: float = 0.0
    lowest_harmonic: int = 2

    def validate(self) -> None:
        if self.error not in (0, 1, 2, 3):
            raise FrameError(f"error indicator {self.error} not in 0..3")
        lo, hi = OUTPUT_GAIN_RANGE
        if not lo <= self.output_gain <= hi:
            raise FrameError(f"output gain {self.output_gain} outside [{lo}, {hi}]")
        if self.input_gain not in ALLOWED_GAINS:
            raise FrameError(f"input gain {self.input_gain} not in {ALLOWED_GAINS}")
        if self.samples_per_period < 0:
            raise FrameError(
                f"samples per period {self.samples_per_period} negative"
            )
        if self.sample_rate_hz < 0.0 or self.reference_hz < 0.0:
            raise FrameError("rates must be non-negative")
        if self.time_constant_s < 0.0:
            raise FrameError(f"time constant {self.time_constant_s} negative")
        if self.undersampling not in UNDERSAMPLING_VALUES:
            raise FrameError(
                f"undersampling {self.undersampling} not in {UNDERSAMPLING_VALUES}"
            )
        if (self.undersampling == 0.0) != (not self.external_on):
            raise FrameError(
                "undersampling must be 0 exactly in internal reference mode"
            )
        if self.r1 < 0.0:
            raise FrameError(f"total amplitude {self.r1} negative")
        if self.lowest_harmonic < MIN_HARMONIC:
            raise FrameError(
                f"lowest higher harmonic {self.lowest_harmonic} below "
                f"{MIN_HARMONIC}"
            )


def _format_undersampling(n: float) -> str:
    if n == 0.0:
        return "0"
    if n == 0.5:
        return "0.5"
    return str(int(n))


def format_frame(frame: OutputFrame) -> str:
    """Encode a valid frame as its wire line, CRLF-terminated."""
    frame.validate()
    f = frame
    parts = [
        str(f.error),
        f"{f.output_gain:.2f}",
        str(f.input_gain),
        str(int(f.sync_on)),
        str(int(f.external_on)),
        str(f.samples_per_period),
        f"{f.sample_rate_hz:.2f}",
        f"{f.reference_hz:.2f}",
        f"{f.time_constant_s:.2f}",
        _format_undersampling(f.undersampling),
    ]
    parts += [
        f"{v:.5f}"
        for v in (
            f.r1, f.phi1, f.s1, f.x1, f.y1,
            f.x_n, f.x_n1, f.x_n2, f.y_n, f.y_n1, f.y_n2,
        )
    ]
    parts.append(str(f.lowest_harmonic))
    return " ".join(parts) + "\r\n"


def parse_frame(line: str) -> OutputFrame:
    """Decode one frame line; raises FrameError with a specific diagnostic."""
    tokens = line.split()
    if len(tokens) != FRAME_FIELD_COUNT:
        raise FrameError(
            f"expected {FRAME_FIELD_COUNT} fields, got {len(tokens)}"
        )
    names = [fld.name for fld in fields(OutputFrame)]
    ints = {"error", "input_gain", "samples_per_period", "lowest_harmonic"}
    flags = {"sync_on", "external_on"}
    values: dict[str, object] = {}
    for name, token in zip(names, tokens):
        if name in ints:
            try:
                values[name] = int(token)
            except ValueError:
                raise FrameError(f"field {name}: {token!r} is not an integer") from None
        elif name in flags:
            if token not in ("0", "1"):
                raise FrameError(f"field {name}: {token!r} is not 0 or 1")
            values[name] = token == "1"
        else:
            try:
                values[name] = float(token)
            except ValueError:
                raise FrameError(f"field {name}: {token!r} is not a number") from None
    frame = OutputFrame(**values)
    frame.validate()
    return frame
