"""Software digital lock-in amplifier.

Core demodulation (`dsp`), digitisation scheduling (`timing`), the
analogue front-end model (`frontend`), test-signal synthesis
(`signals`), the serial line codec (`protocol`), the virtual instrument
(`device`), experiment scenarios (`lab`), transports (`transport`), and
the HTTP/WebSocket service (`api`).
"""

from .device import ExternalReference, Instrument, InstrumentConfig
from .frontend import FrontEndConfig
from .protocol import OutputFrame, format_frame, parse_command, parse_frame
from .signals import (
    ReferenceDriven,
    Sine,
    Square,
    StepEnvelope,
    Sum,
    WhiteNoise,
)

__all__ = [
    "ExternalReference",
    "FrontEndConfig",
    "Instrument",
    "InstrumentConfig",
    "OutputFrame",
    "ReferenceDriven",
    "Sine",
    "Square",
    "StepEnvelope",
    "Sum",
    "WhiteNoise",
    "format_frame",
    "parse_command",
    "parse_frame",
]

__version__ = "0.1.0"
