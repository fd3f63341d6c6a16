"""Trigger-counted multi-wavelength photoacoustic streaming toolkit.

A desk-scale, hardware-free pipeline: a simulated fast-tuning laser with a
deterministic pulse-counting micro-controller, an acquisition host that
tags every RF frame with the hardware frame counter and streams it over a
binary TCP protocol, a server that demultiplexes frames by wavelength with
drop-tolerant averaging, an SPSC exchange ring, and a consumer that turns
averaged packages into blue/black ratio spectra and runs the counter-shift
alignment check.
"""

__version__ = "0.1.0"

from .client import EnergyTable, SpectrumGeometry, SpectrumResult
from .errors import PulseSyncError
from .protocol import StreamDecoder, StreamPacket, decode_all, encode_packet
from .ring import PackageRing, SharedMemoryRing
from .server import PackageAccumulator, StreamServer, WavelengthPackage
from .simulate import DaqPathology, LaserConfig, PhantomModel, PhantomTarget, RFFrame
from .triggers import (
    Layout,
    PulseCounter,
    TriggerEvent,
    TriggerKind,
    WavelengthSequence,
    assign_wavelength,
    is_effective_frame,
)

__all__ = [
    "DaqPathology",
    "EnergyTable",
    "LaserConfig",
    "Layout",
    "PackageAccumulator",
    "PackageRing",
    "PhantomModel",
    "PhantomTarget",
    "PulseCounter",
    "PulseSyncError",
    "RFFrame",
    "SharedMemoryRing",
    "SpectrumGeometry",
    "SpectrumResult",
    "StreamDecoder",
    "StreamPacket",
    "StreamServer",
    "TriggerEvent",
    "TriggerKind",
    "WavelengthPackage",
    "WavelengthSequence",
    "assign_wavelength",
    "decode_all",
    "encode_packet",
    "is_effective_frame",
]
