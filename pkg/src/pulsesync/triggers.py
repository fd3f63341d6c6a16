"""Deterministic pulse counting and counter -> wavelength assignment.

The frame counter is the single authority for which wavelength produced a
frame. A pulse counts only when a Q-switch edge follows a flashlamp edge
within the pairing window; flashlamp-only activity (the laser's preparation
phase) never counts. Count 1 is the sequence-priming dummy pulse fired by
the fast-tuning mode, so frames become effective at count 2, and the
zero-based effective frame index is ``k = count - 2``. That offset fixes
the phase of both packaging layouts and everything downstream uses it
through :func:`assign_wavelength`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import ConfigError, MonotonicityError, ShiftUnderflowError

# 500 us: far below the 50 ms pulse period at 20 Hz, so pairing is unambiguous.
DEFAULT_PAIRING_WINDOW_NS = 500_000

# Frames become effective at this count; count 1 is the dummy pulse.
EFFECTIVE_COUNT_OFFSET = 2


class TriggerKind(enum.Enum):
    FLASHLAMP = "flashlamp"
    QSWITCH = "qswitch"


@dataclass(frozen=True)
class TriggerEvent:
    kind: TriggerKind
    timestamp_ns: int


class Layout(enum.Enum):
    BLOCK = "block"
    CYCLIC = "cyclic"


@dataclass(frozen=True)
class WavelengthSequence:
    """The programmed wavelength sequence and its packaging layout.

    ``frames_per_wavelength`` (N) frames are averaged per wavelength per
    package; cyclic interleaves wavelengths one frame at a time, block runs
    N consecutive frames per wavelength.
    """

    wavelengths_nm: tuple[float, ...]
    layout: Layout
    frames_per_wavelength: int

    def __post_init__(self):
        if len(self.wavelengths_nm) < 1:
            raise ConfigError("sequence needs at least one wavelength")
        if len(set(self.wavelengths_nm)) != len(self.wavelengths_nm):
            raise ConfigError(f"wavelengths must be pairwise distinct: {self.wavelengths_nm}")
        if self.frames_per_wavelength < 1:
            raise ConfigError("frames_per_wavelength must be >= 1")
        if not isinstance(self.layout, Layout):
            raise ConfigError(f"layout must be a Layout, got {self.layout!r}")

    @property
    def num_wavelengths(self) -> int:
        return len(self.wavelengths_nm)

    @property
    def frames_per_package(self) -> int:
        return self.num_wavelengths * self.frames_per_wavelength


class PulseCounter:
    """Micro-controller stand-in: deterministic flashlamp/Q-switch pairing.

    A flashlamp edge arms the counter (a later flashlamp re-arms it,
    most-recent-wins); a Q-switch edge within the pairing window consumes
    the armed flashlamp and increments the count by exactly one. A Q-switch
    with no armed flashlamp is dropped; one outside the window only expires
    the armed flashlamp.
    """

    def __init__(self, pairing_window_ns: int = DEFAULT_PAIRING_WINDOW_NS):
        if pairing_window_ns <= 0:
            raise ConfigError("pairing window must be positive")
        self.pairing_window_ns = pairing_window_ns
        self._count = 0
        self._pending_flashlamp_ns: int | None = None
        self._last_timestamp_ns: int | None = None

    @property
    def count(self) -> int:
        return self._count

    @property
    def pending_flashlamp_ns(self) -> int | None:
        return self._pending_flashlamp_ns

    def ingest(self, event: TriggerEvent) -> None:
        if self._last_timestamp_ns is not None and event.timestamp_ns < self._last_timestamp_ns:
            raise MonotonicityError(
                f"trigger at {event.timestamp_ns} ns after one at {self._last_timestamp_ns} ns"
            )
        self._last_timestamp_ns = event.timestamp_ns
        if event.kind is TriggerKind.FLASHLAMP:
            self._pending_flashlamp_ns = event.timestamp_ns
            return
        if self._pending_flashlamp_ns is None:
            return
        if event.timestamp_ns - self._pending_flashlamp_ns <= self.pairing_window_ns:
            self._count += 1
        self._pending_flashlamp_ns = None

    def query_count(self) -> int:
        return self._count

    def reset(self) -> None:
        self._count = 0
        self._pending_flashlamp_ns = None
        self._last_timestamp_ns = None


def is_effective_frame(count: int) -> bool:
    """True for frames that belong to the programmed sequence.

    Count 0 means nothing has lased yet and count 1 is the dummy pulse, so
    only counts of 2 or more carry data.
    """
    return count >= EFFECTIVE_COUNT_OFFSET


@dataclass(frozen=True)
class FrameSlot:
    wavelength_index: int
    package_index: int
    slot_index: int


def assign_wavelength(
    seq: WavelengthSequence,
    count: int,
    shift: int = 0,
    *,
    counter_offset: int = EFFECTIVE_COUNT_OFFSET,
) -> FrameSlot:
    """Map a frame counter value to (wavelength, package, slot).

    ``shift`` displaces the effective frame index; it exists so one recorded
    stream can be re-analyzed under deliberate desynchronization without
    touching the counter. ``counter_offset`` is the count of the first
    effective frame (2 under the fast-tuning dummy-pulse convention).
    """
    k = count - counter_offset + shift
    if k < 0:
        raise ShiftUnderflowError(
            f"count {count} with shift {shift:+d} lands before the sequence start"
        )
    w = seq.num_wavelengths
    n = seq.frames_per_wavelength
    if seq.layout is Layout.CYCLIC:
        return FrameSlot(
            wavelength_index=k % w,
            package_index=k // (n * w),
            slot_index=(k // w) % n,
        )
    return FrameSlot(
        wavelength_index=(k // n) % w,
        package_index=k // (n * w),
        slot_index=k % n,
    )
