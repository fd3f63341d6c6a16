"""Software stand-ins for the tunable laser, the two-wire phantom, and the
acquisition host.

The laser emits a deterministic trigger schedule: flashlamp-only pulses
during the preparation phase, then flashlamp + Q-switch pairs once lasing
starts, with the first effective pulse being the sequence-priming dummy.
The acquisition loop is triggered by each flashlamp, records a frame after
a (jittered) start delay, queries the counter, and streams the frame when
the count says it is effective. Pathologies -- random frame drops, busy
bursts, start-delay jitter -- affect only the acquisition side; the counter
keeps following the triggers, which is the whole point.

Everything runs off an ordered event queue against a virtual (or wall)
clock, so runs are fast, deterministic for a given seed, and the three
actors (laser feed, counter, DAQ) interact only through the queue, the
counter query channel, and the packet sink.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .clock import VirtualClock
from .errors import (
    ConfigError,
    ConnectivityError,
    CounterQueryError,
    SimulationInvariantError,
)
from .triggers import (
    Layout,
    PulseCounter,
    TriggerEvent,
    TriggerKind,
    WavelengthSequence,
    assign_wavelength,
    is_effective_frame,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LaserConfig:
    sequence: WavelengthSequence
    total_effective_pulses: int
    rep_rate_hz: float = 20.0
    prep_flashlamp_pulses: int = 5
    qswitch_delay_ns: int = 200_000
    energy_jitter: float = 0.05  # per-pulse energy = 1 + uniform(+/- jitter)

    def __post_init__(self):
        if self.rep_rate_hz <= 0:
            raise ConfigError("rep_rate_hz must be positive")
        if self.total_effective_pulses < 1:
            raise ConfigError("total_effective_pulses must be >= 1")
        if self.prep_flashlamp_pulses < 0:
            raise ConfigError("prep_flashlamp_pulses must be >= 0")
        if not 0 <= self.energy_jitter < 1:
            raise ConfigError("energy_jitter must be in [0, 1)")
        if self.qswitch_delay_ns <= 0 or self.qswitch_delay_ns >= self.period_ns:
            raise ConfigError("qswitch_delay_ns must fall inside the pulse period")

    @property
    def period_ns(self) -> int:
        return round(1e9 / self.rep_rate_hz)


@dataclass(frozen=True)
class PhantomTarget:
    name: str
    axial: int
    lateral: int
    spectrum: tuple[float, ...]  # relative absorption per wavelength


@dataclass(frozen=True)
class PhantomModel:
    """Point targets in water plus a noise floor.

    Target peak amplitude for wavelength w is
    ``base_amplitude * pulse_energy * spectrum[w]``; noise_sigma is relative
    to base_amplitude.
    """

    targets: tuple[PhantomTarget, ...]
    frame_dims: tuple[int, int] = (512, 128)
    noise_sigma: float = 0.0
    point_spread: tuple[float, float] = (1.5, 1.5)  # gaussian sigma, samples
    base_amplitude: float = 8000.0

    def __post_init__(self):
        axial, lateral = self.frame_dims
        if axial < 1 or lateral < 1:
            raise ConfigError(f"frame dims must be >= 1, got {self.frame_dims}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.base_amplitude <= 0:
            raise ConfigError("base_amplitude must be positive")
        if min(self.point_spread) <= 0:
            raise ConfigError("point_spread sigmas must be positive")
        lengths = {len(t.spectrum) for t in self.targets}
        if len(lengths) > 1:
            raise ConfigError("all target spectra must have the same length")
        for t in self.targets:
            if any(v <= 0 for v in t.spectrum):
                raise ConfigError(f"target {t.name!r} spectrum must be positive")
            if not (0 <= t.axial < axial and 0 <= t.lateral < lateral):
                raise ConfigError(f"target {t.name!r} lies outside the frame")

    def target(self, name: str) -> PhantomTarget:
        for t in self.targets:
            if t.name == name:
                return t
        raise ConfigError(f"phantom has no target named {name!r}")


@dataclass(frozen=True)
class DaqPathology:
    """Injectable acquisition-side failure modes; the laser never stumbles."""

    frame_drop_probability: float = 0.0
    start_delay_mean_ns: int = 100_000
    start_delay_jitter_ns: int = 50_000
    busy_bursts: tuple[tuple[int, int], ...] = ()  # (first count, pulses): all dropped
    axial_shift_per_ns: float = 0.0  # start-delay deviation -> axial sample shift

    def __post_init__(self):
        if not 0.0 <= self.frame_drop_probability <= 1.0:
            raise ConfigError("frame_drop_probability must be in [0, 1]")
        if self.start_delay_jitter_ns < 0:
            raise ConfigError("start_delay_jitter_ns must be >= 0")
        if self.start_delay_mean_ns < 0:
            raise ConfigError("start_delay_mean_ns must be >= 0")

    def burst_covers(self, count: int) -> bool:
        return any(start <= count < start + length for start, length in self.busy_bursts)

    @classmethod
    def none(cls) -> "DaqPathology":
        return cls(frame_drop_probability=0.0, start_delay_jitter_ns=0)


@dataclass(frozen=True)
class RFFrame:
    samples: np.ndarray  # (axial, lateral) int16
    acquisition_timestamp_ns: int = 0
    clipped: bool = False

    @property
    def dims(self) -> tuple[int, int]:
        return self.samples.shape  # type: ignore[return-value]


def generate_trigger_schedule(config: LaserConfig) -> list[TriggerEvent]:
    """Preparation flashlamps, then flashlamp + Q-switch per effective pulse."""
    events: list[TriggerEvent] = []
    period = config.period_ns
    for i in range(config.prep_flashlamp_pulses):
        events.append(TriggerEvent(TriggerKind.FLASHLAMP, i * period))
    base = config.prep_flashlamp_pulses * period
    for j in range(config.total_effective_pulses):
        t = base + j * period
        events.append(TriggerEvent(TriggerKind.FLASHLAMP, t))
        events.append(TriggerEvent(TriggerKind.QSWITCH, t + config.qswitch_delay_ns))
    return events


def synthesize_frame(
    phantom: PhantomModel,
    wavelength_index: int,
    pulse_energy: float,
    rng_seed: int,
    *,
    timestamp_ns: int = 0,
    lasing: bool = True,
    axial_shift: int = 0,
) -> RFFrame:
    """Forward model: one RF frame for one pulse.

    Deterministic for a given seed. ``lasing=False`` produces the noise-only
    frame recorded when a preparation flashlamp triggers the DAQ without an
    actual laser pulse.
    """
    if pulse_energy <= 0:
        raise ConfigError("pulse_energy must be positive")
    canvas = np.zeros(phantom.frame_dims, dtype=np.float64)
    if lasing:
        sa, sl = phantom.point_spread
        for t in phantom.targets:
            if wavelength_index >= len(t.spectrum):
                raise ConfigError(
                    f"wavelength index {wavelength_index} outside spectrum of {t.name!r}"
                )
            amp = phantom.base_amplitude * pulse_energy * t.spectrum[wavelength_index]
            kernels.deposit_gaussian(canvas, t.axial + axial_shift, t.lateral, amp, sa, sl)
    if phantom.noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        canvas += rng.normal(0.0, phantom.noise_sigma * phantom.base_amplitude, canvas.shape)
    samples, clipped = kernels.quantize_int16(canvas)
    return RFFrame(samples=samples, acquisition_timestamp_ns=timestamp_ns, clipped=clipped)


def _wavelength_program(seq: WavelengthSequence):
    """The order the laser actually fires the programmed sequence in.

    Enumerated step by step -- deliberately not via assign_wavelength -- so
    the simulator carries an independent ground truth for every pulse.
    """
    w = seq.num_wavelengths
    n = seq.frames_per_wavelength
    if seq.layout is Layout.CYCLIC:
        return itertools.cycle(range(w))
    return itertools.cycle(itertools.chain.from_iterable(itertools.repeat(i, n) for i in range(w)))


class DirectCounterChannel:
    """In-process counter query channel (no wire)."""

    def __init__(self, counter: PulseCounter):
        self._counter = counter

    def query(self) -> int:
        return self._counter.query_count()


class CollectSink:
    """Packet sink that keeps everything in memory; for tests and replays."""

    def __init__(self):
        self.packets: list[tuple[int, RFFrame, int]] = []

    def send(self, counter: int, frame: RFFrame, flags: int = 0) -> None:
        self.packets.append((counter, frame, flags))


@dataclass
class PulseRecord:
    pulse_index: int  # over all flashlamps, prep included
    count: int  # counter value (ground truth for pulses that never queried)
    status: str  # emitted | dropped | dummy | prep
    true_wavelength_index: int | None = None
    energy: float | None = None
    start_delay_ns: int | None = None


@dataclass
class DaqRunReport:
    records: list[PulseRecord] = field(default_factory=list)
    virtual_duration_ns: int = 0
    wall_seconds: float = 0.0
    mean_energy_per_wavelength: list[float] = field(default_factory=list)

    @property
    def emitted_counters(self) -> list[int]:
        return [r.count for r in self.records if r.status == "emitted"]

    @property
    def dropped_counters(self) -> list[int]:
        return [r.count for r in self.records if r.status == "dropped"]

    @property
    def dummy_suppressed(self) -> int:
        return sum(1 for r in self.records if r.status == "dummy")

    @property
    def prep_suppressed(self) -> int:
        return sum(1 for r in self.records if r.status == "prep")

    def summary(self) -> dict:
        return {
            "pulses": len(self.records),
            "emitted": len(self.emitted_counters),
            "dropped": len(self.dropped_counters),
            "dummy_suppressed": self.dummy_suppressed,
            "prep_suppressed": self.prep_suppressed,
            "virtual_duration_s": self.virtual_duration_ns / 1e9,
            "wall_seconds": round(self.wall_seconds, 3),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["pulse_index", "count", "status", "true_wavelength_index", "energy", "start_delay_ns"]
            )
            for r in self.records:
                writer.writerow(
                    [
                        r.pulse_index,
                        r.count,
                        r.status,
                        "" if r.true_wavelength_index is None else r.true_wavelength_index,
                        "" if r.energy is None else f"{r.energy:.9f}",
                        "" if r.start_delay_ns is None else r.start_delay_ns,
                    ]
                )


_PRIO_TRIGGER = 0
_PRIO_DAQ = 1


def run_daq(
    laser: LaserConfig,
    phantom: PhantomModel,
    pathology: DaqPathology,
    counter_channel,
    sink,
    *,
    seed: int,
    counter: PulseCounter | None = None,
    clock=None,
    acquisition_duration_ns: int = 1_000_000,
    on_first_flashlamp=None,
) -> DaqRunReport:
    """Drive one full acquisition run off the trigger schedule.

    ``counter`` is the pulse counter the trigger feed drives (a fresh one by
    default); ``counter_channel`` is how the DAQ asks for the count (pass
    None to query the local counter directly). The DAQ never sees the
    laser's program: wavelength identity downstream comes from the counter
    alone, and this function raises SimulationInvariantError if the
    assignment rule ever disagrees with the program.
    """
    if counter is None:
        counter = PulseCounter()
    if counter_channel is None:
        counter_channel = DirectCounterChannel(counter)
    if clock is None:
        clock = VirtualClock()
    seq = laser.sequence
    schedule = generate_trigger_schedule(laser)
    prep = laser.prep_flashlamp_pulses
    total_fl = prep + laser.total_effective_pulses

    rng = np.random.default_rng(seed)
    energies = 1.0 + rng.uniform(
        -laser.energy_jitter, laser.energy_jitter, laser.total_effective_pulses
    )
    delays = pathology.start_delay_mean_ns + rng.uniform(
        -pathology.start_delay_jitter_ns, pathology.start_delay_jitter_ns, total_fl
    )
    delays = np.rint(delays).astype(np.int64)
    drop_draws = rng.uniform(0.0, 1.0, total_fl)
    frame_seeds = rng.integers(0, 2**63 - 1, total_fl, dtype=np.int64)

    if (
        pathology.start_delay_mean_ns - pathology.start_delay_jitter_ns + acquisition_duration_ns
        <= laser.qswitch_delay_ns
    ):
        raise ConfigError("acquisition would finish before the Q-switch fires; count would be stale")

    program = _wavelength_program(seq)
    # ground truth per effective pulse: pulse 1 is the dummy warm-up shot
    # (first programmed entry), pulses 2.. consume the program in firing order
    true_w_by_count: dict[int, int] = {1: 0}
    for c in range(2, laser.total_effective_pulses + 1):
        true_w_by_count[c] = next(program)

    heap: list[tuple[int, int, int, str, object]] = []
    tick = itertools.count()
    for ev in schedule:
        heapq.heappush(heap, (ev.timestamp_ns, _PRIO_TRIGGER, next(tick), "trigger", ev))

    report = DaqRunReport()
    energy_sums: dict[int, list[float]] = {}
    fl_index = 0
    saw_first_fl = False
    wall_start = time.monotonic()

    while heap:
        t_ns, _prio, _tick, kind, payload = heapq.heappop(heap)
        clock.advance_to(t_ns)
        if kind == "trigger":
            ev: TriggerEvent = payload  # type: ignore[assignment]
            counter.ingest(ev)
            if ev.kind is TriggerKind.FLASHLAMP:
                if not saw_first_fl:
                    saw_first_fl = True
                    if on_first_flashlamp is not None:
                        on_first_flashlamp()
                i = fl_index
                fl_index += 1
                ground_count = 0 if i < prep else i - prep + 1
                if i >= prep and (
                    drop_draws[i] < pathology.frame_drop_probability
                    or pathology.burst_covers(ground_count)
                ):
                    report.records.append(PulseRecord(i, ground_count, "dropped"))
                    continue
                if i < prep and drop_draws[i] < pathology.frame_drop_probability:
                    report.records.append(PulseRecord(i, 0, "prep"))
                    continue
                done_t = t_ns + int(delays[i]) + acquisition_duration_ns
                heapq.heappush(
                    heap, (done_t, _PRIO_DAQ, next(tick), "daq_done", (i, t_ns, ground_count))
                )
        else:
            i, fl_t, ground_count = payload  # type: ignore[misc]
            delay = int(delays[i])
            axial_shift = (
                round((delay - pathology.start_delay_mean_ns) * pathology.axial_shift_per_ns)
                if pathology.axial_shift_per_ns
                else 0
            )
            lasing = ground_count >= 1
            energy = float(energies[ground_count - 1]) if lasing else 1.0
            true_w = true_w_by_count.get(ground_count) if lasing else None
            frame = synthesize_frame(
                phantom,
                true_w if true_w is not None else 0,
                energy,
                int(frame_seeds[i]),
                timestamp_ns=fl_t + delay,
                lasing=lasing,
                axial_shift=axial_shift,
            )
            try:
                count = counter_channel.query()
            except CounterQueryError as exc:
                raise ConnectivityError(f"counter query channel unavailable: {exc}") from exc
            if count != ground_count:
                raise SimulationInvariantError(
                    f"counter read {count} but the schedule says pulse {ground_count}"
                )
            if not is_effective_frame(count):
                status = "dummy" if count == 1 else "prep"
                report.records.append(
                    PulseRecord(i, count, status, true_w, energy if lasing else None, delay)
                )
                continue
            expected = assign_wavelength(seq, count).wavelength_index
            if expected != true_w:
                raise SimulationInvariantError(
                    f"count {count}: assignment rule says wavelength {expected}, "
                    f"laser fired {true_w}"
                )
            flags = 1 if frame.clipped else 0
            sink.send(count, frame, flags)
            report.records.append(PulseRecord(i, count, "emitted", true_w, energy, delay))
            energy_sums.setdefault(true_w, []).append(energy)

    report.virtual_duration_ns = clock.now_ns()
    report.wall_seconds = time.monotonic() - wall_start
    report.mean_energy_per_wavelength = [
        float(np.mean(energy_sums[w])) if w in energy_sums else 0.0
        for w in range(seq.num_wavelengths)
    ]
    logger.info("daq run: %s", report.summary())
    return report
