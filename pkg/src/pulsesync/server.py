"""Receiving side: demultiplex frames by counter, average per wavelength,
persist raw packets, publish completed packages.

A package completes when counter progress proves its range has passed (a
frame belonging to a later package arrives) or at end of stream; an
optional inactivity timeout flushes a stalled partial package on live
connections. Missing frames are simply excluded from the mean -- a
wavelength that lost every frame yields a zero slice and is listed as
incomplete rather than poisoning the package.

Averaging accumulates int16 samples into float64 running sums. Those
partial sums are integers below 2**53, hence exact, so the resulting
tensor is independent of packet arrival order bit for bit. (float32
payloads can differ in the last ulp under reordering.)
"""

from __future__ import annotations

import logging
import socket
import threading
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError
from .protocol import DecodeError, StreamDecoder, StreamPacket, encode_packet
from .ring import PackageRing
from .session import SessionWriter
from .triggers import EFFECTIVE_COUNT_OFFSET, WavelengthSequence, assign_wavelength

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WavelengthPackage:
    """Averaged axial x lateral x wavelength tensor plus loss bookkeeping."""

    package_index: int
    tensor: np.ndarray  # float64, (axial, lateral, W)
    frames_used: tuple[int, ...]
    frames_expected: int  # per wavelength
    missing_frames: tuple[tuple[int, int], ...]  # (wavelength_index, slot_index)
    incomplete_wavelengths: tuple[int, ...]
    counter_min: int | None
    counter_max: int | None
    final_flush: bool = False

    def content_crc32(self) -> int:
        head = (
            f"{self.package_index}|{self.frames_used}|{self.frames_expected}|"
            f"{self.counter_min}|{self.counter_max}".encode()
        )
        return zlib.crc32(self.tensor.tobytes(), zlib.crc32(head))


@dataclass(frozen=True)
class Reject:
    counter: int
    reason: str


@dataclass
class AcceptResult:
    completed: list[WavelengthPackage] = field(default_factory=list)
    reject: Reject | None = None


class PackageAccumulator:
    """Routes validated packets into per-wavelength running means."""

    def __init__(
        self,
        seq: WavelengthSequence,
        *,
        counter_offset: int = EFFECTIVE_COUNT_OFFSET,
    ):
        self.seq = seq
        self.counter_offset = counter_offset
        self._dims: tuple[int, int] | None = None
        self._dtype_code: int | None = None
        self._seen: set[int] = set()
        self._open: dict[int, _OpenPackage] = {}
        self._next_unclosed = 0  # packages below this are closed forever
        self._highest_seen_package = -1
        self.rejects: list[Reject] = []

    @property
    def dims(self) -> tuple[int, int] | None:
        return self._dims

    def _reject(self, packet: StreamPacket, reason: str) -> AcceptResult:
        rej = Reject(counter=packet.counter, reason=reason)
        self.rejects.append(rej)
        logger.warning("rejected counter %d: %s", packet.counter, reason)
        return AcceptResult(reject=rej)

    def accept(self, packet: StreamPacket) -> AcceptResult:
        if packet.counter < self.counter_offset:
            return self._reject(packet, "counter below effective threshold")
        if packet.counter in self._seen:
            return self._reject(packet, "duplicate counter")
        if self._dims is None:
            self._dims = (packet.axial, packet.lateral)
            self._dtype_code = packet.dtype_code
        elif (packet.axial, packet.lateral) != self._dims:
            return self._reject(
                packet,
                f"dims {packet.axial}x{packet.lateral} do not match session {self._dims}",
            )
        slot = assign_wavelength(self.seq, packet.counter, counter_offset=self.counter_offset)
        if slot.package_index < self._next_unclosed:
            return self._reject(packet, f"late frame for closed package {slot.package_index}")
        self._seen.add(packet.counter)
        self._highest_seen_package = max(self._highest_seen_package, slot.package_index)

        result = AcceptResult()
        # counter progress into a later package closes everything before it
        for p in range(self._next_unclosed, slot.package_index):
            result.completed.append(self._close_package(p, final_flush=False))
        self._next_unclosed = max(self._next_unclosed, slot.package_index)

        pkg = self._open.get(slot.package_index)
        if pkg is None:
            pkg = _OpenPackage(self.seq, self._dims)
            self._open[slot.package_index] = pkg
        pkg.add(slot.wavelength_index, slot.slot_index, packet)
        return result

    def flush_open(self) -> list[WavelengthPackage]:
        """Close every open package (stall timeout on a live stream)."""
        out = []
        for p in sorted(self._open):
            out.append(self._close_package(p, final_flush=True))
            self._next_unclosed = max(self._next_unclosed, p + 1)
        return out

    def finish(self) -> list[WavelengthPackage]:
        """End of stream: flush whatever is still open, in order."""
        out = []
        for p in range(self._next_unclosed, self._highest_seen_package + 1):
            out.append(self._close_package(p, final_flush=True))
        self._next_unclosed = max(self._next_unclosed, self._highest_seen_package + 1)
        return out

    def _close_package(self, index: int, *, final_flush: bool) -> WavelengthPackage:
        pkg = self._open.pop(index, None)
        w = self.seq.num_wavelengths
        n = self.seq.frames_per_wavelength
        axial, lateral = self._dims  # at least one packet was seen
        tensor = np.zeros((axial, lateral, w), dtype=np.float64)
        used = [0] * w
        received: set[tuple[int, int]] = set()
        counter_min = counter_max = None
        if pkg is not None:
            for wi in range(w):
                if pkg.counts[wi] > 0:
                    tensor[:, :, wi] = pkg.sums[wi] / pkg.counts[wi]
                used[wi] = pkg.counts[wi]
            received = pkg.received
            counter_min, counter_max = pkg.counter_min, pkg.counter_max
        missing = tuple(
            (wi, si) for wi in range(w) for si in range(n) if (wi, si) not in received
        )
        incomplete = tuple(wi for wi in range(w) if used[wi] == 0)
        return WavelengthPackage(
            package_index=index,
            tensor=tensor,
            frames_used=tuple(used),
            frames_expected=n,
            missing_frames=missing,
            incomplete_wavelengths=incomplete,
            counter_min=counter_min,
            counter_max=counter_max,
            final_flush=final_flush,
        )


class _OpenPackage:
    def __init__(self, seq: WavelengthSequence, dims: tuple[int, int]):
        w = seq.num_wavelengths
        self.sums = [np.zeros(dims, dtype=np.float64) for _ in range(w)]
        self.counts = [0] * w
        self.received: set[tuple[int, int]] = set()
        self.counter_min: int | None = None
        self.counter_max: int | None = None

    def add(self, wavelength_index: int, slot_index: int, packet: StreamPacket) -> None:
        kernels.accumulate(self.sums[wavelength_index], packet.samples)
        self.counts[wavelength_index] += 1
        self.received.add((wavelength_index, slot_index))
        c = packet.counter
        self.counter_min = c if self.counter_min is None else min(self.counter_min, c)
        self.counter_max = c if self.counter_max is None else max(self.counter_max, c)


@dataclass
class ServerReport:
    packets_accepted: int = 0
    packets_rejected: int = 0
    decode_errors: int = 0
    packages_published: int = 0
    missing_frames_total: int = 0
    bytes_received: int = 0
    duration_s: float = 0.0
    reject_reasons: dict = field(default_factory=dict)

    @property
    def packets_per_s(self) -> float:
        return self.packets_accepted / self.duration_s if self.duration_s > 0 else 0.0

    def summary(self) -> dict:
        return {
            "packets_accepted": self.packets_accepted,
            "packets_rejected": self.packets_rejected,
            "decode_errors": self.decode_errors,
            "packages_published": self.packages_published,
            "missing_frames_total": self.missing_frames_total,
            "bytes_received": self.bytes_received,
            "duration_s": round(self.duration_s, 3),
            "packets_per_s": round(self.packets_per_s, 1),
            **{f"reject[{k}]": v for k, v in sorted(self.reject_reasons.items())},
        }


class StreamServer:
    """Accepts one producer connection and runs the reception pipeline.

    Per packet: decode -> accumulate -> persist raw bytes -> publish any
    completed packages to the ring. On disconnect the trailing partial
    package is flushed with its final-flush flag and the ring is closed.
    """

    def __init__(
        self,
        seq: WavelengthSequence,
        ring,
        *,
        host: str = "127.0.0.1",
        port: int = 0,
        session_dir=None,
        config_hash: str | None = None,
        geometry: dict | None = None,
        inactivity_timeout_s: float | None = 2.0,
        counter_offset: int = EFFECTIVE_COUNT_OFFSET,
    ):
        self.seq = seq
        self.ring = ring if ring is not None else PackageRing()
        self.session_dir = session_dir
        self._config_hash = config_hash
        self._geometry = geometry
        self.inactivity_timeout_s = inactivity_timeout_s
        self.counter_offset = counter_offset
        self.report = ServerReport()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(1)
        self.host, self.port = self._sock.getsockname()
        self._thread: threading.Thread | None = None
        self._stop = False

    def start(self) -> "StreamServer":
        self._thread = threading.Thread(target=self.serve_session, name="stream-server", daemon=True)
        self._thread.start()
        return self

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    def stop(self) -> None:
        self._stop = True
        try:
            self._sock.close()
        except OSError:
            pass
        self.join(timeout=5.0)

    def _publish(self, packages) -> None:
        for pkg in packages:
            self.ring.publish(pkg)
            self.report.packages_published += 1
            self.report.missing_frames_total += len(pkg.missing_frames)

    def serve_session(self) -> ServerReport:
        acc = PackageAccumulator(self.seq, counter_offset=self.counter_offset)
        writer = (
            SessionWriter(
                self.session_dir,
                self.seq,
                config_hash=self._config_hash,
                geometry=self._geometry,
                counter_offset=self.counter_offset,
            )
            if self.session_dir is not None
            else None
        )
        decoder = StreamDecoder()
        self._sock.settimeout(0.2)
        conn = None
        try:
            while conn is None and not self._stop:
                try:
                    conn, addr = self._sock.accept()
                except socket.timeout:
                    continue
            if conn is None:
                return self.report
            logger.info("producer connected from %s", addr)
            conn.settimeout(self.inactivity_timeout_s if self.inactivity_timeout_s else 0.2)
            started = time.monotonic()
            with conn:
                while not self._stop:
                    try:
                        chunk = conn.recv(1 << 16)
                    except socket.timeout:
                        if self.inactivity_timeout_s:
                            self._publish(acc.flush_open())
                        continue
                    except OSError:
                        break
                    if not chunk:
                        break
                    self.report.bytes_received += len(chunk)
                    for item in decoder.feed(chunk):
                        if isinstance(item, DecodeError):
                            self.report.decode_errors += 1
                            logger.warning("wire error at %d: %s", item.offset, item.reason)
                            continue
                        self._handle_packet(item, acc, writer)
            for err in decoder.finish():
                self.report.decode_errors += 1
                logger.warning("wire error at %d: %s", err.offset, err.reason)
            self._publish(acc.finish())
            self.report.duration_s = time.monotonic() - started
        finally:
            if writer is not None:
                writer.close()
            self.ring.close()
            try:
                self._sock.close()
            except OSError:
                pass
        logger.info("session done: %s", self.report.summary())
        return self.report

    def _handle_packet(self, packet: StreamPacket, acc: PackageAccumulator, writer) -> None:
        result = acc.accept(packet)
        if result.reject is not None:
            self.report.packets_rejected += 1
            reason = result.reject.reason.split(";")[0]
            self.report.reject_reasons[reason] = self.report.reject_reasons.get(reason, 0) + 1
            return
        self.report.packets_accepted += 1
        if writer is not None:
            writer.append(
                encode_packet(
                    packet.counter,
                    packet.samples,
                    timestamp_ns=packet.timestamp_ns,
                    flags=packet.flags,
                ),
                packet,
            )
        self._publish(result.completed)
