"""Raw session store: manifest + append-only log of wire-format packets.

A session directory holds ``manifest.json`` and ``frames.rmpa``. The frame
log is the exact packet bytes that crossed the wire, concatenated -- the
wire codec doubles as the storage codec, so sessions replay through any
conformant decoder and shift re-analysis works from the ground truth. The
manifest records the programmed sequence, frame geometry, and enough
bookkeeping to interpret the log without the scenario file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, StorageError
from .protocol import StreamDecoder, StreamPacket
from .triggers import (
    EFFECTIVE_COUNT_OFFSET,
    FrameSlot,
    Layout,
    WavelengthSequence,
    assign_wavelength,
)

MANIFEST_NAME = "manifest.json"
FRAMES_NAME = "frames.rmpa"
MANIFEST_VERSION = 1


@dataclass
class SessionManifest:
    wavelengths_nm: list[float]
    layout: str  # "block" | "cyclic"
    frames_per_wavelength: int
    counter_offset: int = EFFECTIVE_COUNT_OFFSET
    axial: int | None = None
    lateral: int | None = None
    dtype_code: int | None = None
    packets: int = 0
    counter_min: int | None = None
    counter_max: int | None = None
    config_hash: str | None = None
    geometry: dict | None = None

    def sequence(self) -> WavelengthSequence:
        return WavelengthSequence(
            wavelengths_nm=tuple(self.wavelengths_nm),
            layout=Layout(self.layout),
            frames_per_wavelength=self.frames_per_wavelength,
        )

    def to_json(self) -> str:
        payload = {"manifest_version": MANIFEST_VERSION, **self.__dict__}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SessionManifest":
        data = json.loads(text)
        data.pop("manifest_version", None)
        return cls(**data)


@dataclass(frozen=True)
class RawFrameRecord:
    """A persisted frame with its shift-0 demultiplexing coordinates."""

    counter: int
    slot: FrameSlot
    packet: StreamPacket

    @property
    def wavelength_index(self) -> int:
        return self.slot.wavelength_index

    @property
    def package_index(self) -> int:
        return self.slot.package_index

    @property
    def slot_index(self) -> int:
        return self.slot.slot_index


class SessionWriter:
    """Creates a session directory and appends packets as they arrive."""

    def __init__(
        self,
        directory: str | Path,
        seq: WavelengthSequence,
        *,
        config_hash: str | None = None,
        geometry: dict | None = None,
        counter_offset: int = EFFECTIVE_COUNT_OFFSET,
    ):
        self.directory = Path(directory)
        self.manifest = SessionManifest(
            wavelengths_nm=list(seq.wavelengths_nm),
            layout=seq.layout.value,
            frames_per_wavelength=seq.frames_per_wavelength,
            counter_offset=counter_offset,
            config_hash=config_hash,
            geometry=geometry,
        )
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._log = open(self.directory / FRAMES_NAME, "wb")
            self._write_manifest()
        except OSError as exc:
            raise StorageError(f"cannot create session at {self.directory}: {exc}") from exc

    def _write_manifest(self) -> None:
        tmp = self.directory / (MANIFEST_NAME + ".tmp")
        tmp.write_text(self.manifest.to_json())
        os.replace(tmp, self.directory / MANIFEST_NAME)

    def append(self, packet_bytes: bytes, packet: StreamPacket) -> None:
        m = self.manifest
        if m.axial is None:
            m.axial, m.lateral, m.dtype_code = packet.axial, packet.lateral, packet.dtype_code
        try:
            self._log.write(packet_bytes)
            self._log.flush()
        except OSError as exc:
            raise StorageError(f"session log write failed: {exc}") from exc
        m.packets += 1
        m.counter_min = packet.counter if m.counter_min is None else min(m.counter_min, packet.counter)
        m.counter_max = packet.counter if m.counter_max is None else max(m.counter_max, packet.counter)

    def close(self) -> None:
        try:
            self._log.close()
            self._write_manifest()
        except OSError as exc:
            raise StorageError(f"session finalize failed: {exc}") from exc


def read_manifest(directory: str | Path) -> SessionManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"no session manifest at {path}")
    return SessionManifest.from_json(path.read_text())


def iter_session_packets(directory: str | Path, chunk_size: int = 1 << 20):
    """Yield StreamPackets from the frame log; raise on any corruption."""
    path = Path(directory) / FRAMES_NAME
    if not path.exists():
        raise ConfigError(f"no frame log at {path}")
    decoder = StreamDecoder()
    with open(path, "rb") as fh:
        while True:
            chunk = fh.read(chunk_size)
            if not chunk:
                break
            for item in decoder.feed(chunk):
                if isinstance(item, StreamPacket):
                    yield item
                else:
                    raise StorageError(f"corrupt session log: {item.reason} at {item.offset}")
    for err in decoder.finish():
        raise StorageError(f"corrupt session log: {err.reason} at {err.offset}")


def iter_session_records(directory: str | Path):
    """Yield RawFrameRecords: packets with their shift-0 coordinates."""
    manifest = read_manifest(directory)
    seq = manifest.sequence()
    for packet in iter_session_packets(directory):
        slot = assign_wavelength(seq, packet.counter, counter_offset=manifest.counter_offset)
        yield RawFrameRecord(counter=packet.counter, slot=slot, packet=packet)
