"""Bounded single-producer/single-consumer package exchange.

The producer never blocks: when the consumer lags by a full ring, the
oldest unread slot is overwritten and counted as an overrun, because
reception must never stall behind slow analysis. Slots carry a seqlock
version plus a payload checksum, so a reader that gets lapped mid-copy
detects the tear, retries, and resumes at the oldest surviving sequence.

Overrun bookkeeping must agree exactly with the gaps the consumer observes
(that identity is what the stress tests check), so the overwrite-vs-read
race is settled by a claim protocol: the producer flips the slot version to
odd *before* judging the slot unread, and the consumer commits its read
only while the version it validated is still in place. The in-process ring
serializes those two judgements with a lock held for a few instructions --
never across a copy or any consumer processing, so the producer still
cannot stall behind slow analysis.

Two backends share the publish/poll contract:

* :class:`PackageRing` -- in-process, for threads.
* :class:`SharedMemoryRing` -- cross-process, POSIX shared memory. Layout:
  a 64-byte header (magic "RMPR", version u32, capacity, slot size, write
  sequence, read sequence, overrun count, closed flag as little-endian u64)
  followed by ``capacity`` slots of ``32-byte slot header (version u64,
  sequence u64, payload length u64, payload CRC-32 u32, pad) + slot_size
  payload bytes``. Cross-process judgement order is the same but unlocked;
  under a simultaneous lap-and-commit the overrun count can be off by one,
  which the in-process backend (the one the stress suite hammers) cannot.

Sequences start at 1 and increase by exactly 1 per publish; sequence s
lives in slot ``s % capacity``.
"""

from __future__ import annotations

import pickle
import struct
import threading
import time
import zlib
from dataclasses import dataclass
from multiprocessing import shared_memory

from .errors import RingError

DEFAULT_CAPACITY = 8


@dataclass(frozen=True)
class PollResult:
    seq: int
    package: object
    gap: int  # sequences lost between the caller's last_seen and seq


class PackageRing:
    """In-process SPSC ring. Payloads need a ``content_crc32()`` method."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise RingError("capacity must be >= 1")
        self.capacity = capacity
        self._versions = [0] * capacity
        self._seqs = [0] * capacity
        self._payloads: list[object] = [None] * capacity
        self._crcs = [0] * capacity
        self._write_seq = 0
        self._read_seq = 0  # highest sequence the consumer has committed
        self._overruns = 0
        self._closed = False
        self._account = threading.Lock()

    @property
    def write_seq(self) -> int:
        return self._write_seq

    @property
    def overruns(self) -> int:
        return self._overruns

    @property
    def closed(self) -> bool:
        return self._closed

    def publish(self, package) -> int:
        seq = self._write_seq + 1
        idx = seq % self.capacity
        self._versions[idx] += 1  # odd: slot invalidated for readers
        displaced = seq - self.capacity
        if displaced >= 1:
            with self._account:
                if displaced > self._read_seq:
                    self._overruns += 1
        self._seqs[idx] = seq
        self._payloads[idx] = package
        self._crcs[idx] = package.content_crc32()
        self._versions[idx] += 1  # even: slot consistent again
        self._write_seq = seq
        return seq

    def poll(self, last_seen: int) -> PollResult | None:
        caller_last = last_seen
        while True:
            write_seq = self._write_seq
            if write_seq <= last_seen:
                return None
            seq = max(last_seen + 1, write_seq - self.capacity + 1)
            idx = seq % self.capacity
            v1 = self._versions[idx]
            stored_seq = self._seqs[idx]
            payload = self._payloads[idx]
            crc = self._crcs[idx]
            v2 = self._versions[idx]
            if v1 == v2 and v1 % 2 == 0 and stored_seq == seq:
                with self._account:
                    if self._versions[idx] == v1:  # still untouched: commit
                        if seq > self._read_seq:
                            self._read_seq = seq
                        committed = True
                    else:
                        committed = False
                if committed:
                    if payload.content_crc32() != crc:
                        raise RingError(f"checksum mismatch on sequence {seq}")
                    return PollResult(seq=seq, package=payload, gap=seq - caller_last - 1)
            # torn or lapped: resume at the oldest sequence that can survive
            last_seen = max(last_seen, self._write_seq - self.capacity)

    def close(self) -> None:
        self._closed = True


# ---------------------------------------------------------------------------
# shared-memory backend

_SHM_MAGIC = b"RMPR"
_SHM_VERSION = 1
_HDR = struct.Struct("<4sIQQQQQQ")
_HDR_SIZE = 64
_SLOT_HDR = struct.Struct("<QQQI")  # version, seq, length, crc32
_SLOT_HDR_SIZE = 32

_F_CAPACITY = 0
_F_SLOT_SIZE = 1
_F_WRITE_SEQ = 2
_F_READ_SEQ = 3
_F_OVERRUNS = 4
_F_CLOSED = 5


class SharedMemoryRing:
    """Cross-process SPSC ring over a named shared-memory segment.

    The creator (producer side) owns the segment lifetime; ``attach`` joins
    an existing one. Payloads are pickled; the CRC covers the pickle bytes,
    so a torn or lapped read is detected before unpickling.
    """

    def __init__(self, shm: shared_memory.SharedMemory, capacity: int, slot_size: int, owner: bool):
        self._shm = shm
        self.capacity = capacity
        self.slot_size = slot_size
        self._owner = owner

    @classmethod
    def create(cls, name: str, capacity: int = DEFAULT_CAPACITY, slot_size: int = 4 << 20):
        if capacity < 1:
            raise RingError("capacity must be >= 1")
        size = _HDR_SIZE + capacity * (_SLOT_HDR_SIZE + slot_size)
        try:
            shm = shared_memory.SharedMemory(name=name, create=True, size=size)
        except FileExistsError:
            # stale segment from a previous run: replace it
            stale = shared_memory.SharedMemory(name=name)
            stale.close()
            stale.unlink()
            shm = shared_memory.SharedMemory(name=name, create=True, size=size)
        shm.buf[:_HDR_SIZE] = b"\x00" * _HDR_SIZE
        _HDR.pack_into(shm.buf, 0, _SHM_MAGIC, _SHM_VERSION, capacity, slot_size, 0, 0, 0, 0)
        for i in range(capacity):
            off = _HDR_SIZE + i * (_SLOT_HDR_SIZE + slot_size)
            _SLOT_HDR.pack_into(shm.buf, off, 0, 0, 0, 0)
        return cls(shm, capacity, slot_size, owner=True)

    @classmethod
    def attach(cls, name: str, timeout_s: float = 10.0):
        deadline = time.monotonic() + timeout_s
        while True:
            try:
                shm = shared_memory.SharedMemory(name=name)
                break
            except FileNotFoundError:
                if time.monotonic() >= deadline:
                    raise RingError(f"no ring segment named {name!r}")
                time.sleep(0.05)
        magic, version, capacity, slot_size, *_rest = _HDR.unpack_from(shm.buf, 0)
        if magic != _SHM_MAGIC or version != _SHM_VERSION:
            shm.close()
            raise RingError(f"segment {name!r} is not a ring (magic {magic!r})")
        return cls(shm, capacity, slot_size, owner=False)

    def _get(self, field: int) -> int:
        return struct.unpack_from("<Q", self._shm.buf, 8 + 8 * field)[0]

    def _set(self, field: int, value: int) -> None:
        struct.pack_into("<Q", self._shm.buf, 8 + 8 * field, value)

    @property
    def write_seq(self) -> int:
        return self._get(_F_WRITE_SEQ)

    @property
    def read_seq(self) -> int:
        return self._get(_F_READ_SEQ)

    @property
    def overruns(self) -> int:
        return self._get(_F_OVERRUNS)

    @property
    def closed(self) -> bool:
        return self._get(_F_CLOSED) != 0

    def _slot_off(self, seq: int) -> int:
        return _HDR_SIZE + (seq % self.capacity) * (_SLOT_HDR_SIZE + self.slot_size)

    def publish(self, package) -> int:
        payload = pickle.dumps(package, protocol=pickle.HIGHEST_PROTOCOL)
        if len(payload) > self.slot_size:
            raise RingError(f"payload {len(payload)} B exceeds slot size {self.slot_size} B")
        seq = self.write_seq + 1
        off = self._slot_off(seq)
        version = _SLOT_HDR.unpack_from(self._shm.buf, off)[0]
        crc = zlib.crc32(payload)
        _SLOT_HDR.pack_into(self._shm.buf, off, version + 1, seq, len(payload), crc)
        displaced = seq - self.capacity
        if displaced >= 1 and displaced > self._get(_F_READ_SEQ):
            self._set(_F_OVERRUNS, self.overruns + 1)
        self._shm.buf[off + _SLOT_HDR_SIZE : off + _SLOT_HDR_SIZE + len(payload)] = payload
        _SLOT_HDR.pack_into(self._shm.buf, off, version + 2, seq, len(payload), crc)
        self._set(_F_WRITE_SEQ, seq)
        return seq

    def poll(self, last_seen: int) -> PollResult | None:
        caller_last = last_seen
        while True:
            write_seq = self.write_seq
            if write_seq <= last_seen:
                return None
            seq = max(last_seen + 1, write_seq - self.capacity + 1)
            off = self._slot_off(seq)
            v1, stored_seq, length, crc = _SLOT_HDR.unpack_from(self._shm.buf, off)
            ok = v1 % 2 == 0 and stored_seq == seq and length <= self.slot_size
            if ok:
                payload = bytes(self._shm.buf[off + _SLOT_HDR_SIZE : off + _SLOT_HDR_SIZE + length])
                v2, seq2, _l2, _c2 = _SLOT_HDR.unpack_from(self._shm.buf, off)
                if v2 == v1 and seq2 == seq and zlib.crc32(payload) == crc:
                    self._set(_F_READ_SEQ, seq)
                    return PollResult(
                        seq=seq, package=pickle.loads(payload), gap=seq - caller_last - 1
                    )
            last_seen = max(last_seen, self.write_seq - self.capacity)

    def close(self) -> None:
        self._set(_F_CLOSED, 1)

    def detach(self) -> None:
        self._shm.close()

    def destroy(self) -> None:
        self._shm.close()
        if self._owner:
            try:
                self._shm.unlink()
            except FileNotFoundError:
                pass
