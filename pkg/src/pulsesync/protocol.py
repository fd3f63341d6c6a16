"""Wire formats: the 48-byte framed RF packet and the ASCII counter protocol.

Frame packet layout (all integers little-endian)::

    offset  size  field
    0       4     magic "RMPA"
    4       2     version (= 1)
    6       2     flags (bit 0: saturation clamp applied)
    8       8     frame counter
    16      4     axial samples
    20      4     lateral channels
    24      1     dtype code (1: int16, 2: float32)
    25      3     reserved, zero
    28      8     acquisition timestamp [ns]
    36      8     payload length [bytes] (= axial * lateral * itemsize)
    44      4     CRC-32 (zlib polynomial) over bytes 0..43
    48      ...   row-major samples, little-endian

Counter protocol: one ASCII line per message, newline-terminated.
``C?`` -> ``C=<decimal count>``, ``R`` -> ``OK`` (counter reset), anything
else -> ``ERR``. Responses never exceed 32 bytes.

The decoder tolerates arbitrary TCP fragmentation and resynchronizes after
corruption by scanning for the next magic; every validation failure is
reported with its byte offset in the stream.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConnectivityError, CounterQueryError, EncodeError

logger = logging.getLogger(__name__)

MAGIC = b"RMPA"
VERSION = 1
HEADER_SIZE = 48
FLAG_SATURATED = 0x0001

DTYPE_INT16 = 1
DTYPE_FLOAT32 = 2
_DTYPES = {DTYPE_INT16: np.dtype("<i2"), DTYPE_FLOAT32: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype(np.int16): DTYPE_INT16, np.dtype(np.float32): DTYPE_FLOAT32}

_HEADER = struct.Struct("<4sHHQIIB3sQQI")
assert _HEADER.size == HEADER_SIZE

_MAX_DIM = 0xFFFFFFFF


@dataclass(frozen=True)
class StreamPacket:
    """One decoded frame packet."""

    counter: int
    flags: int
    timestamp_ns: int
    samples: np.ndarray  # (axial, lateral), dtype per dtype_code

    @property
    def axial(self) -> int:
        return self.samples.shape[0]

    @property
    def lateral(self) -> int:
        return self.samples.shape[1]

    @property
    def dtype_code(self) -> int:
        return _DTYPE_CODES[self.samples.dtype.newbyteorder("=")]

    @property
    def saturated(self) -> bool:
        return bool(self.flags & FLAG_SATURATED)


@dataclass(frozen=True)
class DecodeError:
    """A validation failure at a byte offset; the stream stays usable."""

    offset: int
    reason: str


def encode_packet(
    counter: int,
    samples: np.ndarray,
    *,
    timestamp_ns: int = 0,
    flags: int = 0,
) -> bytes:
    """Serialize one frame into header + row-major little-endian payload."""
    if samples.ndim != 2:
        raise EncodeError(f"samples must be 2-D, got shape {samples.shape}")
    axial, lateral = samples.shape
    if not (1 <= axial <= _MAX_DIM and 1 <= lateral <= _MAX_DIM):
        raise EncodeError(f"dims out of range: {axial}x{lateral}")
    key = samples.dtype.newbyteorder("=")
    if key not in _DTYPE_CODES:
        raise EncodeError(f"unsupported dtype {samples.dtype}")
    code = _DTYPE_CODES[key]
    payload = np.ascontiguousarray(samples, dtype=_DTYPES[code]).tobytes()
    head = _HEADER.pack(
        MAGIC, VERSION, flags, counter, axial, lateral, code, b"\x00\x00\x00",
        timestamp_ns, len(payload), 0,
    )
    crc = zlib.crc32(head[: HEADER_SIZE - 4])
    return head[: HEADER_SIZE - 4] + struct.pack("<I", crc) + payload


def _parse_header(block: bytes):
    """Returns (packet fields, payload length) or a reason string."""
    magic, version, flags, counter, axial, lateral, code, _reserved, ts, plen, crc = (
        _HEADER.unpack(block)
    )
    if magic != MAGIC:
        return "bad magic"
    if zlib.crc32(block[: HEADER_SIZE - 4]) != crc:
        return "header CRC mismatch"
    if version != VERSION:
        return f"unsupported version {version}"
    if code not in _DTYPES:
        return f"unknown dtype code {code}"
    if axial < 1 or lateral < 1:
        return f"degenerate dims {axial}x{lateral}"
    if plen != axial * lateral * _DTYPES[code].itemsize:
        return f"payload length {plen} does not match {axial}x{lateral} dtype {code}"
    return (flags, counter, axial, lateral, code, ts, plen)


class StreamDecoder:
    """Incremental packet decoder over an arbitrarily fragmented byte stream.

    ``feed`` returns the packets and :class:`DecodeError` records completed
    by the new bytes, in stream order; an incomplete tail simply waits for
    more input. The output sequence is identical for any partition of the
    same byte stream. ``finish`` flushes a diagnostic for a truncated tail.
    """

    def __init__(self):
        self._buf = bytearray()
        self._base = 0  # stream offset of _buf[0]
        self._garbage_start: int | None = None
        self._resyncing = False

    def _flush_garbage(self, out: list) -> None:
        if self._garbage_start is not None:
            if not self._resyncing:
                out.append(
                    DecodeError(
                        offset=self._garbage_start,
                        reason=f"skipped {self._base - self._garbage_start} bytes without magic",
                    )
                )
            self._garbage_start = None

    def feed(self, data: bytes) -> list[StreamPacket | DecodeError]:
        self._buf += data
        out: list[StreamPacket | DecodeError] = []
        while True:
            idx = self._buf.find(MAGIC)
            if idx == -1:
                # keep a possible magic prefix at the tail
                keep = 0
                for k in (3, 2, 1):
                    if len(self._buf) >= k and MAGIC.startswith(bytes(self._buf[-k:])):
                        keep = k
                        break
                drop = len(self._buf) - keep
                if drop > 0:
                    if self._garbage_start is None:
                        self._garbage_start = self._base
                    del self._buf[:drop]
                    self._base += drop
                return out
            if idx > 0:
                if self._garbage_start is None:
                    self._garbage_start = self._base
                del self._buf[:idx]
                self._base += idx
            self._flush_garbage(out)
            if len(self._buf) < HEADER_SIZE:
                return out
            parsed = _parse_header(bytes(self._buf[:HEADER_SIZE]))
            if isinstance(parsed, str):
                out.append(DecodeError(offset=self._base, reason=parsed))
                self._resyncing = True
                del self._buf[:1]
                self._base += 1
                continue
            flags, counter, axial, lateral, code, ts, plen = parsed
            total = HEADER_SIZE + plen
            if len(self._buf) < total:
                return out
            raw = bytes(self._buf[HEADER_SIZE:total])
            samples = np.frombuffer(raw, dtype=_DTYPES[code]).reshape(axial, lateral)
            out.append(
                StreamPacket(counter=counter, flags=flags, timestamp_ns=ts, samples=samples)
            )
            del self._buf[:total]
            self._base += total
            self._resyncing = False

    def finish(self) -> list[DecodeError]:
        """Report whatever the truncated tail leaves behind."""
        out: list[DecodeError] = []
        if self._garbage_start is not None and not self._resyncing:
            out.append(
                DecodeError(
                    offset=self._garbage_start,
                    reason=f"skipped {self._base - self._garbage_start} bytes without magic",
                )
            )
            self._garbage_start = None
        if self._buf:
            out.append(
                DecodeError(offset=self._base, reason=f"truncated packet ({len(self._buf)} bytes)")
            )
        return out


def decode_all(data: bytes) -> list[StreamPacket | DecodeError]:
    """Whole-buffer decode, including truncation diagnostics."""
    dec = StreamDecoder()
    results = dec.feed(data)
    results.extend(dec.finish())
    return results


# ---------------------------------------------------------------------------
# counter line protocol

MAX_RESPONSE_BYTES = 32


class CounterLineHandler:
    """Request/response rules, shared by the TCP server and direct tests."""

    def __init__(self, counter):
        self._counter = counter

    def reply(self, line: bytes) -> bytes:
        cmd = line.strip()
        if cmd == b"C?":
            resp = f"C={self._counter.count}\n".encode("ascii")
        elif cmd == b"R":
            self._counter.reset()
            resp = b"OK\n"
        else:
            resp = b"ERR\n"
        assert len(resp) <= MAX_RESPONSE_BYTES
        return resp


class CounterServer:
    """Serves the counter protocol on TCP; one client at a time."""

    def __init__(self, counter, host: str = "127.0.0.1", port: int = 0):
        self._handler = CounterLineHandler(counter)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(1)
        self._sock.settimeout(0.1)
        self.host, self.port = self._sock.getsockname()
        self._stop = False
        self._thread = None

    def start(self) -> "CounterServer":
        self._thread = threading.Thread(target=self._serve, name="counter-server", daemon=True)
        self._thread.start()
        return self

    def _serve(self) -> None:
        while not self._stop:
            try:
                conn, _addr = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with conn:
                conn.settimeout(0.1)
                buf = b""
                while not self._stop:
                    try:
                        chunk = conn.recv(1024)
                    except socket.timeout:
                        continue
                    except OSError:
                        break
                    if not chunk:
                        break
                    buf += chunk
                    while b"\n" in buf:
                        line, buf = buf.split(b"\n", 1)
                        try:
                            conn.sendall(self._handler.reply(line))
                        except OSError:
                            break

    def stop(self) -> None:
        self._stop = True
        try:
            self._sock.close()
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=2.0)


class CounterClient:
    """Line-protocol client with a bounded query round-trip."""

    def __init__(self, host: str, port: int, timeout_s: float = 0.1):
        self.timeout_s = timeout_s
        try:
            self._sock = socket.create_connection((host, port), timeout=1.0)
        except OSError as exc:
            raise ConnectivityError(f"counter endpoint {host}:{port} unreachable: {exc}") from exc
        self._sock.settimeout(timeout_s)
        self._buf = b""

    def _roundtrip(self, request: bytes) -> bytes:
        try:
            self._sock.sendall(request)
            while b"\n" not in self._buf:
                chunk = self._sock.recv(64)
                if not chunk:
                    raise CounterQueryError("counter connection closed")
                self._buf += chunk
        except socket.timeout as exc:
            raise CounterQueryError(f"no counter response within {self.timeout_s}s") from exc
        except OSError as exc:
            raise CounterQueryError(f"counter channel failed: {exc}") from exc
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def query(self) -> int:
        line = self._roundtrip(b"C?\n")
        if not line.startswith(b"C="):
            raise CounterQueryError(f"malformed counter response {line!r}")
        try:
            return int(line[2:])
        except ValueError as exc:
            raise CounterQueryError(f"malformed counter response {line!r}") from exc

    def reset(self) -> None:
        line = self._roundtrip(b"R\n")
        if line != b"OK":
            raise CounterQueryError(f"reset rejected: {line!r}")

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# packet sink over TCP

class TcpPacketSink:
    """Encodes frames and streams them to a server endpoint.

    ``connect`` retries briefly so a producer and server starting together
    can rendezvous; persistent failure raises :class:`ConnectivityError`.
    """

    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port
        self._sock: socket.socket | None = None
        self.bytes_sent = 0
        self.packets_sent = 0

    def connect(self, retries: int = 20, delay_s: float = 0.1) -> None:
        if self._sock is not None:
            return
        last: Exception | None = None
        for _ in range(retries):
            try:
                self._sock = socket.create_connection((self.host, self.port), timeout=5.0)
                self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                return
            except OSError as exc:
                last = exc
                time.sleep(delay_s)
        raise ConnectivityError(f"stream endpoint {self.host}:{self.port} unreachable: {last}")

    def send(self, counter: int, frame, flags: int = 0) -> None:
        if self._sock is None:
            self.connect()
        data = encode_packet(
            counter,
            frame.samples,
            timestamp_ns=frame.acquisition_timestamp_ns,
            flags=flags,
        )
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise ConnectivityError(f"stream connection lost: {exc}") from exc
        self.bytes_sent += len(data)
        self.packets_sent += 1

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None
