/**
 * Wire-format decoder for the 48-byte framed RF packet stream.
 *
 * Layout (little-endian):
 *   0   4  magic "RMPA"
 *   4   2  version (= 1)
 *   6   2  flags (bit 0: saturation clamp applied)
 *   8   8  frame counter
 *   16  4  axial samples
 *   20  4  lateral channels
 *   24  1  dtype code (1: int16, 2: float32)
 *   25  3  reserved
 *   28  8  acquisition timestamp [ns]
 *   36  8  payload length [bytes]
 *   44  4  CRC-32 over bytes 0..43
 *   48  .. row-major samples
 *
 * The decoder tolerates arbitrary fragmentation and resynchronizes after
 * corruption by scanning for the next magic; failures carry their byte
 * offset in the stream. Counters and timestamps are exposed as numbers and
 * rejected if they exceed Number.MAX_SAFE_INTEGER.
 */

export const HEADER_SIZE = 48;
export const VERSION = 1;
export const DTYPE_INT16 = 1;
export const DTYPE_FLOAT32 = 2;
export const FLAG_SATURATED = 0x0001;

const MAGIC = new Uint8Array([0x52, 0x4d, 0x50, 0x41]); // "RMPA"

export interface StreamPacket {
  counter: number;
  flags: number;
  timestampNs: number;
  axial: number;
  lateral: number;
  dtypeCode: number;
  /** Row-major samples, axial-major. */
  samples: Int16Array | Float32Array;
}

export interface DecodeFailure {
  offset: number;
  reason: string;
}

export type DecodeItem =
  | { kind: "packet"; packet: StreamPacket }
  | { kind: "error"; error: DecodeFailure };

// CRC-32 (zlib polynomial, reflected)
const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(data: Uint8Array, seed = 0): number {
  let c = ~seed >>> 0;
  for (let i = 0; i < data.length; i++) {
    c = CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8);
  }
  return ~c >>> 0;
}

function toSafeNumber(value: bigint, what: string): number {
  if (value > BigInt(Number.MAX_SAFE_INTEGER)) {
    throw new RangeError(`${what} ${value} exceeds the safe integer range`);
  }
  return Number(value);
}

function findMagic(buf: Uint8Array, from: number): number {
  outer: for (let i = from; i + MAGIC.length <= buf.length; i++) {
    for (let j = 0; j < MAGIC.length; j++) {
      if (buf[i + j] !== MAGIC[j]) continue outer;
    }
    return i;
  }
  return -1;
}

function magicPrefixLength(buf: Uint8Array): number {
  for (let k = Math.min(3, buf.length); k >= 1; k--) {
    let match = true;
    for (let j = 0; j < k; j++) {
      if (buf[buf.length - k + j] !== MAGIC[j]) {
        match = false;
        break;
      }
    }
    if (match) return k;
  }
  return 0;
}

interface ParsedHeader {
  flags: number;
  counter: number;
  axial: number;
  lateral: number;
  dtypeCode: number;
  timestampNs: number;
  payloadLength: number;
}

function parseHeader(block: Uint8Array): ParsedHeader | string {
  const view = new DataView(block.buffer, block.byteOffset, HEADER_SIZE);
  const storedCrc = view.getUint32(44, true);
  if (crc32(block.subarray(0, 44)) !== storedCrc) return "header CRC mismatch";
  const version = view.getUint16(4, true);
  if (version !== VERSION) return `unsupported version ${version}`;
  const dtypeCode = view.getUint8(24);
  if (dtypeCode !== DTYPE_INT16 && dtypeCode !== DTYPE_FLOAT32) {
    return `unknown dtype code ${dtypeCode}`;
  }
  const axial = view.getUint32(16, true);
  const lateral = view.getUint32(20, true);
  if (axial < 1 || lateral < 1) return `degenerate dims ${axial}x${lateral}`;
  const itemSize = dtypeCode === DTYPE_INT16 ? 2 : 4;
  const payloadLength = toSafeNumber(view.getBigUint64(36, true), "payload length");
  if (payloadLength !== axial * lateral * itemSize) {
    return `payload length ${payloadLength} does not match ${axial}x${lateral} dtype ${dtypeCode}`;
  }
  return {
    flags: view.getUint16(6, true),
    counter: toSafeNumber(view.getBigUint64(8, true), "counter"),
    axial,
    lateral,
    dtypeCode,
    timestampNs: toSafeNumber(view.getBigUint64(28, true), "timestamp"),
    payloadLength,
  };
}

function materialize(header: ParsedHeader, payload: Uint8Array): StreamPacket {
  // copy so the packet outlives the decode buffer, and realign
  const bytes = payload.slice();
  const samples =
    header.dtypeCode === DTYPE_INT16
      ? new Int16Array(bytes.buffer, 0, header.axial * header.lateral)
      : new Float32Array(bytes.buffer, 0, header.axial * header.lateral);
  return {
    counter: header.counter,
    flags: header.flags,
    timestampNs: header.timestampNs,
    axial: header.axial,
    lateral: header.lateral,
    dtypeCode: header.dtypeCode,
    samples,
  };
}

/**
 * Incremental decoder. feed() returns the items completed by the new
 * bytes, in stream order; the item sequence is identical for any
 * partition of the same stream. finish() flushes truncation diagnostics.
 */
export class StreamDecoder {
  private buf = new Uint8Array(0);
  private base = 0; // stream offset of buf[0]
  private garbageStart: number | null = null;
  private resyncing = false;

  private append(data: Uint8Array): void {
    if (this.buf.length === 0) {
      this.buf = data.slice();
      return;
    }
    const merged = new Uint8Array(this.buf.length + data.length);
    merged.set(this.buf, 0);
    merged.set(data, this.buf.length);
    this.buf = merged;
  }

  private drop(n: number): void {
    this.buf = this.buf.subarray(n);
    this.base += n;
  }

  private flushGarbage(out: DecodeItem[]): void {
    if (this.garbageStart !== null) {
      if (!this.resyncing) {
        out.push({
          kind: "error",
          error: {
            offset: this.garbageStart,
            reason: `skipped ${this.base - this.garbageStart} bytes without magic`,
          },
        });
      }
      this.garbageStart = null;
    }
  }

  feed(data: Uint8Array): DecodeItem[] {
    this.append(data);
    const out: DecodeItem[] = [];
    for (;;) {
      const idx = findMagic(this.buf, 0);
      if (idx === -1) {
        const keep = magicPrefixLength(this.buf);
        const dropCount = this.buf.length - keep;
        if (dropCount > 0) {
          if (this.garbageStart === null) this.garbageStart = this.base;
          this.drop(dropCount);
        }
        return out;
      }
      if (idx > 0) {
        if (this.garbageStart === null) this.garbageStart = this.base;
        this.drop(idx);
      }
      this.flushGarbage(out);
      if (this.buf.length < HEADER_SIZE) return out;
      const parsed = parseHeader(this.buf.subarray(0, HEADER_SIZE));
      if (typeof parsed === "string") {
        out.push({ kind: "error", error: { offset: this.base, reason: parsed } });
        this.resyncing = true;
        this.drop(1);
        continue;
      }
      const total = HEADER_SIZE + parsed.payloadLength;
      if (this.buf.length < total) return out;
      out.push({
        kind: "packet",
        packet: materialize(parsed, this.buf.subarray(HEADER_SIZE, total)),
      });
      this.drop(total);
      this.resyncing = false;
    }
  }

  finish(): DecodeItem[] {
    const out: DecodeItem[] = [];
    if (this.garbageStart !== null && !this.resyncing) {
      out.push({
        kind: "error",
        error: {
          offset: this.garbageStart,
          reason: `skipped ${this.base - this.garbageStart} bytes without magic`,
        },
      });
      this.garbageStart = null;
    }
    if (this.buf.length > 0) {
      out.push({
        kind: "error",
        error: { offset: this.base, reason: `truncated packet (${this.buf.length} bytes)` },
      });
    }
    return out;
  }
}

export function decodeAll(data: Uint8Array): DecodeItem[] {
  const decoder = new StreamDecoder();
  const out = decoder.feed(data);
  out.push(...decoder.finish());
  return out;
}

export function packetsOf(items: DecodeItem[]): StreamPacket[] {
  return items.filter((i): i is { kind: "packet"; packet: StreamPacket } => i.kind === "packet")
    .map((i) => i.packet);
}

export function errorsOf(items: DecodeItem[]): DecodeFailure[] {
  return items.filter((i): i is { kind: "error"; error: DecodeFailure } => i.kind === "error")
    .map((i) => i.error);
}

/** Decode an async byte source (file stream or socket) to completion. */
export async function decodeStream(
  source: AsyncIterable<Uint8Array>,
  onItem: (item: DecodeItem) => void,
): Promise<void> {
  const decoder = new StreamDecoder();
  for await (const chunk of source) {
    for (const item of decoder.feed(chunk)) onItem(item);
  }
  for (const item of decoder.finish()) onItem(item);
}
