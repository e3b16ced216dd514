import { TruncatedError } from "./errors.js";

/** Sequential little-endian reader over a Node buffer. */
export class BinaryReader {
  private offset = 0;

  constructor(private readonly buf: Buffer) {}

  get position(): number {
    return this.offset;
  }

  get remaining(): number {
    return this.buf.length - this.offset;
  }

  private need(n: number, what: string): void {
    if (this.offset + n > this.buf.length) {
      throw new TruncatedError(`truncated file while reading ${what}`);
    }
  }

  bytes(n: number, what = "bytes"): Buffer {
    this.need(n, what);
    const out = this.buf.subarray(this.offset, this.offset + n);
    this.offset += n;
    return out;
  }

  u8(what = "u8"): number {
    this.need(1, what);
    return this.buf.readUInt8(this.offset++);
  }

  u16(what = "u16"): number {
    this.need(2, what);
    const v = this.buf.readUInt16LE(this.offset);
    this.offset += 2;
    return v;
  }

  u32(what = "u32"): number {
    this.need(4, what);
    const v = this.buf.readUInt32LE(this.offset);
    this.offset += 4;
    return v;
  }

  u64(what = "u64"): number {
    this.need(8, what);
    const v = this.buf.readBigUInt64LE(this.offset);
    this.offset += 8;
    if (v > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new TruncatedError(`${what} exceeds the safe integer range`);
    }
    return Number(v);
  }

  u32Array(count: number, what = "u32 array"): Uint32Array {
    const raw = this.bytes(4 * count, what);
    const out = new Uint32Array(count);
    for (let i = 0; i < count; i++) out[i] = raw.readUInt32LE(4 * i);
    return out;
  }

  /** f32 payloads widen to f64 exactly. */
  f32Array(count: number, what = "f32 array"): Float64Array {
    const raw = this.bytes(4 * count, what);
    const out = new Float64Array(count);
    for (let i = 0; i < count; i++) out[i] = raw.readFloatLE(4 * i);
    return out;
  }
}

const CRC_TABLE: Uint32Array = (() => {
  const poly = 0x82f63b78;
  const table = new Uint32Array(256);
  for (let i = 0; i < 256; i++) {
    let c = i;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? (c >>> 1) ^ poly : c >>> 1;
    }
    table[i] = c >>> 0;
  }
  return table;
})();

export function crc32c(data: Buffer, crc = 0): number {
  let c = (crc ^ 0xffffffff) >>> 0;
  for (let i = 0; i < data.length; i++) {
    c = (CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8)) >>> 0;
  }
  return (c ^ 0xffffffff) >>> 0;
}
