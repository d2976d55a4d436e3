/** Readers for the quantastream pair exports.
 *
 * QSX1 layout (little-endian): magic "QSX1", version u32, width u32,
 * height u32, channels u32, dtype u8 (0 = uint8 quantized, 1 = float32),
 * timestamp u64, then channels x f64 window values (longest first), then
 * planar channel payload.  QSB1 (bit-packed binary frames) is parsed for
 * completeness: magic, version u32, width u32, height u32, frame_count
 * u64, frame_rate f64, reserved u64, then MSB-first packed frames.
 */

import { readFileSync } from "node:fs";
import { join } from "node:path";

export const QSX_FIXED_BYTES = 29;
export const QSB_HEADER_BYTES = 40;

export class FormatError extends Error {}

export interface StackFile {
  width: number;
  height: number;
  channels: number;
  dtype: "u8" | "f32";
  timestamp: number;
  windows: number[];
  /** planar (channel-major) values; u8 stacks are normalized to [0, 1] */
  planes: Float64Array;
  /** raw payload bytes exactly as stored */
  payload: Buffer;
  header: Buffer;
}

function checkMagic(buf: Buffer, magic: string): void {
  if (buf.length < 4 || buf.toString("ascii", 0, 4) !== magic) {
    throw new FormatError(`bad magic at byte 0 (expected ${magic})`);
  }
}

export function readStack(path: string): StackFile {
  const buf = readFileSync(path);
  checkMagic(buf, "QSX1");
  if (buf.length < QSX_FIXED_BYTES) throw new FormatError("file ends inside the header");
  const version = buf.readUInt32LE(4);
  if (version !== 1) throw new FormatError(`unsupported version ${version}`);
  const width = buf.readUInt32LE(8);
  const height = buf.readUInt32LE(12);
  const channels = buf.readUInt32LE(16);
  const dtypeFlag = buf.readUInt8(20);
  const timestamp = Number(buf.readBigUInt64LE(21));
  if (width < 1 || height < 1 || channels < 1 || channels > 256) {
    throw new FormatError(`bad geometry ${width}x${height}x${channels}`);
  }
  if (dtypeFlag !== 0 && dtypeFlag !== 1) {
    throw new FormatError(`unknown dtype flag ${dtypeFlag}`);
  }
  const windows: number[] = [];
  const windowsEnd = QSX_FIXED_BYTES + 8 * channels;
  if (buf.length < windowsEnd) throw new FormatError("file ends inside window metadata");
  for (let k = 0; k < channels; k++) windows.push(buf.readDoubleLE(QSX_FIXED_BYTES + 8 * k));
  const count = width * height * channels;
  const itemSize = dtypeFlag === 0 ? 1 : 4;
  if (buf.length < windowsEnd + count * itemSize) {
    throw new FormatError(`truncated payload at byte ${buf.length}`);
  }
  const payload = buf.subarray(windowsEnd, windowsEnd + count * itemSize);
  const planes = new Float64Array(count);
  if (dtypeFlag === 0) {
    for (let i = 0; i < count; i++) planes[i] = payload[i] / 255.0;
  } else {
    for (let i = 0; i < count; i++) planes[i] = payload.readFloatLE(4 * i);
  }
  return {
    width, height, channels,
    dtype: dtypeFlag === 0 ? "u8" : "f32",
    timestamp, windows, planes,
    payload: Buffer.from(payload),
    header: Buffer.from(buf.subarray(0, windowsEnd)),
  };
}

/** Re-encode a stack header; must round-trip the bytes exactly. */
export function encodeStackHeader(sf: StackFile): Buffer {
  const buf = Buffer.alloc(QSX_FIXED_BYTES + 8 * sf.channels);
  buf.write("QSX1", 0, "ascii");
  buf.writeUInt32LE(1, 4);
  buf.writeUInt32LE(sf.width, 8);
  buf.writeUInt32LE(sf.height, 12);
  buf.writeUInt32LE(sf.channels, 16);
  buf.writeUInt8(sf.dtype === "u8" ? 0 : 1, 20);
  buf.writeBigUInt64LE(BigInt(sf.timestamp), 21);
  for (let k = 0; k < sf.channels; k++) buf.writeDoubleLE(sf.windows[k], QSX_FIXED_BYTES + 8 * k);
  return buf;
}

/** Ground-truth flux: a 1-channel float32 stack. */
export function readFlux(path: string): { data: Float64Array; timestamp: number } {
  const sf = readStack(path);
  if (sf.channels !== 1 || sf.dtype !== "f32") {
    throw new FormatError("not a flux file (expected 1 float32 channel)");
  }
  return { data: sf.planes, timestamp: sf.timestamp };
}

export interface BitplaneFile {
  width: number;
  height: number;
  frameCount: number;
  frameRateHz: number;
  /** unpacked bits of frame t as 0/1 bytes */
  frame(t: number): Uint8Array;
}

export function readBitplanes(path: string): BitplaneFile {
  const buf = readFileSync(path);
  checkMagic(buf, "QSB1");
  if (buf.length < QSB_HEADER_BYTES) throw new FormatError("file ends inside the header");
  const version = buf.readUInt32LE(4);
  if (version !== 1) throw new FormatError(`unsupported version ${version}`);
  const width = buf.readUInt32LE(8);
  const height = buf.readUInt32LE(12);
  const frameCount = Number(buf.readBigUInt64LE(16));
  const frameRateHz = buf.readDoubleLE(24);
  const frameBytes = Math.ceil((width * height) / 8);
  if (buf.length < QSB_HEADER_BYTES + frameCount * frameBytes) {
    const have = Math.floor((buf.length - QSB_HEADER_BYTES) / frameBytes);
    throw new FormatError(`truncated stream: frame ${have} of ${frameCount} missing`);
  }
  return {
    width, height, frameCount, frameRateHz,
    frame(t: number): Uint8Array {
      if (t < 0 || t >= frameCount) throw new FormatError(`frame ${t} out of range`);
      const start = QSB_HEADER_BYTES + t * frameBytes;
      const bits = new Uint8Array(width * height);
      for (let i = 0; i < width * height; i++) {
        bits[i] = (buf[start + (i >> 3)] >> (7 - (i & 7))) & 1;
      }
      return bits;
    },
  };
}

export interface PairEntry {
  stack: string;
  gt: string;
  scene: number;
  t: number;
  speed_px_per_frame: number;
}

export interface Manifest {
  version: number;
  width: number;
  height: number;
  channels: number;
  windows: number[];
  stride: number;
  stack_dtype: string;
  tone: { mu: number; zeta: number };
  loss: { sigma: number };
  sensor: { pdp: number; dark_rate: number; frame_rate: number; dark_per_frame: number };
  pairs: PairEntry[];
  parity: {
    tone: { mu: number; zeta: number; inputs: number[]; outputs: number[] };
    loss: { sigma: number; cases: { a: number[][]; b: number[][]; loss: number }[] };
  };
}

export function readManifest(dir: string): Manifest {
  const raw = JSON.parse(readFileSync(join(dir, "manifest.json"), "utf-8")) as Manifest;
  if (!Array.isArray(raw.pairs) || raw.pairs.length === 0) {
    throw new FormatError("manifest lists no pairs");
  }
  return raw;
}
