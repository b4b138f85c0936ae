/**
 * EMB1 binary embedding files plus the JSONL metadata sidecar.
 *
 * Layout (little-endian): magic "EMB1", version u32, dim u32, count u64,
 * flags u32 (bit 0: labels), then count*dim f32 row-major, then count u32
 * labels when flagged. The sidecar at `<path>.meta.jsonl` holds one object
 * per row with keys row, text, class_name, source (optional except row).
 * Bytes written here are identical to the reference Python implementation.
 */

import * as fs from "node:fs";

export interface MetaRecord {
  text?: string;
  class_name?: string;
  source?: string;
}

export interface EmbeddingSet {
  dim: number;
  count: number;
  /** row-major f32 payload, count * dim entries */
  data: Float32Array;
  labels?: Uint32Array;
  meta?: MetaRecord[];
}

const MAGIC = 0x31424d45; // "EMB1" read as LE u32
const VERSION = 1;
const HEADER_BYTES = 24;
const FLAG_LABELS = 0x1;
const META_KEYS: (keyof MetaRecord)[] = ["text", "class_name", "source"];

export function encodeEmb1(set: EmbeddingSet): Buffer {
  const { dim, count } = set;
  if (set.data.length !== dim * count) {
    throw new Error(`payload has ${set.data.length} floats for ${count}x${dim}`);
  }
  const flags = set.labels ? FLAG_LABELS : 0;
  const size = HEADER_BYTES + count * dim * 4 + (set.labels ? count * 4 : 0);
  const buf = Buffer.alloc(size);
  buf.write("EMB1", 0, "ascii");
  buf.writeUInt32LE(VERSION, 4);
  buf.writeUInt32LE(dim, 8);
  buf.writeBigUInt64LE(BigInt(count), 12);
  buf.writeUInt32LE(flags, 20);
  let off = HEADER_BYTES;
  for (let i = 0; i < set.data.length; i++, off += 4) {
    buf.writeFloatLE(set.data[i], off);
  }
  if (set.labels) {
    for (let i = 0; i < count; i++, off += 4) {
      buf.writeUInt32LE(set.labels[i], off);
    }
  }
  return buf;
}

export function metaJsonl(meta: MetaRecord[]): string {
  const lines = meta.map((rec, i) => {
    const obj: Record<string, unknown> = { row: i };
    for (const key of META_KEYS) {
      if (rec[key] !== undefined) obj[key] = rec[key];
    }
    return JSON.stringify(obj);
  });
  return lines.join("\n") + "\n";
}

export function saveEmb1(set: EmbeddingSet, path: string): void {
  fs.writeFileSync(path, encodeEmb1(set));
  const sidecar = path + ".meta.jsonl";
  if (set.meta) {
    if (set.meta.length !== set.count) {
      throw new Error(`meta has ${set.meta.length} records for ${set.count} rows`);
    }
    fs.writeFileSync(sidecar, metaJsonl(set.meta), "utf-8");
  } else if (fs.existsSync(sidecar)) {
    fs.unlinkSync(sidecar);
  }
}

export function loadEmb1(path: string): EmbeddingSet {
  const buf = fs.readFileSync(path);
  if (buf.length < HEADER_BYTES) throw new Error(`${path}: shorter than the header`);
  if (buf.readUInt32LE(0) !== MAGIC) throw new Error(`${path}: bad magic`);
  if (buf.readUInt32LE(4) !== VERSION) throw new Error(`${path}: unsupported version`);
  const dim = buf.readUInt32LE(8);
  const count = Number(buf.readBigUInt64LE(12));
  const flags = buf.readUInt32LE(20);
  const hasLabels = (flags & FLAG_LABELS) !== 0;
  const expected = HEADER_BYTES + count * dim * 4 + (hasLabels ? count * 4 : 0);
  if (buf.length !== expected) {
    throw new Error(`${path}: size ${buf.length} does not match header (${expected})`);
  }
  const data = new Float32Array(count * dim);
  let off = HEADER_BYTES;
  for (let i = 0; i < data.length; i++, off += 4) {
    data[i] = buf.readFloatLE(off);
    if (!Number.isFinite(data[i])) {
      throw new Error(`${path}: non-finite value in row ${Math.floor(i / dim)}`);
    }
  }
  let labels: Uint32Array | undefined;
  if (hasLabels) {
    labels = new Uint32Array(count);
    for (let i = 0; i < count; i++, off += 4) labels[i] = buf.readUInt32LE(off);
  }
  let meta: MetaRecord[] | undefined;
  const sidecar = path + ".meta.jsonl";
  if (fs.existsSync(sidecar)) {
    meta = fs
      .readFileSync(sidecar, "utf-8")
      .split("\n")
      .filter((line) => line.trim().length > 0)
      .map((line, i) => {
        const obj = JSON.parse(line);
        if (obj.row !== i) throw new Error(`${sidecar}: row keys out of order`);
        const rec: MetaRecord = {};
        for (const key of META_KEYS) {
          if (obj[key] !== undefined) rec[key] = obj[key];
        }
        return rec;
      });
    if (meta.length !== count) {
      throw new Error(`${sidecar}: ${meta.length} meta rows for ${count} data rows`);
    }
  }
  return { dim, count, data, labels, meta };
}

export function row(set: EmbeddingSet, i: number): Float64Array {
  const out = new Float64Array(set.dim);
  for (let j = 0; j < set.dim; j++) out[j] = set.data[i * set.dim + j];
  return out;
}
