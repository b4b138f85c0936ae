/**
 * Encoding backends that turn texts and images into EMB1 embedding sets.
 *
 * Two backends share one interface: "hash" derives a deterministic unit
 * vector from the sha256 of the input (offline, reproducible, used by the
 * test suite and for desk-scale experiments), and "http" posts to a
 * dual-encoder embedding service (endpoint and credentials via
 * OE_EXTRACT_ENDPOINT / OE_EXTRACT_API_KEY). Image and text embeddings
 * share one dimension, whatever the backend.
 *
 * Prompt ensembling embeds every templated variant of a text, averages
 * the unit vectors, and renormalizes the mean.
 */

import { createHash } from "node:crypto";
import * as fs from "node:fs";

import { EmbeddingSet, MetaRecord } from "./emb1.js";
import { PortableRng, norm } from "./rng.js";
import { retryingFetch } from "./generate.js";

export const DEFAULT_TEMPLATES = [
  "A photo of a {}",
  "A blurry photo of a {}",
  "A photo of many {}",
  "A photo of the large {}",
  "A photo of the small {}",
];

export interface EncoderClient {
  readonly backend: string;
  readonly dim: number;
  embedText(text: string): Promise<Float64Array>;
  embedImage(bytes: Buffer): Promise<Float64Array>;
}

function hashSeed(payload: Buffer | string, tag: string): bigint {
  const digest = createHash("sha256")
    .update(tag)
    .update(typeof payload === "string" ? Buffer.from(payload, "utf-8") : payload)
    .digest();
  return digest.readBigUInt64LE(0);
}

function unitVectorFromSeed(seed: bigint, dim: number): Float64Array {
  const rng = new PortableRng(seed);
  const v = rng.gaussBlock(dim);
  const n = norm(v);
  const out = new Float64Array(dim);
  for (let j = 0; j < dim; j++) out[j] = v[j] / n;
  return out;
}

/** Offline feature-hashing encoder: sha256 seeds a unit direction. */
export class HashEncoder implements EncoderClient {
  readonly backend = "hash";

  constructor(readonly dim: number) {
    if (dim < 2) throw new Error("hash encoder needs dim >= 2");
  }

  async embedText(text: string): Promise<Float64Array> {
    return unitVectorFromSeed(hashSeed(text, "text:"), this.dim);
  }

  async embedImage(bytes: Buffer): Promise<Float64Array> {
    return unitVectorFromSeed(hashSeed(bytes, "image:"), this.dim);
  }
}

/** Thin client for an embedding endpoint; retries with backoff. */
export class HttpEncoder implements EncoderClient {
  readonly backend = "http";

  constructor(
    readonly dim: number,
    private endpoint = process.env.OE_EXTRACT_ENDPOINT ?? "",
    private apiKey = process.env.OE_EXTRACT_API_KEY ?? "",
  ) {
    if (!this.endpoint) {
      throw new Error("http backend needs OE_EXTRACT_ENDPOINT");
    }
  }

  private async post(body: Record<string, unknown>): Promise<Float64Array> {
    const response = await retryingFetch(`${this.endpoint}/embed`, {
      method: "POST",
      headers: {
        "content-type": "application/json",
        ...(this.apiKey ? { authorization: `Bearer ${this.apiKey}` } : {}),
      },
      body: JSON.stringify(body),
    });
    const parsed = (await response.json()) as { embedding: number[] };
    if (!Array.isArray(parsed.embedding) || parsed.embedding.length !== this.dim) {
      throw new Error("embedding service returned an unexpected payload");
    }
    return Float64Array.from(parsed.embedding);
  }

  async embedText(text: string): Promise<Float64Array> {
    return this.post({ kind: "text", text });
  }

  async embedImage(bytes: Buffer): Promise<Float64Array> {
    return this.post({ kind: "image", image_base64: bytes.toString("base64") });
  }
}

export function makeEncoder(backend: string, dim: number): EncoderClient {
  if (backend === "hash") return new HashEncoder(dim);
  if (backend === "http") return new HttpEncoder(dim);
  throw new Error(`unknown encoder backend '${backend}'`);
}

export function applyTemplate(template: string, text: string): string {
  const slots = template.split("{}").length - 1;
  if (slots !== 1) throw new Error(`template needs exactly one {} slot: '${template}'`);
  return template.replace("{}", text);
}

/**
 * Embed each templated variant, average, renormalize; one row per text.
 */
export async function encodeTexts(
  encoder: EncoderClient,
  texts: string[],
  templates: string[] = DEFAULT_TEMPLATES,
): Promise<EmbeddingSet> {
  if (texts.length === 0) throw new Error("encodeTexts needs at least one text");
  if (templates.length === 0) throw new Error("encodeTexts needs at least one template");
  templates.forEach((t) => applyTemplate(t, "probe"));
  const dim = encoder.dim;
  const data = new Float32Array(texts.length * dim);
  const meta: MetaRecord[] = [];
  for (let i = 0; i < texts.length; i++) {
    const mean = new Float64Array(dim);
    for (const template of templates) {
      const v = await encoder.embedText(applyTemplate(template, texts[i]));
      for (let j = 0; j < dim; j++) mean[j] += v[j];
    }
    for (let j = 0; j < dim; j++) mean[j] /= templates.length;
    const n = norm(mean);
    if (n === 0.0) throw new Error(`ensemble collapsed to zero for '${texts[i]}'`);
    for (let j = 0; j < dim; j++) data[i * dim + j] = Math.fround(mean[j] / n);
    meta.push({ text: texts[i] });
  }
  return { dim, count: texts.length, data, meta };
}

export interface ImageInput {
  path: string;
  class_name?: string;
}

export interface ImageEncodeResult {
  set: EmbeddingSet;
  failures: { path: string; error: string }[];
}

/**
 * One row per readable image, in input order; unreadable files are
 * collected as failures and the run continues.
 */
export async function encodeImages(
  encoder: EncoderClient,
  images: ImageInput[],
  classNames?: string[],
): Promise<ImageEncodeResult> {
  const dim = encoder.dim;
  const rows: Float64Array[] = [];
  const labels: number[] = [];
  const meta: MetaRecord[] = [];
  const failures: { path: string; error: string }[] = [];
  const classIndex = new Map<string, number>();
  (classNames ?? []).forEach((name, i) => classIndex.set(name, i));

  for (const image of images) {
    let bytes: Buffer;
    try {
      bytes = fs.readFileSync(image.path);
    } catch (err) {
      failures.push({ path: image.path, error: String(err) });
      continue;
    }
    rows.push(await encoder.embedImage(bytes));
    meta.push({ source: image.path, ...(image.class_name ? { class_name: image.class_name } : {}) });
    if (image.class_name !== undefined) {
      if (!classIndex.has(image.class_name)) {
        throw new Error(`class '${image.class_name}' missing from the class list`);
      }
      labels.push(classIndex.get(image.class_name)!);
    }
  }
  const data = new Float32Array(rows.length * dim);
  rows.forEach((row, i) => {
    for (let j = 0; j < dim; j++) data[i * dim + j] = Math.fround(row[j]);
  });
  const set: EmbeddingSet = {
    dim,
    count: rows.length,
    data,
    labels: labels.length === rows.length && rows.length > 0 ? Uint32Array.from(labels) : undefined,
    meta: rows.length > 0 ? meta : undefined,
  };
  return { set, failures };
}
