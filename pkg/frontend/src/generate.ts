/**
 * Raw candidate text generation for the three outlier levels.
 *
 * Generation only produces candidates; every filtering step happens
 * downstream in the filtering pipeline. Each JSONL line carries the kind,
 * the text, and enough provenance to audit where it came from.
 *
 * Model access goes through a pluggable text model: "stub" produces
 * deterministic texts offline (hash-seeded picks from small word banks),
 * "http" posts prompts to a completion endpoint with retry/backoff and an
 * on-disk response cache keyed by (model, prompt).
 */

import { createHash } from "node:crypto";
import * as fs from "node:fs";
import * as path from "node:path";

import { EmbeddingSet, row } from "./emb1.js";
import { EncoderClient } from "./encoder.js";
import { PortableRng, dot, norm } from "./rng.js";

export const DESCRIPTION_PROMPT = "describe what the {class name} looks like";

export interface CandidateLine {
  kind: "word" | "description" | "caption";
  text: string;
  model: string;
  source: string;
  class_name?: string;
  image?: string;
  similarity?: number;
}

export interface TextModel {
  readonly name: string;
  complete(prompt: string, n: number): Promise<string[]>;
}

// ------------------------------------------------------------------ retry

const RETRIES = 4;
const BACKOFF_MS = 250;

export async function withRetries<T>(
  attempt: () => Promise<T>,
  retries = RETRIES,
  backoffMs = BACKOFF_MS,
  sleep: (ms: number) => Promise<void> = (ms) => new Promise((r) => setTimeout(r, ms)),
): Promise<T> {
  let lastError: unknown;
  for (let i = 0; i <= retries; i++) {
    try {
      return await attempt();
    } catch (err) {
      lastError = err;
      if (i < retries) await sleep(backoffMs * 2 ** i);
    }
  }
  throw new Error(`job failed after ${retries + 1} attempts: ${String(lastError)}`);
}

export async function retryingFetch(url: string, init: RequestInit): Promise<Response> {
  return withRetries(async () => {
    const response = await fetch(url, init);
    if (!response.ok) throw new Error(`HTTP ${response.status} from ${url}`);
    return response;
  });
}

// ------------------------------------------------------------------ models

const ADJECTIVES = ["slender", "mottled", "glossy", "pale", "ridged", "banded",
  "compact", "angular", "weathered", "translucent"];
const SUBJECTS = ["body", "surface", "crest", "shell", "frame", "canopy",
  "hull", "plumage", "bark", "facade"];
const SETTINGS = ["under soft light", "at the shoreline", "against the sky",
  "on a workbench", "in shallow water", "among dry grass", "at dusk",
  "beside a fence", "on cracked ground", "near the treeline"];

function pick(rng: PortableRng, bank: string[]): string {
  return bank[Number(rng.nextU64() % BigInt(bank.length))];
}

/** Deterministic offline model: hash of (name, prompt) seeds the stream. */
export class StubModel implements TextModel {
  readonly name = "stub";

  async complete(prompt: string, n: number): Promise<string[]> {
    const seed = createHash("sha256")
      .update(this.name)
      .update(prompt)
      .digest()
      .readBigUInt64LE(0);
    const rng = new PortableRng(seed);
    const lines: string[] = [];
    for (let i = 0; i < n; i++) {
      lines.push(`a ${pick(rng, ADJECTIVES)} ${pick(rng, SUBJECTS)} ${pick(rng, SETTINGS)}`);
    }
    return lines;
  }
}

export class HttpModel implements TextModel {
  constructor(
    readonly name: string,
    private cacheDir: string,
    private endpoint = process.env.OE_EXTRACT_ENDPOINT ?? "",
    private apiKey = process.env.OE_EXTRACT_API_KEY ?? "",
  ) {
    if (!this.endpoint) throw new Error("http model needs OE_EXTRACT_ENDPOINT");
  }

  private cachePath(prompt: string): string {
    const key = createHash("sha256").update(this.name).update(prompt).digest("hex");
    return path.join(this.cacheDir, `${key}.json`);
  }

  async complete(prompt: string, n: number): Promise<string[]> {
    const cached = this.cachePath(prompt);
    if (fs.existsSync(cached)) {
      return JSON.parse(fs.readFileSync(cached, "utf-8")).slice(0, n);
    }
    const response = await retryingFetch(`${this.endpoint}/complete`, {
      method: "POST",
      headers: {
        "content-type": "application/json",
        ...(this.apiKey ? { authorization: `Bearer ${this.apiKey}` } : {}),
      },
      body: JSON.stringify({ model: this.name, prompt, n }),
    });
    const parsed = (await response.json()) as { texts: string[] };
    fs.mkdirSync(this.cacheDir, { recursive: true });
    fs.writeFileSync(cached, JSON.stringify(parsed.texts), "utf-8");
    return parsed.texts.slice(0, n);
  }
}

export function makeModel(kind: string, name: string, cacheDir: string): TextModel {
  if (kind === "stub") return new StubModel();
  if (kind === "http") return new HttpModel(name, cacheDir);
  throw new Error(`unknown model kind '${kind}'`);
}

// -------------------------------------------------------------- generation

export async function generateDescriptions(
  model: TextModel,
  classNames: string[],
  perClass: number,
): Promise<CandidateLine[]> {
  const out: CandidateLine[] = [];
  for (const name of classNames) {
    const prompt = DESCRIPTION_PROMPT.replace("{class name}", name);
    const texts = await model.complete(prompt, perClass);
    for (const text of texts) {
      out.push({ kind: "description", text, model: model.name,
                 source: "description", class_name: name });
    }
  }
  return out;
}

export async function generateCaptions(
  model: TextModel,
  imagePaths: string[],
): Promise<CandidateLine[]> {
  const out: CandidateLine[] = [];
  for (const imagePath of imagePaths) {
    const bytes = fs.readFileSync(imagePath);
    const prompt = `caption:${createHash("sha256").update(bytes).digest("hex")}`;
    const [text] = await model.complete(prompt, 1);
    out.push({ kind: "caption", text, model: model.name,
               source: "caption", image: imagePath });
  }
  return out;
}

/**
 * Word-level candidates by nearest-vocabulary retrieval: embed each word,
 * rank by cosine similarity against per-class mean image embeddings, and
 * keep the top block per class. Nothing is excluded here.
 */
export async function generateWords(
  encoder: EncoderClient,
  vocabulary: string[],
  idImages: EmbeddingSet,
  classNames: string[],
  perClass: number,
): Promise<CandidateLine[]> {
  if (!idImages.labels) throw new Error("word retrieval needs labeled id images");
  const dim = idImages.dim;
  const C = classNames.length;
  const means: Float64Array[] = [];
  for (let c = 0; c < C; c++) {
    const mean = new Float64Array(dim);
    let count = 0;
    for (let i = 0; i < idImages.count; i++) {
      if (idImages.labels[i] === c) {
        const r = row(idImages, i);
        for (let j = 0; j < dim; j++) mean[j] += r[j];
        count += 1;
      }
    }
    if (count === 0) throw new Error(`class '${classNames[c]}' has no image rows`);
    for (let j = 0; j < dim; j++) mean[j] /= count;
    const n = norm(mean);
    for (let j = 0; j < dim; j++) mean[j] /= n;
    means.push(mean);
  }

  const embolded: Float64Array[] = [];
  for (const word of vocabulary) embolded.push(await encoder.embedText(word));

  const out: CandidateLine[] = [];
  for (let c = 0; c < C; c++) {
    const sims = vocabulary.map((_, i) => dot(embolded[i], means[c]));
    const order = sims
      .map((s, i) => [s, i] as const)
      .sort((a, b) => (b[0] - a[0]) || (a[1] - b[1]));
    for (const [sim, i] of order.slice(0, perClass)) {
      out.push({ kind: "word", text: vocabulary[i], model: encoder.backend,
                 source: "word", class_name: classNames[c], similarity: sim });
    }
  }
  return out;
}

export function toJsonl(lines: CandidateLine[]): string {
  return lines.map((line) => JSON.stringify(line)).join("\n") + "\n";
}
