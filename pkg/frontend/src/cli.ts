#!/usr/bin/env node
/**
 * oe-extract: encode texts/images into EMB1 files, generate candidate
 * texts, and emit synthetic fixtures.
 *
 *   oe-extract encode-texts  --config cfg.json
 *   oe-extract encode-images --config cfg.json
 *   oe-extract generate      --config cfg.json
 *   oe-extract fixture       --config spec.json --out DIR
 *
 * Configs are JSON; see the README for each command's fields. Credentials
 * for http backends come from OE_EXTRACT_ENDPOINT / OE_EXTRACT_API_KEY.
 */

import * as fs from "node:fs";
import { parseArgs } from "node:util";

import { loadEmb1, saveEmb1 } from "./emb1.js";
import { DEFAULT_TEMPLATES, encodeImages, encodeTexts, makeEncoder } from "./encoder.js";
import { FixtureSpec, writeFixture } from "./fixture.js";
import {
  generateCaptions,
  generateDescriptions,
  generateWords,
  makeModel,
  toJsonl,
} from "./generate.js";

function readConfig(path: string): Record<string, unknown> {
  return JSON.parse(fs.readFileSync(path, "utf-8"));
}

function need<T>(cfg: Record<string, unknown>, key: string): T {
  if (!(key in cfg)) throw new Error(`config missing key '${key}'`);
  return cfg[key] as T;
}

async function cmdEncodeTexts(cfg: Record<string, unknown>): Promise<void> {
  const encoder = makeEncoder((cfg.backend as string) ?? "hash", need<number>(cfg, "dim"));
  const texts = need<string[]>(cfg, "texts");
  const templates = (cfg.templates as string[]) ?? DEFAULT_TEMPLATES;
  const set = await encodeTexts(encoder, texts, templates);
  saveEmb1(set, need<string>(cfg, "out"));
}

async function cmdEncodeImages(cfg: Record<string, unknown>): Promise<void> {
  const encoder = makeEncoder((cfg.backend as string) ?? "hash", need<number>(cfg, "dim"));
  const images = need<{ path: string; class_name?: string }[]>(cfg, "images");
  const { set, failures } = await encodeImages(encoder, images, cfg.classes as string[]);
  saveEmb1(set, need<string>(cfg, "out"));
  if (failures.length > 0) {
    for (const failure of failures) {
      process.stderr.write(`failed: ${failure.path}: ${failure.error}\n`);
    }
    fs.writeFileSync(need<string>(cfg, "out") + ".failures.json",
      JSON.stringify(failures, null, 2) + "\n", "utf-8");
  }
}

async function cmdGenerate(cfg: Record<string, unknown>): Promise<void> {
  const kind = need<string>(cfg, "kind");
  const cacheDir = (cfg.cache_dir as string) ?? ".oe-extract-cache";
  const out = need<string>(cfg, "out");
  if (kind === "description") {
    const model = makeModel((cfg.model_kind as string) ?? "stub",
      (cfg.model as string) ?? "stub", cacheDir);
    const lines = await generateDescriptions(model, need<string[]>(cfg, "classes"),
      (cfg.per_class as number) ?? 5);
    fs.writeFileSync(out, toJsonl(lines), "utf-8");
  } else if (kind === "caption") {
    const model = makeModel((cfg.model_kind as string) ?? "stub",
      (cfg.model as string) ?? "stub", cacheDir);
    const lines = await generateCaptions(model, need<string[]>(cfg, "images"));
    fs.writeFileSync(out, toJsonl(lines), "utf-8");
  } else if (kind === "word") {
    const encoder = makeEncoder((cfg.backend as string) ?? "hash", need<number>(cfg, "dim"));
    const vocabulary = fs.readFileSync(need<string>(cfg, "vocabulary"), "utf-8")
      .split("\n").map((w) => w.trim()).filter((w) => w.length > 0);
    const idImages = loadEmb1(need<string>(cfg, "id_images"));
    const lines = await generateWords(encoder, vocabulary, idImages,
      need<string[]>(cfg, "classes"), (cfg.per_class as number) ?? 50);
    fs.writeFileSync(out, toJsonl(lines), "utf-8");
  } else {
    throw new Error(`unknown generation kind '${kind}'`);
  }
}

async function main(): Promise<number> {
  const { positionals, values } = parseArgs({
    allowPositionals: true,
    options: {
      config: { type: "string" },
      out: { type: "string" },
    },
  });
  const command = positionals[0];
  if (!command || !values.config) {
    process.stderr.write(
      "usage: oe-extract encode-texts|encode-images|generate|fixture --config FILE [--out DIR]\n");
    return 2;
  }
  try {
    if (command === "encode-texts") {
      await cmdEncodeTexts(readConfig(values.config));
    } else if (command === "encode-images") {
      await cmdEncodeImages(readConfig(values.config));
    } else if (command === "generate") {
      await cmdGenerate(readConfig(values.config));
    } else if (command === "fixture") {
      if (!values.out) throw new Error("fixture needs --out DIR");
      writeFixture(readConfig(values.config) as unknown as FixtureSpec, values.out);
    } else {
      throw new Error(`unknown command '${command}'`);
    }
  } catch (err) {
    process.stderr.write(`oe-extract: ${err instanceof Error ? err.message : String(err)}\n`);
    return 2;
  }
  return 0;
}

main().then((code) => {
  process.exitCode = code;
});
