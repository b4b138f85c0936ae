/**
 * Synthetic embedding fixture twin.
 *
 * Consumes the same generator-spec JSON as the reference implementation
 * and reproduces its EMB1 output byte for byte. Every draw, reduction
 * order, and arithmetic expression below deliberately mirrors the
 * reference: splitmix64 stream, CLT gaussians, sequential norms, and
 * elementwise `mean + scale * direction` row construction with f32
 * rounding only at write time.
 *
 * Draw order: class means (rejection on minimum separation), a random
 * offset direction, per-class OoD axes (gaussians orthogonalized against
 * the span of the means), then id_train / id_val / id_test / ood_near /
 * ood_far / outlier_candidates / outlier_candidates_far.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { EmbeddingSet, MetaRecord, saveEmb1 } from "./emb1.js";
import { PortableRng, dot, norm, sqDist, unit } from "./rng.js";

export const SPEC_FORMAT = "oe-fixture-spec-v1";
export const FILES = [
  "id_train",
  "id_val",
  "id_test",
  "ood_near",
  "ood_far",
  "outlier_candidates",
  "outlier_candidates_far",
] as const;

export interface OodPart {
  offset_sigmas: number;
  per_class: number;
  sigma: number;
}

export interface CandidatePart {
  per_class: number;
  radius_sigmas: [number, number];
  axis_weight: number;
  spread: number;
  min_sep_sigmas?: number;
}

export interface FixtureSpec {
  format: string;
  seed: number;
  dim: number;
  class_names: string[];
  mean_radius: number;
  min_mean_separation: number;
  id_sigma: number;
  counts: { train: number; val: number; test: number };
  near_ood: OodPart;
  far_ood: OodPart;
  candidates_near: CandidatePart;
  candidates_far: CandidatePart;
  candidate_offset: number;
}

function checkSpec(spec: FixtureSpec): void {
  const required = [
    "format", "seed", "dim", "class_names", "mean_radius",
    "min_mean_separation", "id_sigma", "counts", "near_ood", "far_ood",
    "candidates_near", "candidates_far", "candidate_offset",
  ];
  for (const key of required) {
    if (!(key in (spec as unknown as Record<string, unknown>))) {
      throw new Error(`fixture spec missing key '${key}'`);
    }
  }
  if (spec.format !== SPEC_FORMAT) throw new Error(`unknown fixture spec format ${spec.format}`);
  if (spec.class_names.length < 2) throw new Error("fixture spec needs at least 2 classes");
  if (spec.dim < 1) throw new Error("fixture spec needs dim >= 1");
  for (const part of ["train", "val", "test"] as const) {
    if (spec.counts[part] < 1) throw new Error(`counts.${part} must be >= 1`);
  }
  if (spec.id_sigma <= 0) throw new Error("id_sigma must be > 0");
}

function drawMeans(rng: PortableRng, spec: FixtureSpec): Float64Array[] {
  const C = spec.class_names.length;
  const minSep2 = spec.min_mean_separation * spec.min_mean_separation;
  const means: Float64Array[] = [];
  let attempts = 0;
  while (means.length < C) {
    attempts += 1;
    if (attempts > 10000) throw new Error("cannot place class means at the requested separation");
    const u = unit(rng.gaussBlock(spec.dim));
    const cand = new Float64Array(spec.dim);
    for (let j = 0; j < spec.dim; j++) cand[j] = u[j] * spec.mean_radius;
    let ok = true;
    for (const placed of means) {
      if (sqDist(cand, placed) < minSep2) {
        ok = false;
        break;
      }
    }
    if (ok) means.push(cand);
  }
  return means;
}

function toF32(rows: Float64Array[], dim: number): Float32Array {
  const out = new Float32Array(rows.length * dim);
  for (let i = 0; i < rows.length; i++) {
    for (let j = 0; j < dim; j++) out[i * dim + j] = Math.fround(rows[i][j]);
  }
  return out;
}

export function generateFixture(spec: FixtureSpec): Record<string, EmbeddingSet> {
  checkSpec(spec);
  const rng = new PortableRng(spec.seed);
  const C = spec.class_names.length;
  const dim = spec.dim;
  const sigma = spec.id_sigma;

  const means = drawMeans(rng, spec);
  const offsetDir = unit(rng.gaussBlock(dim));

  // orthonormal basis of the span of the means (modified Gram-Schmidt)
  const basis: Float64Array[] = [];
  for (let c = 0; c < C; c++) {
    let v = Float64Array.from(means[c]);
    for (const q of basis) {
      const d = dot(q, v);
      const next = new Float64Array(dim);
      for (let j = 0; j < dim; j++) next[j] = v[j] - d * q[j];
      v = next;
    }
    const n = norm(v);
    if (n > 1e-9) {
      const q = new Float64Array(dim);
      for (let j = 0; j < dim; j++) q[j] = v[j] / n;
      basis.push(q);
    }
  }
  const uAxis: Float64Array[] = [];
  for (let c = 0; c < C; c++) {
    let v = rng.gaussBlock(dim);
    for (const q of basis) {
      const d = dot(q, v);
      const next = new Float64Array(dim);
      for (let j = 0; j < dim; j++) next[j] = v[j] - d * q[j];
      v = next;
    }
    uAxis.push(unit(v));
  }

  const out: Record<string, EmbeddingSet> = {};

  const idSet = (count: number): EmbeddingSet => {
    const rows: Float64Array[] = [];
    const labels = new Uint32Array(C * count);
    for (let c = 0; c < C; c++) {
      for (let i = 0; i < count; i++) {
        const g = rng.gaussBlock(dim);
        const row = new Float64Array(dim);
        for (let j = 0; j < dim; j++) row[j] = means[c][j] + sigma * g[j];
        rows.push(row);
        labels[c * count + i] = c;
      }
    }
    return { dim, count: rows.length, data: toF32(rows, dim), labels };
  };

  out.id_train = idSet(spec.counts.train);
  out.id_val = idSet(spec.counts.val);
  out.id_test = idSet(spec.counts.test);

  const clearsOtherMeans = (point: Float64Array, c: number, limit: number): boolean => {
    for (let j = 0; j < C; j++) {
      if (j !== c && sqDist(point, means[j]) < limit * limit) return false;
    }
    return true;
  };

  const oodSet = (part: OodPart, alongAxis: boolean): EmbeddingSet => {
    const rows: Float64Array[] = [];
    const off = part.offset_sigmas * sigma;
    for (let c = 0; c < C; c++) {
      let center = new Float64Array(dim);
      if (alongAxis) {
        for (let j = 0; j < dim; j++) center[j] = means[c][j] + off * uAxis[c][j];
      } else {
        let attempts = 0;
        for (;;) {
          attempts += 1;
          if (attempts > 10000) throw new Error("cannot place a far cluster center");
          const d = unit(rng.gaussBlock(dim));
          for (let j = 0; j < dim; j++) center[j] = means[c][j] + off * d[j];
          if (clearsOtherMeans(center, c, off)) break;
        }
      }
      for (let i = 0; i < part.per_class; i++) {
        const g = rng.gaussBlock(dim);
        const row = new Float64Array(dim);
        for (let j = 0; j < dim; j++) row[j] = center[j] + part.sigma * g[j];
        rows.push(row);
      }
    }
    return { dim, count: rows.length, data: toF32(rows, dim) };
  };

  out.ood_near = oodSet(spec.near_ood, true);
  out.ood_far = oodSet(spec.far_ood, false);

  const candidateSet = (part: CandidatePart, tag: string): EmbeddingSet => {
    const rows: Float64Array[] = [];
    const meta: MetaRecord[] = [];
    const [rmin, rmax] = part.radius_sigmas;
    const minSep = (part.min_sep_sigmas ?? 0.0) * sigma;
    const off = spec.candidate_offset;
    for (let c = 0; c < C; c++) {
      if (minSep > 0.0) {
        // per-row rejection: one direction plus one radius per attempt
        for (let i = 0; i < part.per_class; i++) {
          let attempts = 0;
          const point = new Float64Array(dim);
          for (;;) {
            attempts += 1;
            if (attempts > 10000) throw new Error("cannot place a far candidate");
            const g = rng.gaussBlock(dim);
            const raw = new Float64Array(dim);
            for (let j = 0; j < dim; j++) raw[j] = part.axis_weight * uAxis[c][j] + part.spread * g[j];
            const d = unit(raw);
            const r = (rmin + (rmax - rmin) * rng.uniform()) * sigma;
            for (let j = 0; j < dim; j++) point[j] = (means[c][j] + r * d[j]) + off * offsetDir[j];
            if (clearsOtherMeans(point, c, minSep)) break;
          }
          rows.push(Float64Array.from(point));
        }
      } else {
        // block draws: all directions first, then all radii
        const dirs: Float64Array[] = [];
        for (let i = 0; i < part.per_class; i++) {
          const g = rng.gaussBlock(dim);
          const raw = new Float64Array(dim);
          for (let j = 0; j < dim; j++) raw[j] = part.axis_weight * uAxis[c][j] + part.spread * g[j];
          dirs.push(unit(raw));
        }
        for (let i = 0; i < part.per_class; i++) {
          const r = (rmin + (rmax - rmin) * rng.uniform()) * sigma;
          const row = new Float64Array(dim);
          for (let j = 0; j < dim; j++) row[j] = (means[c][j] + r * dirs[i][j]) + off * offsetDir[j];
          rows.push(row);
        }
      }
      for (let i = 0; i < part.per_class; i++) {
        meta.push({ text: `pattern-${c}-${i}`, source: tag });
      }
    }
    return { dim, count: rows.length, data: toF32(rows, dim), meta };
  };

  out.outlier_candidates = candidateSet(spec.candidates_near, "near-candidate");
  out.outlier_candidates_far = candidateSet(spec.candidates_far, "far-candidate");
  return out;
}

export function writeFixture(spec: FixtureSpec, outdir: string): string[] {
  fs.mkdirSync(outdir, { recursive: true });
  const sets = generateFixture(spec);
  const written: string[] = [];
  for (const stem of FILES) {
    const file = path.join(outdir, `${stem}.emb`);
    saveEmb1(sets[stem], file);
    written.push(file);
  }
  fs.writeFileSync(path.join(outdir, "classes.txt"), spec.class_names.join("\n") + "\n", "utf-8");
  return written;
}
