/**
 * Portable deterministic random stream shared with the Python fixture twin.
 *
 * splitmix64 over BigInt; output i (1-based) mixes seed + i * GOLDEN, so
 * the stream is identical however it is consumed in blocks. Uniforms take
 * the top 53 bits; gaussians are twelve uniforms summed left to right
 * minus 6. All derived reductions (norms, dots) accumulate in index order
 * because every operation here must round identically in any IEEE 754
 * implementation.
 */

const MASK = (1n << 64n) - 1n;
const GOLDEN = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;
const TWO_NEG_53 = 2 ** -53;

export class PortableRng {
  private seed: bigint;
  private count = 0n;

  constructor(seed: number | bigint) {
    const s = BigInt(seed);
    if (typeof seed === "number" && (seed < 0 || seed >= 2 ** 53)) {
      throw new Error("seed must fit in 53 bits for cross-language JSON");
    }
    this.seed = s & MASK;
  }

  nextU64(): bigint {
    this.count += 1n;
    let z = (this.seed + this.count * GOLDEN) & MASK;
    z = ((z ^ (z >> 30n)) * MIX1) & MASK;
    z = ((z ^ (z >> 27n)) * MIX2) & MASK;
    return z ^ (z >> 31n);
  }

  uniform(): number {
    return Number(this.nextU64() >> 11n) * TWO_NEG_53;
  }

  uniformBlock(n: number): Float64Array {
    const out = new Float64Array(n);
    for (let i = 0; i < n; i++) out[i] = this.uniform();
    return out;
  }

  gauss(): number {
    let s = this.uniform();
    for (let k = 1; k < 12; k++) s += this.uniform();
    return s - 6.0;
  }

  gaussBlock(n: number): Float64Array {
    const out = new Float64Array(n);
    for (let i = 0; i < n; i++) out[i] = this.gauss();
    return out;
  }
}

export function dot(a: Float64Array, b: Float64Array): number {
  let acc = 0.0;
  for (let j = 0; j < a.length; j++) acc += a[j] * b[j];
  return acc;
}

export function sqDist(a: Float64Array, b: Float64Array): number {
  let acc = 0.0;
  for (let j = 0; j < a.length; j++) {
    const d = a[j] - b[j];
    acc += d * d;
  }
  return acc;
}

export function norm(v: Float64Array): number {
  let acc = v[0] * v[0];
  for (let j = 1; j < v.length; j++) acc = acc + v[j] * v[j];
  return Math.sqrt(acc);
}

export function unit(v: Float64Array): Float64Array {
  const n = norm(v);
  if (n === 0.0) throw new Error("degenerate zero-norm direction");
  const out = new Float64Array(v.length);
  for (let j = 0; j < v.length; j++) out[j] = v[j] / n;
  return out;
}
