"""Deterministic desk-scale embedding fixtures.

Generates labeled ID clusters, near/far OoD clusters, and text-tagged
outlier candidate pools as EMB1 files from a JSON generator spec. The
whole construction is reproducible byte-for-byte across implementations
in different languages, so the numeric recipe is deliberately restricted
to operations IEEE 754 pins down exactly:

* splitmix64 drives all randomness; output i mixes ``seed + i * GOLDEN``.
* uniforms take the top 53 bits: ``(z >> 11) * 2**-53``.
* gaussians are a CLT sum: twelve uniforms added left to right, minus 6
  (mean 0, variance 1, support [-6, 6]; plenty for cluster fixtures).
* every reduction (norms, dot products) accumulates in index order; no
  library reductions, whose summation order is unspecified.
* rows are built elementwise as ``mean + scale * direction`` and cast to
  f32 only when written.

Draw order: class means (with rejection on minimum separation), a
random offset direction, the per-class OoD axes, then rows for id_train /
id_val / id_test / ood_near / ood_far / outlier_candidates /
outlier_candidates_far. Near OoD clusters sit a few sigma off each class
mean along a shared axis orthogonal to the span of the class means; far
clusters sit in random directions rejected until they clear every class
mean. The candidate offset (simulated modality gap) is a constant
vector along the random offset direction. Candidate pools draw a unit direction (optionally biased along the
OoD axis) and a uniform radius per row; block parts draw all directions
first, then all radii, while rejection parts draw one direction and one
radius per attempt.

Run as a module: ``python -m oe_forge.fixture SPEC_JSON OUT_DIR``.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .embedstore import EmbeddingSet, save
from .errors import ValidationError

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
SPEC_FORMAT = "oe-fixture-spec-v1"

FILES = (
    "id_train", "id_val", "id_test", "ood_near", "ood_far",
    "outlier_candidates", "outlier_candidates_far",
)


class PortableRng:
    """splitmix64 stream with counter-based block generation.

    Output i (1-based) is mix(seed + i * GOLDEN), so blocks of any size
    reproduce the sequential stream exactly.
    """

    def __init__(self, seed: int):
        if not 0 <= seed < 2**53:
            raise ValidationError("seed must fit in 53 bits for cross-language JSON")
        self._seed = np.uint64(seed)
        self._count = 0

    def next_u64_block(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        z = self._seed + idx * GOLDEN
        z = (z ^ (z >> np.uint64(30))) * MIX1
        z = (z ^ (z >> np.uint64(27))) * MIX2
        return z ^ (z >> np.uint64(31))

    def uniform_block(self, n: int) -> np.ndarray:
        return (self.next_u64_block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def gauss_block(self, n: int) -> np.ndarray:
        u = self.uniform_block(12 * n).reshape(n, 12)
        acc = u[:, 0].copy()
        for k in range(1, 12):
            acc += u[:, k]
        return acc - 6.0

    def gauss_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.gauss_block(rows * cols).reshape(rows, cols)


def _row_norms(X: np.ndarray) -> np.ndarray:
    # index-order accumulation; np.sum would reorder
    acc = X[:, 0] * X[:, 0]
    for j in range(1, X.shape[1]):
        acc = acc + X[:, j] * X[:, j]
    return np.sqrt(acc)


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(_row_norms(v[None, :])[0])
    if norm == 0.0:
        raise ValidationError("degenerate zero-norm direction")
    return v / norm


def _sq_dist(a: np.ndarray, b: np.ndarray) -> float:
    acc = 0.0
    for j in range(a.shape[0]):
        d = a[j] - b[j]
        acc += d * d
    return acc


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    acc = 0.0
    for j in range(a.shape[0]):
        acc += a[j] * b[j]
    return acc


def standard_spec(seed: int = 7041, candidate_offset: float = 0.0) -> dict:
    """The stock 8-class, 32-dim fixture used by the acceptance suite."""
    return {
        "format": SPEC_FORMAT,
        "seed": seed,
        "dim": 32,
        "class_names": ["azalea", "breccia", "cumulus", "dorado",
                        "eldora", "fjord", "garnet", "harbor"],
        "mean_radius": 1.2,
        "min_mean_separation": 0.9,
        "id_sigma": 0.4,
        "counts": {"train": 200, "val": 200, "test": 100},
        "near_ood": {"offset_sigmas": 3.0, "per_class": 50, "sigma": 0.1},
        "far_ood": {"offset_sigmas": 7.0, "per_class": 50, "sigma": 0.1},
        "candidates_near": {"per_class": 25, "radius_sigmas": [3.0, 5.0],
                            "axis_weight": 1.0, "spread": 0.05},
        "candidates_far": {"per_class": 150, "radius_sigmas": [6.0, 8.0],
                           "axis_weight": 0.0, "spread": 1.0,
                           "min_sep_sigmas": 6.0},
        "candidate_offset": candidate_offset,
    }


def _check_spec(spec: dict) -> None:
    required = (
        "format", "seed", "dim", "class_names", "mean_radius",
        "min_mean_separation", "id_sigma", "counts", "near_ood", "far_ood",
        "candidates_near", "candidates_far", "candidate_offset",
    )
    for key in required:
        if key not in spec:
            raise ValidationError(f"fixture spec missing key {key!r}")
    if spec["format"] != SPEC_FORMAT:
        raise ValidationError(f"unknown fixture spec format {spec['format']!r}")
    if len(spec["class_names"]) < 2:
        raise ValidationError("fixture spec needs at least 2 classes")
    if spec["dim"] < 1:
        raise ValidationError("fixture spec needs dim >= 1")
    for part in ("train", "val", "test"):
        if spec["counts"][part] < 1:
            raise ValidationError(f"counts.{part} must be >= 1")
    if spec["id_sigma"] <= 0:
        raise ValidationError("id_sigma must be > 0")


def _draw_means(rng: PortableRng, spec: dict) -> np.ndarray:
    C = len(spec["class_names"])
    dim = spec["dim"]
    radius = float(spec["mean_radius"])
    min_sep2 = float(spec["min_mean_separation"]) * float(spec["min_mean_separation"])
    means = np.empty((C, dim))
    placed = 0
    attempts = 0
    while placed < C:
        attempts += 1
        if attempts > 10000:
            raise ValidationError("cannot place class means at the requested separation")
        cand = _unit(rng.gauss_block(dim)) * radius
        ok = True
        for p in range(placed):
            if _sq_dist(cand, means[p]) < min_sep2:
                ok = False
                break
        if ok:
            means[placed] = cand
            placed += 1
    return means


def generate_fixture(spec: dict) -> dict[str, EmbeddingSet]:
    """All seven embedding sets of the fixture, keyed by file stem."""
    _check_spec(spec)
    rng = PortableRng(int(spec["seed"]))
    C = len(spec["class_names"])
    dim = int(spec["dim"])
    sigma = float(spec["id_sigma"])

    means = _draw_means(rng, spec)
    offset_dir = _unit(rng.gauss_block(dim))

    # Per-class OoD axes, orthogonal to the span of the class means. A
    # discriminative head keeps its weights inside that span, so clusters
    # offset along these axes score like ID until an outlier stream
    # teaches the head otherwise. The axes must differ per class: one
    # shared axis would force each pair of logits to equalize at eight
    # inconsistent positions at once, which a linear head cannot do.
    basis: list[np.ndarray] = []
    for c in range(C):
        v = means[c].copy()
        for q in basis:
            v = v - _dot(q, v) * q
        norm = float(_row_norms(v[None, :])[0])
        if norm > 1e-9:
            basis.append(v / norm)
    u_axis = np.empty((C, dim))
    for c in range(C):
        v = rng.gauss_block(dim)
        for q in basis:
            v = v - _dot(q, v) * q
        u_axis[c] = _unit(v)

    out: dict[str, EmbeddingSet] = {}

    def id_set(count: int) -> EmbeddingSet:
        rows = np.empty((C * count, dim))
        labels = np.empty(C * count, dtype=np.uint32)
        for c in range(C):
            g = rng.gauss_matrix(count, dim)
            rows[c * count : (c + 1) * count] = means[c][None, :] + sigma * g
            labels[c * count : (c + 1) * count] = c
        return EmbeddingSet(data=rows.astype(np.float32), labels=labels)

    out["id_train"] = id_set(int(spec["counts"]["train"]))
    out["id_val"] = id_set(int(spec["counts"]["val"]))
    out["id_test"] = id_set(int(spec["counts"]["test"]))

    def clears_other_means(point: np.ndarray, c: int, limit: float) -> bool:
        for j in range(C):
            if j != c and _sq_dist(point, means[j]) < limit * limit:
                return False
        return True

    def ood_set(part: dict, along_axis: bool) -> EmbeddingSet:
        per = int(part["per_class"])
        off = float(part["offset_sigmas"]) * sigma
        part_sigma = float(part["sigma"])
        rows = np.empty((C * per, dim))
        for c in range(C):
            if along_axis:
                center = means[c] + off * u_axis[c]
            else:
                # random direction, redrawn until the center also clears
                # the offset distance from every other class mean
                attempts = 0
                while True:
                    attempts += 1
                    if attempts > 10000:
                        raise ValidationError("cannot place a far cluster center")
                    center = means[c] + off * _unit(rng.gauss_block(dim))
                    if clears_other_means(center, c, off):
                        break
            g = rng.gauss_matrix(per, dim)
            rows[c * per : (c + 1) * per] = center[None, :] + part_sigma * g
        return EmbeddingSet(data=rows.astype(np.float32))

    out["ood_near"] = ood_set(spec["near_ood"], along_axis=True)
    out["ood_far"] = ood_set(spec["far_ood"], along_axis=False)

    def candidate_set(part: dict, tag: str) -> EmbeddingSet:
        per = int(part["per_class"])
        rmin = float(part["radius_sigmas"][0])
        rmax = float(part["radius_sigmas"][1])
        axis_weight = float(part["axis_weight"])
        spread = float(part["spread"])
        min_sep = float(part.get("min_sep_sigmas", 0.0)) * sigma
        off = float(spec["candidate_offset"])
        rows = np.empty((C * per, dim))
        meta = []
        for c in range(C):
            if min_sep > 0.0:
                # per-row rejection: keep only points clearing min_sep of
                # every other class mean (one direction + one radius per
                # attempt)
                for i in range(per):
                    attempts = 0
                    while True:
                        attempts += 1
                        if attempts > 10000:
                            raise ValidationError("cannot place a far candidate")
                        d = _unit(axis_weight * u_axis[c] + spread * rng.gauss_block(dim))
                        r = (rmin + (rmax - rmin) * float(rng.uniform_block(1)[0])) * sigma
                        point = (means[c] + r * d) + off * offset_dir
                        if clears_other_means(point, c, min_sep):
                            break
                    rows[c * per + i] = point
            else:
                # block draws: direction = unit(axis_weight * ood_axis +
                # spread * gauss), all directions first, then all radii
                raw = (axis_weight * u_axis[c])[None, :] + spread * rng.gauss_matrix(per, dim)
                norms = _row_norms(raw)
                if float(norms.min()) == 0.0:
                    raise ValidationError("degenerate zero-norm direction")
                dirs = raw / norms[:, None]
                radii = (rmin + (rmax - rmin) * rng.uniform_block(per)) * sigma
                block = (means[c][None, :] + radii[:, None] * dirs) + off * offset_dir[None, :]
                rows[c * per : (c + 1) * per] = block
            for i in range(per):
                meta.append({"text": f"pattern-{c}-{i}", "source": tag})
        return EmbeddingSet(data=rows.astype(np.float32), meta=tuple(meta))

    out["outlier_candidates"] = candidate_set(spec["candidates_near"], "near-candidate")
    out["outlier_candidates_far"] = candidate_set(spec["candidates_far"], "far-candidate")
    return out


def write_fixture(spec: dict, outdir) -> list[Path]:
    """Generate and persist the fixture; returns the EMB1 paths written."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sets = generate_fixture(spec)
    paths = []
    for stem in FILES:
        path = outdir / f"{stem}.emb"
        save(sets[stem], path)
        paths.append(path)
    (outdir / "classes.txt").write_text(
        "\n".join(spec["class_names"]) + "\n", encoding="utf-8"
    )
    return paths


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) == 3 and argv[0] == "--emit-spec":
        # --emit-spec SEED PATH: write the standard generator spec as JSON
        spec = standard_spec(seed=int(argv[1]))
        Path(argv[2]).write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8")
        return 0
    if len(argv) != 2:
        print("usage: python -m oe_forge.fixture SPEC_JSON OUT_DIR\n"
              "       python -m oe_forge.fixture --emit-spec SEED SPEC_JSON",
              file=sys.stderr)
        return 2
    spec = json.loads(Path(argv[0]).read_text(encoding="utf-8"))
    write_fixture(spec, argv[1])
    return 0


if __name__ == "__main__":
    sys.exit(main())
