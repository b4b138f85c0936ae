"""Turn candidate embeddings into training-ready outlier sets.

Filters never fabricate rows (synthesis is the one exception); each
operation appends a trail step recording its parameters and the row
counts, so a finished OutlierSet documents how it was produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import embedstore, gaussian_stats
from .embedstore import EmbeddingSet, LabelSpace
from .errors import ParameterError, ShapeError, ValidationError, WindowUnderflowError
from .gaussian_stats import ClassStats

PROVENANCES = ("word", "description", "caption", "virtual", "auxiliary")


@dataclass(frozen=True)
class FilterConfig:
    """Knobs for the candidate filters.

    Defaults: similarity-rank window starting at 30 with width 25, keep
    fraction 0.15 for the Mahalanobis filter (most-distant first), and
    per-coordinate noise variance 0.016.
    """

    k: int = 30
    delta: int = 25
    p: float = 0.15
    direction: str = "farthest"
    noise_variance: float = 0.016

    def __post_init__(self):
        if self.k < 0:
            raise ParameterError(f"k must be >= 0, got {self.k}")
        if self.delta < 1:
            raise ParameterError(f"delta must be >= 1, got {self.delta}")
        if not 0.0 < self.p <= 1.0:
            raise ParameterError(f"p must be in (0, 1], got {self.p}")
        if self.direction not in ("farthest", "nearest"):
            raise ParameterError(f"unknown direction {self.direction!r}")
        if self.noise_variance < 0.0:
            raise ParameterError(f"noise variance must be >= 0, got {self.noise_variance}")


@dataclass(frozen=True)
class TrailStep:
    op: str
    params: dict
    rows_in: int
    rows_out: int


@dataclass(frozen=True)
class OutlierSet:
    """An embedding set tagged with provenance and its filter trail."""

    embeddings: EmbeddingSet
    provenance: str
    trail: tuple[TrailStep, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        trail = tuple(self.trail)
        for prev, nxt in zip(trail, trail[1:]):
            if prev.rows_out != nxt.rows_in:
                raise ValidationError(
                    f"trail broken: {prev.op} ends at {prev.rows_out} rows,"
                    f" {nxt.op} starts at {nxt.rows_in}"
                )
        if trail and trail[-1].rows_out != self.embeddings.count:
            raise ValidationError(
                f"trail ends at {trail[-1].rows_out} rows,"
                f" set has {self.embeddings.count}"
            )
        object.__setattr__(self, "trail", trail)

    @property
    def count(self) -> int:
        return self.embeddings.count

    def trail_json(self) -> list[dict]:
        return [
            {"op": s.op, "params": s.params, "rows_in": s.rows_in, "rows_out": s.rows_out}
            for s in self.trail
        ]


def _as_candidates(obj, default_provenance: str) -> tuple[EmbeddingSet, str, tuple]:
    if isinstance(obj, OutlierSet):
        return obj.embeddings, obj.provenance, obj.trail
    return obj, default_provenance, ()


def ceil_fraction(p: float, n: int) -> int:
    """ceil(p * n) guarded against float noise (0.15 * 100 is not 15.0)."""
    return int(math.ceil(round(p * n, 9)))


# ----------------------------------------------------------------- filters

def rank_window_filter(candidates, id_images: EmbeddingSet, cfg: FilterConfig,
                       provenance: str = "word") -> OutlierSet:
    """Keep candidates whose cosine-similarity rank to a class mean falls
    in [k, k+delta), unioned over classes.

    Per class, candidates are ranked by descending cosine similarity to
    the mean image embedding of that class (ties broken by lower row
    index). The union keeps first occurrence in (class, rank) order. The
    window is truncated when fewer than k+delta candidates exist; an
    empty window (count <= k) raises.
    """
    cands, provenance, trail = _as_candidates(candidates, provenance)
    if cands.meta is None:
        raise ValidationError("rank window needs candidates with text metadata")
    cands.texts()
    if id_images.labels is None:
        raise ValidationError("rank window needs labeled id images")
    if cands.dim != id_images.dim:
        raise ShapeError(f"candidate dim {cands.dim} vs image dim {id_images.dim}")
    n = cands.count
    if n <= cfg.k:
        raise WindowUnderflowError(
            f"window starts at rank {cfg.k} but only {n} candidates are available"
        )

    X = embedstore.as_matrix(cands, normalize=False)
    Xn = X / np.linalg.norm(X, axis=1, keepdims=True)
    img = embedstore.as_matrix(id_images, normalize=False)
    labels = id_images.labels.astype(np.int64)
    C = int(labels.max()) + 1

    selected: list[int] = []
    seen = np.zeros(n, dtype=bool)
    for c in range(C):
        mean = img[labels == c].mean(axis=0)
        mnorm = np.linalg.norm(mean)
        sims = Xn @ (mean / mnorm) if mnorm > 0 else np.zeros(n)
        # stable sort on (-sim, index): ties go to the lower row index
        order = np.lexsort((np.arange(n), -sims))
        for r in range(cfg.k, min(cfg.k + cfg.delta, n)):
            idx = int(order[r])
            if not seen[idx]:
                seen[idx] = True
                selected.append(idx)

    out = cands.take(selected)
    step = TrailStep(
        op="rank_window_filter",
        params={"k": cfg.k, "delta": cfg.delta, "classes": C},
        rows_in=n,
        rows_out=out.count,
    )
    return OutlierSet(embeddings=out, provenance=provenance, trail=trail + (step,))


def exclude_labels(candidates, label_space: LabelSpace,
                   provenance: str = "description") -> OutlierSet:
    """Drop candidates whose text contains any class name.

    Matching is a case-folded substring test on whitespace-trimmed text,
    so "a photo of Dog" falls to the class name "dog".
    """
    cands, provenance, trail = _as_candidates(candidates, provenance)
    texts = cands.texts()
    names = [name.strip().casefold() for name in label_space.class_names]
    keep = [
        i for i, text in enumerate(texts)
        if not any(name in text.strip().casefold() for name in names)
    ]
    out = cands.take(keep)
    step = TrailStep(
        op="exclude_labels",
        params={"classes": list(label_space.class_names)},
        rows_in=cands.count,
        rows_out=out.count,
    )
    return OutlierSet(embeddings=out, provenance=provenance, trail=trail + (step,))


def mahalanobis_filter(candidates, stats: ClassStats, cfg: FilterConfig,
                       provenance: str = "caption") -> OutlierSet:
    """Keep the ceil(p * n) candidates ranked by Mahalanobis confidence.

    direction "farthest" keeps the lowest-confidence rows (largest
    distance to every class mean); "nearest" keeps the highest. Output
    rows come in rank order, ties broken by lower row index.
    """
    cands, provenance, trail = _as_candidates(candidates, provenance)
    if cands.count < 1:
        raise ValidationError("mahalanobis filter needs at least one candidate")
    if cands.dim != stats.dim:
        raise ShapeError(f"candidate dim {cands.dim} vs stats dim {stats.dim}")
    scores = gaussian_stats.mahalanobis_scores(stats, cands.data)
    n = cands.count
    m = ceil_fraction(cfg.p, n)
    key = scores if cfg.direction == "farthest" else -scores
    order = np.lexsort((np.arange(n), key))
    kept = order[:m]
    cut = float(scores[kept[-1]])

    out = cands.take(kept)
    step = TrailStep(
        op="mahalanobis_filter",
        params={"p": cfg.p, "direction": cfg.direction, "cut_score": cut},
        rows_in=n,
        rows_out=out.count,
    )
    return OutlierSet(embeddings=out, provenance=provenance, trail=trail + (step,))


# ---------------------------------------------------------------- synthesis

def synthesize_virtual_outliers(stats: ClassStats, samples_per_class: int,
                                keep_per_class: int, seed: int) -> OutlierSet:
    """Per class, draw t Gaussian samples and keep the m least likely.

    Sampling is mean + L z with z standard normal through the stored
    factor, so draws follow the regularized covariance exactly. Kept rows
    stay in draw order; everything is deterministic given the seed.
    """
    t, m = samples_per_class, keep_per_class
    if t < 1:
        raise ParameterError(f"samples_per_class must be >= 1, got {t}")
    if m > t:
        raise ParameterError(f"keep_per_class {m} exceeds samples_per_class {t}")
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = []
    for c in range(stats.C):
        z = rng.standard_normal((t, stats.dim))
        samples = stats.means[c] + z @ stats.factor.T
        dens = gaussian_stats.class_log_densities(stats, samples, c)
        order = np.lexsort((np.arange(t), dens))
        kept = np.sort(order[:m])
        rows.append(samples[kept])
    data = np.vstack(rows).astype(np.float32)
    step = TrailStep(
        op="synthesize_virtual_outliers",
        params={"samples_per_class": t, "keep_per_class": m, "seed": int(seed)},
        rows_in=0,
        rows_out=data.shape[0],
    )
    return OutlierSet(
        embeddings=EmbeddingSet(data=data), provenance="virtual", trail=(step,)
    )


def inject_noise(es: EmbeddingSet, variance: float, seed: int) -> EmbeddingSet:
    """Add independent zero-mean Gaussian noise per coordinate.

    Variance 0 returns the rows bit-for-bit unchanged.
    """
    if variance < 0.0:
        raise ParameterError(f"variance must be >= 0, got {variance}")
    if variance == 0.0:
        return es
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.standard_normal(es.data.shape) * math.sqrt(variance)
    data = (es.data.astype(np.float64) + noise).astype(np.float32)
    return EmbeddingSet(data=data, labels=es.labels, meta=es.meta)

