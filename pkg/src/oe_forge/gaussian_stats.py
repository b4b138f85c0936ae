"""Class-conditional Gaussian statistics over an embedding set.

Fits per-class means with a single covariance pooled over all classes
(population normalization, divide by N), and evaluates the resulting
Mahalanobis confidence and Gaussian log-densities. Solves go through a
lower-triangular Cholesky factor of the (possibly shrunk) covariance;
an explicit inverse is never formed outside the test oracles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import embedstore
from ._kernels import mahalanobis_quadforms
from .embedstore import EmbeddingSet, LabelSpace
from .errors import MissingClassError, ShapeError, ValidationError

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ClassStats:
    """Per-class means, pooled covariance, and its regularized factor.

    ``shrinkage`` is the multiple of the identity that was actually added
    to make the factorization succeed (0.0 when none was needed).
    ``normalized`` records whether rows were unit-normalized before
    fitting, so queries get the same treatment.
    """

    means: np.ndarray
    covariance: np.ndarray
    factor: np.ndarray
    shrinkage: float
    per_class_counts: np.ndarray
    total_count: int
    normalized: bool = False

    def __post_init__(self):
        for name in ("means", "covariance", "factor", "per_class_counts"):
            arr = np.asarray(getattr(self, name))
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.means.ndim != 2:
            raise ValidationError("means must be C x dim")
        if self.covariance.shape != (self.dim, self.dim):
            raise ShapeError(
                f"covariance shape {self.covariance.shape} does not match dim {self.dim}"
            )
        if int(self.per_class_counts.sum()) != self.total_count:
            raise ValidationError("per-class counts do not sum to the total")
        if self.per_class_counts.size and int(self.per_class_counts.min()) < 1:
            raise ValidationError("every class needs at least one row")

    @property
    def C(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def log_det(self) -> float:
        """log determinant of the regularized covariance."""
        return float(2.0 * np.sum(np.log(np.diag(self.factor))))


def _shrink_and_factor(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky of cov, adding alpha*I (doubling alpha) until it succeeds."""
    try:
        return np.linalg.cholesky(cov), 0.0
    except np.linalg.LinAlgError:
        pass
    dim = cov.shape[0]
    alpha = 1e-6 * float(np.trace(cov)) / dim
    if alpha <= 0.0:
        # zero-trace covariance: the relative rule yields nothing to double
        alpha = 1e-12
    eye = np.eye(dim)
    while True:
        try:
            return np.linalg.cholesky(cov + alpha * eye), alpha
        except np.linalg.LinAlgError:
            alpha *= 2.0


def from_moments(
    means, covariance, per_class_counts, normalized: bool = False
) -> ClassStats:
    """Build stats from precomputed moments, applying the shrinkage policy."""
    means = np.asarray(means, dtype=np.float64)
    cov = np.asarray(covariance, dtype=np.float64)
    counts = np.asarray(per_class_counts, dtype=np.int64)
    if cov.shape != (means.shape[1], means.shape[1]):
        raise ShapeError(f"covariance shape {cov.shape} vs dim {means.shape[1]}")
    denom = max(float(np.abs(cov).max()), 1.0)
    if np.abs(cov - cov.T).max() > 1e-9 * denom:
        raise ValidationError("covariance is not symmetric")
    cov = 0.5 * (cov + cov.T)
    factor, alpha = _shrink_and_factor(cov)
    return ClassStats(
        means=means,
        covariance=cov,
        factor=factor,
        shrinkage=alpha,
        per_class_counts=counts,
        total_count=int(counts.sum()),
        normalized=normalized,
    )


def fit(es: EmbeddingSet, label_space: LabelSpace, normalize: bool = True) -> ClassStats:
    """Fit per-class means and the pooled population covariance.

    Every class in ``label_space`` must own at least one row. With
    ``normalize`` (the default) rows are unit-normalized first, matching
    how joint-embedding vectors are conventionally compared.
    """
    if es.labels is None:
        raise ValidationError("fit needs a labeled set")
    C = label_space.C
    if es.labels.size and int(es.labels.max()) >= C:
        raise ValidationError(
            f"label {int(es.labels.max())} out of range for {C} classes"
        )
    X = embedstore.as_matrix(es, normalize=normalize)
    n, dim = X.shape
    labels = es.labels.astype(np.int64)

    means = np.empty((C, dim))
    counts = np.empty(C, dtype=np.int64)
    for c in range(C):
        mask = labels == c
        counts[c] = int(mask.sum())
        if counts[c] == 0:
            raise MissingClassError(
                f"class {c} ({label_space.class_names[c]}) has no rows"
            )
        means[c] = X[mask].mean(axis=0)

    cov = np.zeros((dim, dim))
    for c in range(C):
        D = X[labels == c] - means[c]
        cov += D.T @ D
    cov /= n
    cov = 0.5 * (cov + cov.T)

    factor, alpha = _shrink_and_factor(cov)
    return ClassStats(
        means=means,
        covariance=cov,
        factor=factor,
        shrinkage=alpha,
        per_class_counts=counts,
        total_count=n,
        normalized=normalize,
    )


def _prep_queries(stats: ClassStats, X: np.ndarray) -> np.ndarray:
    if X.ndim != 2 or X.shape[1] != stats.dim:
        raise ShapeError(f"query shape {X.shape} does not match dim {stats.dim}")
    X = X.astype(np.float64, copy=not stats.normalized)
    if stats.normalized:
        norms = np.linalg.norm(X, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ValidationError(f"cannot normalize all-zero query row {int(zero[0])}")
        X = X / norms[:, None]
    return X


def mahalanobis_scores(stats: ClassStats, queries) -> np.ndarray:
    """Confidence max_c of minus the quadratic form, one value per row (<= 0)."""
    X = _prep_queries(stats, np.atleast_2d(np.asarray(queries, dtype=np.float64)))
    quad = mahalanobis_quadforms(X, stats.means, stats.factor)
    return -quad.min(axis=1)


def mahalanobis_score(stats: ClassStats, s) -> float:
    """Single-vector form of :func:`mahalanobis_scores`."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {s.shape}")
    return float(mahalanobis_scores(stats, s[None, :])[0])


def class_log_densities(stats: ClassStats, queries, c: int) -> np.ndarray:
    """Gaussian log-density under class c's mean and the shared covariance."""
    if not 0 <= c < stats.C:
        raise ValidationError(f"class index {c} out of range for C={stats.C}")
    X = _prep_queries(stats, np.atleast_2d(np.asarray(queries, dtype=np.float64)))
    quad = mahalanobis_quadforms(X, stats.means[c : c + 1], stats.factor)[:, 0]
    return -0.5 * quad - 0.5 * stats.log_det - 0.5 * stats.dim * _LOG_2PI


def class_log_density(stats: ClassStats, s, c: int) -> float:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {s.shape}")
    return float(class_log_densities(stats, s[None, :], c)[0])


# ----------------------------------------------------------- persistence

def save_stats(stats: ClassStats, path) -> None:
    """Means as EMB1 rows plus a JSON sidecar with the remaining fields."""
    path = Path(path)
    embedstore.save(EmbeddingSet(data=stats.means.astype(np.float32)), path)
    sidecar = {
        "covariance": stats.covariance.tolist(),
        "shrinkage": stats.shrinkage,
        "per_class_counts": stats.per_class_counts.tolist(),
        "total_count": stats.total_count,
        "normalized": stats.normalized,
    }
    Path(str(path) + ".stats.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_stats(path) -> ClassStats:
    """Inverse of :func:`save_stats`; refactorizes with the stored shrinkage."""
    path = Path(path)
    means = embedstore.load(path).data.astype(np.float64)
    raw = json.loads(Path(str(path) + ".stats.json").read_text(encoding="utf-8"))
    cov = np.asarray(raw["covariance"], dtype=np.float64)
    alpha = float(raw["shrinkage"])
    reg = cov + alpha * np.eye(cov.shape[0]) if alpha > 0.0 else cov
    factor = np.linalg.cholesky(reg)
    return ClassStats(
        means=means,
        covariance=cov,
        factor=factor,
        shrinkage=alpha,
        per_class_counts=np.asarray(raw["per_class_counts"], dtype=np.int64),
        total_count=int(raw["total_count"]),
        normalized=bool(raw["normalized"]),
    )
