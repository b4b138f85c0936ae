"""Score embeddings, threshold ID/OoD decisions, and compute metrics.

The detector keeps a sample when its score clears the threshold
(inclusive at the boundary). The threshold for a target true-positive
rate is always an attained ID score, so false-positive rates reproduce
without interpolation. AUROC uses the rank-statistic formulation
(probability a random ID score beats a random OoD score, ties half).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import embedstore
from .embedstore import EmbeddingSet
from .errors import ParameterError, ValidationError
from .trainer import LinearHead

SCORE_KINDS = ("energy", "msp")


@dataclass(frozen=True)
class ScoreSeries:
    scores: np.ndarray
    origin: str = "id"
    score_kind: str = "energy"

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1:
            raise ValidationError(f"scores must be a vector, got shape {scores.shape}")
        if not np.isfinite(scores).all():
            raise ValidationError("scores must be finite")
        if self.origin not in ("id", "ood"):
            raise ValidationError(f"unknown origin {self.origin!r}")
        if self.score_kind not in SCORE_KINDS:
            raise ValidationError(f"unknown score kind {self.score_kind!r}")
        scores.flags.writeable = False
        object.__setattr__(self, "scores", scores)


@dataclass(frozen=True)
class DetectionReport:
    fpr95: float
    auroc: float
    id_accuracy: float
    gamma: float
    n_id: int
    n_ood: int

    def __post_init__(self):
        for name in ("fpr95", "auroc", "id_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")
        if not math.isfinite(self.gamma):
            raise ValidationError("gamma must be finite")

    def to_json_dict(self) -> dict:
        return {
            "fpr95": self.fpr95,
            "auroc": self.auroc,
            "id_accuracy": self.id_accuracy,
            "gamma": self.gamma,
            "n_id": self.n_id,
            "n_ood": self.n_ood,
        }


def _scores_of(series) -> np.ndarray:
    if isinstance(series, ScoreSeries):
        return series.scores
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"scores must be a vector, got shape {arr.shape}")
    return arr


# ------------------------------------------------------------------ scores

def energy_scores(logits: np.ndarray, T: float = 1.0) -> np.ndarray:
    """T * logsumexp(logits / T) per row, computed max-shifted.

    With T=1 this is the negated energy, so higher means more ID-like.
    """
    if T <= 0:
        raise ParameterError(f"temperature must be > 0, got {T}")
    Z = np.atleast_2d(np.asarray(logits, dtype=np.float64)) / T
    m = Z.max(axis=1)
    return T * (m + np.log(np.exp(Z - m[:, None]).sum(axis=1)))


def energy_score(logits, T: float = 1.0) -> float:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValidationError(f"expected a logit vector, got shape {z.shape}")
    return float(energy_scores(z[None, :], T)[0])


def msp_scores(logits: np.ndarray) -> np.ndarray:
    """Max softmax probability per row, in (0, 1]."""
    Z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    E = np.exp(Z - Z.max(axis=1, keepdims=True))
    return E.max(axis=1) / E.sum(axis=1)


def msp_score(logits) -> float:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValidationError(f"expected a logit vector, got shape {z.shape}")
    return float(msp_scores(z[None, :])[0])


def score_set(head: LinearHead, es: EmbeddingSet, kind: str = "energy",
              T: float = 1.0, normalize: bool = False) -> np.ndarray:
    """Row scores of an embedding set under a trained head."""
    if kind not in SCORE_KINDS:
        raise ValidationError(f"unknown score kind {kind!r}")
    logits = head.logits(embedstore.as_matrix(es, normalize=normalize))
    return energy_scores(logits, T) if kind == "energy" else msp_scores(logits)


# ----------------------------------------------------------------- metrics

def _ceil_count(frac: float, n: int) -> int:
    return int(math.ceil(round(frac * n, 9)))


def threshold_at_tpr(id_scores, tpr: float = 0.95) -> float:
    """The ceil(tpr * n)-th largest ID score.

    At least that many ID scores are >= the returned value, so detection
    at this threshold keeps the requested fraction of ID samples.
    """
    scores = _scores_of(id_scores)
    n = scores.shape[0]
    if n == 0:
        raise ValidationError("need at least one id score")
    if not 0.0 < tpr <= 1.0:
        raise ParameterError(f"tpr must be in (0, 1], got {tpr}")
    k = _ceil_count(tpr, n)
    return float(np.partition(scores, n - k)[n - k])


def fpr_at_tpr(id_scores, ood_scores, tpr: float = 0.95) -> float:
    """Fraction of OoD scores at or above the TPR threshold."""
    gamma = threshold_at_tpr(id_scores, tpr)
    ood = _scores_of(ood_scores)
    if ood.shape[0] == 0:
        raise ValidationError("need at least one ood score")
    return float(np.count_nonzero(ood >= gamma) / ood.shape[0])


def auroc_counts(id_scores, ood_scores) -> tuple[int, int]:
    """(2 * U, 2 * n_id * n_ood) as exact integers, U the Mann-Whitney stat.

    Exposed so the tie-half symmetry 2U + 2U' == 2N can be checked without
    float rounding.
    """
    ids = _scores_of(id_scores)
    ood = _scores_of(ood_scores)
    n_id, n_ood = ids.shape[0], ood.shape[0]
    if n_id == 0 or n_ood == 0:
        raise ValidationError("need at least one score on each side")
    pooled = np.concatenate([ids, ood])
    order = np.argsort(pooled, kind="mergesort")
    sorted_vals = pooled[order]
    ranks = np.empty(pooled.shape[0], dtype=np.float64)
    i = 0
    n = pooled.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # average 1-based rank for the tie block; *2 keeps it integral
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum2 = int(round(2.0 * ranks[:n_id].sum()))
    u2 = rank_sum2 - n_id * (n_id + 1)
    return u2, 2 * n_id * n_ood


def auroc(id_scores, ood_scores) -> float:
    """P(random ID score > random OoD score), ties counted half."""
    u2, den2 = auroc_counts(id_scores, ood_scores)
    return u2 / den2


def detect(score: float, gamma: float) -> str:
    """"in" when the score clears gamma (inclusive), else "out"."""
    if not (math.isfinite(score) and math.isfinite(gamma)):
        raise ValidationError("detect needs finite inputs")
    return "in" if score >= gamma else "out"


def build_report(id_scores, ood_scores, id_accuracy: float,
                 tpr: float = 0.95) -> DetectionReport:
    ids = _scores_of(id_scores)
    ood = _scores_of(ood_scores)
    gamma = threshold_at_tpr(ids, tpr)
    return DetectionReport(
        fpr95=fpr_at_tpr(ids, ood, tpr),
        auroc=auroc(ids, ood),
        id_accuracy=id_accuracy,
        gamma=gamma,
        n_id=int(ids.shape[0]),
        n_ood=int(ood.shape[0]),
    )
