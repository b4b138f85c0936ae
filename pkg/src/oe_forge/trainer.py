"""Train the linear classification head on frozen embeddings.

The objective is mean cross-entropy on labeled ID batches plus a weighted
uniformity penalty on outlier batches: the penalty for one logit vector z
is logsumexp(z) - mean(z), the cross-entropy between the uniform
distribution and softmax(z) minus the constant log C . It bottoms out at
log C exactly when all logits are equal.

Optimization is plain Adam over shuffled minibatches, one ID batch and one
outlier batch per step, with the outlier stream cycling (reshuffled at
each wraparound) and fresh Gaussian noise injected into every outlier
batch. The per-epoch inner loop lives in ``_kernels`` (numba or numpy);
the vectorized functions here are the reference the kernels are tested
against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import embedstore
from ._kernels import train_epoch
from .embedstore import EmbeddingSet
from .errors import DivergenceError, ParameterError, ShapeError, ValidationError
from .pipeline import OutlierSet


@dataclass
class LinearHead:
    """C x dim weight matrix plus per-class bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} disagree"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValidationError("head parameters must be finite")

    @property
    def C(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights.T + self.bias

    def copy(self) -> "LinearHead":
        return LinearHead(self.weights.copy(), self.bias.copy())


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; oe_weight is the outlier-term multiplier."""

    oe_weight: float = 0.5
    epochs: int = 300
    batch_id: int = 32
    batch_oe: int = 32
    lr: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    noise_variance: float = 0.016
    shuffle: bool = True
    normalize: bool = True

    def __post_init__(self):
        if self.oe_weight < 0:
            raise ParameterError("oe_weight must be >= 0")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.batch_id < 1 or self.batch_oe < 1:
            raise ParameterError("batch sizes must be >= 1")
        if self.lr <= 0:
            raise ParameterError("lr must be > 0")
        if self.noise_variance < 0:
            raise ParameterError("noise_variance must be >= 0")


@dataclass(frozen=True)
class TrainRecord:
    """Per-epoch mean losses and validation accuracy, plus the pick."""

    ce_loss: tuple[float, ...]
    oe_loss: tuple[float, ...]
    val_acc: tuple[float, ...]
    best_epoch: int

    def to_csv_text(self) -> str:
        lines = ["epoch,ce_loss,oe_loss,val_acc"]
        for e, (ce, oe, va) in enumerate(zip(self.ce_loss, self.oe_loss, self.val_acc)):
            lines.append(f"{e},{ce!r},{oe!r},{va!r}")
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "ce_loss": list(self.ce_loss),
            "oe_loss": list(self.oe_loss),
            "val_acc": list(self.val_acc),
            "best_epoch": self.best_epoch,
        }


# ------------------------------------------------------------ loss pieces

def oe_loss(logits) -> float:
    """Uniformity penalty for one logit vector: logsumexp(z) - mean(z).

    Always >= log C, with equality exactly at constant logits, and
    invariant to adding a constant to every logit.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ShapeError(f"expected a logit vector, got shape {z.shape}")
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()) - z.mean())


def _batch_ce(Z: np.ndarray, y: np.ndarray) -> float:
    m = Z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(Z - m).sum(axis=1))
    return float(np.mean(lse - Z[np.arange(Z.shape[0]), y]))


def _batch_oe(Z: np.ndarray) -> float:
    m = Z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(Z - m).sum(axis=1))
    return float(np.mean(lse - Z.mean(axis=1)))


def total_loss(head: LinearHead, id_batch, oe_batch, oe_weight: float) -> float:
    """Mean ID cross-entropy plus oe_weight times the mean uniformity penalty.

    ``id_batch`` is (X, y); ``oe_batch`` is a matrix or None. An empty
    outlier batch contributes zero.
    """
    X, y = id_batch
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    loss = _batch_ce(head.logits(X), y)
    if oe_batch is not None:
        Xo = np.asarray(oe_batch, dtype=np.float64)
        if Xo.shape[0] > 0:
            loss += oe_weight * _batch_oe(head.logits(Xo))
    return loss


def total_loss_grad(head: LinearHead, id_batch, oe_batch, oe_weight: float):
    """(loss, grad_weights, grad_bias) with exact analytic gradients."""
    X, y = id_batch
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    B = X.shape[0]
    Z = head.logits(X)
    m = Z.max(axis=1, keepdims=True)
    E = np.exp(Z - m)
    S = E.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(S[:, 0])
    rows = np.arange(B)
    loss = float(np.mean(lse - Z[rows, y]))
    G = E / S
    G[rows, y] -= 1.0
    G /= B
    gW = G.T @ X
    gb = G.sum(axis=0)

    if oe_batch is not None:
        Xo = np.asarray(oe_batch, dtype=np.float64)
        if Xo.shape[0] > 0:
            Bo = Xo.shape[0]
            Zo = head.logits(Xo)
            mo = Zo.max(axis=1, keepdims=True)
            Eo = np.exp(Zo - mo)
            So = Eo.sum(axis=1, keepdims=True)
            lseo = mo[:, 0] + np.log(So[:, 0])
            loss += oe_weight * float(np.mean(lseo - Zo.mean(axis=1)))
            Go = (Eo / So - 1.0 / head.C) * (oe_weight / Bo)
            gW += Go.T @ Xo
            gb += Go.sum(axis=0)
    return loss, gW, gb


# --------------------------------------------------------------- training

def init_head(C: int, dim: int, seed: int) -> LinearHead:
    """Small seeded Gaussian weights (std 0.01), zero bias."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return LinearHead(weights=rng.standard_normal((C, dim)) * 0.01,
                      bias=np.zeros(C))


def accuracy(head: LinearHead, es: EmbeddingSet, normalize: bool = False) -> float:
    """Fraction of rows whose argmax logit hits the label (ties -> lowest class)."""
    if es.labels is None:
        raise ValidationError("accuracy needs a labeled set")
    if es.count == 0:
        raise ValidationError("accuracy needs a nonempty set")
    X = embedstore.as_matrix(es, normalize=normalize)
    pred = np.argmax(head.logits(X), axis=1)
    return float(np.mean(pred == es.labels.astype(np.int64)))


def _outlier_matrix(outliers, dim: int) -> np.ndarray:
    if outliers is None:
        return np.empty((0, dim))
    es = outliers.embeddings if isinstance(outliers, OutlierSet) else outliers
    if es.count == 0:
        return np.empty((0, dim))
    if es.dim != dim:
        raise ShapeError(f"outlier dim {es.dim} does not match id dim {dim}")
    return es.data.astype(np.float64)


def train(head_init: LinearHead, id_train: EmbeddingSet, id_val: EmbeddingSet,
          outliers, cfg: TrainConfig) -> tuple[LinearHead, TrainRecord]:
    """Run the epochs and return the best-validation-accuracy snapshot.

    Checkpoint picking is highest validation accuracy, earliest epoch on
    ties. Deterministic for a fixed cfg.seed; raises DivergenceError on
    the first non-finite loss.
    """
    if id_train.labels is None or id_val.labels is None:
        raise ValidationError("training needs labeled id_train and id_val")
    if id_train.count == 0 or id_val.count == 0:
        raise ValidationError("id_train and id_val must be nonempty")
    if id_train.dim != id_val.dim:
        raise ShapeError(f"id_train dim {id_train.dim} vs id_val dim {id_val.dim}")
    if head_init.dim != id_train.dim:
        raise ShapeError(f"head dim {head_init.dim} vs data dim {id_train.dim}")

    X = embedstore.as_matrix(id_train, normalize=cfg.normalize)
    y = id_train.labels.astype(np.int64)
    X_oe_all = _outlier_matrix(outliers, id_train.dim)
    n_id = X.shape[0]
    n_oe = X_oe_all.shape[0]
    steps = (n_id + cfg.batch_id - 1) // cfg.batch_id

    ss_shuffle, ss_oe, ss_noise = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_shuffle = np.random.Generator(np.random.PCG64(ss_shuffle))
    rng_oe = np.random.Generator(np.random.PCG64(ss_oe))
    rng_noise = np.random.Generator(np.random.PCG64(ss_noise))

    head = head_init.copy()
    W, b = head.weights, head.bias
    mW = np.zeros_like(W)
    vW = np.zeros_like(W)
    mb = np.zeros_like(b)
    vb = np.zeros_like(b)
    beta1, beta2 = cfg.adam_betas

    oe_perm = rng_oe.permutation(n_oe) if (cfg.shuffle and n_oe) else np.arange(n_oe)
    oe_cursor = 0
    sigma = float(np.sqrt(cfg.noise_variance))

    ce_hist: list[float] = []
    oe_hist: list[float] = []
    va_hist: list[float] = []
    best_epoch = -1
    best_acc = -1.0
    best_W = W.copy()
    best_b = b.copy()
    step0 = 0

    for epoch in range(cfg.epochs):
        order = rng_shuffle.permutation(n_id) if cfg.shuffle else np.arange(n_id)
        if n_oe:
            need = steps * cfg.batch_oe
            idx = np.empty(need, dtype=np.int64)
            pos = 0
            while pos < need:
                take = min(need - pos, n_oe - oe_cursor)
                idx[pos : pos + take] = oe_perm[oe_cursor : oe_cursor + take]
                pos += take
                oe_cursor += take
                if oe_cursor == n_oe:
                    oe_perm = (rng_oe.permutation(n_oe) if cfg.shuffle
                               else np.arange(n_oe))
                    oe_cursor = 0
            X_oe = X_oe_all[idx]
            if sigma > 0.0:
                X_oe = X_oe + rng_noise.standard_normal(X_oe.shape) * sigma
        else:
            X_oe = np.empty((0, id_train.dim))

        ce_sum, oe_sum, done, bad = train_epoch(
            W, b, mW, vW, mb, vb, step0, X, y, order, X_oe,
            cfg.oe_weight, cfg.lr, beta1, beta2, cfg.adam_eps,
            cfg.batch_id, cfg.batch_oe,
        )
        if bad >= 0:
            raise DivergenceError(epoch, int(bad))
        step0 += int(done)

        ce_hist.append(ce_sum / n_id)
        oe_hist.append(oe_sum / (steps * cfg.batch_oe) if n_oe else 0.0)
        va = accuracy(head, id_val, normalize=cfg.normalize)
        va_hist.append(va)
        if va > best_acc:
            best_acc = va
            best_epoch = epoch
            best_W = W.copy()
            best_b = b.copy()

    record = TrainRecord(
        ce_loss=tuple(ce_hist), oe_loss=tuple(oe_hist),
        val_acc=tuple(va_hist), best_epoch=best_epoch,
    )
    return LinearHead(weights=best_W, bias=best_b), record


# ------------------------------------------------------------ persistence

def save_head(head: LinearHead, path) -> None:
    """Weights as EMB1 rows; bias in a JSON sidecar."""
    path = Path(path)
    embedstore.save(EmbeddingSet(data=head.weights.astype(np.float32)), path)
    Path(str(path) + ".head.json").write_text(
        json.dumps({"bias": head.bias.tolist()}, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_head(path) -> LinearHead:
    path = Path(path)
    weights = embedstore.load(path).data.astype(np.float64)
    raw = json.loads(Path(str(path) + ".head.json").read_text(encoding="utf-8"))
    return LinearHead(weights=weights, bias=np.asarray(raw["bias"], dtype=np.float64))
