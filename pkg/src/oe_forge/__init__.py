"""Embedding-space outlier exposure toolkit.

Filters candidate outlier embeddings, trains a linear head with a
uniformity penalty on the outlier stream, scores with energy or max
softmax probability, and evaluates FPR at 95% TPR, AUROC, and ID
accuracy. All data moves through the EMB1 binary format defined in
:mod:`oe_forge.embedstore`.
"""

from .embedstore import EmbeddingSet, LabelSpace, l2_normalize, load, save
from .gaussian_stats import ClassStats, fit, mahalanobis_score, class_log_density
from .pipeline import (
    FilterConfig,
    OutlierSet,
    exclude_labels,
    inject_noise,
    mahalanobis_filter,
    rank_window_filter,
    synthesize_virtual_outliers,
)
from .scoring import (
    DetectionReport,
    ScoreSeries,
    auroc,
    detect,
    energy_score,
    fpr_at_tpr,
    msp_score,
    threshold_at_tpr,
)
from .trainer import LinearHead, TrainConfig, TrainRecord, accuracy, oe_loss, total_loss, train

__version__ = "0.1.0"

__all__ = [
    "EmbeddingSet", "LabelSpace", "load", "save", "l2_normalize",
    "ClassStats", "fit", "mahalanobis_score", "class_log_density",
    "FilterConfig", "OutlierSet", "rank_window_filter", "exclude_labels",
    "mahalanobis_filter", "synthesize_virtual_outliers", "inject_noise",
    "LinearHead", "TrainConfig", "TrainRecord", "train", "accuracy",
    "oe_loss", "total_loss",
    "ScoreSeries", "DetectionReport", "energy_score", "msp_score",
    "threshold_at_tpr", "fpr_at_tpr", "auroc", "detect",
    "__version__",
]
