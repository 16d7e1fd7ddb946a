"""Evaluation metrics for compositional (soft) classifier labels.

All operations take a pair of (n, k) arrays: target label vectors and
predicted label vectors, each row a probability distribution over k
categories.  Hard metrics discretize by argmax (ties to the lowest
index); soft metrics consume the full distributions through fuzzy-AND
confusion matrices, preserving the information a hard argmax discards.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .categories import CATEGORIES, N_CATEGORIES
from .errors import ConfigError, DataError

SOFT_AND_MODES = ("strong", "product", "weak")

#: Sentinel threshold strictly above every probability: detects nothing.
ABOVE_MAX = 1.0 + 1e-9

#: Per-category detection thresholds tuned to maximize accuracy on the
#: training corpus, in category order (Brain .. Other).
TRAINING_ACCURACY_THRESHOLDS = (0.44, 0.18, 0.13, 0.33, 0.04, 0.13, 0.15)

#: Merging schemes: each inner tuple lists the source categories summed
#: into one output category, in output order.
MERGE_7_TO_5 = ((0,), (1,), (2,), (3,), (4, 5, 6))
MERGE_7_TO_2 = ((0,), (1, 2, 3, 4, 5, 6))
_NAMED_SCHEMES = {"7to5": MERGE_7_TO_5, "7to2": MERGE_7_TO_2}


def validate_pairs(targets: np.ndarray, predictions: np.ndarray):
    """Check that targets and predictions are matching (n, k) stacks of
    probability vectors and return them as float64 arrays."""
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if targets.ndim != 2 or targets.shape[1] < 2:
        raise DataError(f"targets must be (n, k) with k >= 2, got {targets.shape}")
    if predictions.shape != targets.shape:
        raise DataError(
            f"predictions shape {predictions.shape} does not match targets {targets.shape}"
        )
    if targets.shape[0] == 0:
        raise DataError("no evaluation pairs given")
    for name, arr in (("targets", targets), ("predictions", predictions)):
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{name} contain non-finite values")
        if np.any(arr < 0):
            raise DataError(f"{name} contain negative values")
        if np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-6):
            raise DataError(f"{name} rows must each sum to 1")
    return targets, predictions


def balanced_accuracy(targets: np.ndarray, predictions: np.ndarray) -> float:
    """Mean over categories of within-category recall after argmax.

    Categories with no target examples are excluded from the average (a
    warning is emitted so silent class dropout is visible).
    """
    targets, predictions = validate_pairs(targets, predictions)
    true_hard = np.argmax(targets, axis=1)
    pred_hard = np.argmax(predictions, axis=1)
    recalls = []
    missing = []
    for k in range(targets.shape[1]):
        in_class = true_hard == k
        if not np.any(in_class):
            missing.append(k)
            continue
        recalls.append(float(np.mean(pred_hard[in_class] == k)))
    if missing:
        warnings.warn(
            f"categories without target examples excluded from balanced accuracy: {missing}",
            stacklevel=2,
        )
    if not recalls:
        raise DataError("no category has any target examples")
    return float(np.mean(recalls))


def cross_entropy(targets: np.ndarray, predictions: np.ndarray) -> float:
    """Mean per-example cross entropy, reported as a positive loss.

    Predictions are floored at 1e-12 inside the logarithm.
    """
    targets, predictions = validate_pairs(targets, predictions)
    logp = np.log(np.maximum(predictions, 1e-12))
    return float(-np.mean(np.sum(targets * logp, axis=1)))


def confusion_matrix(
    targets: np.ndarray, predictions: np.ndarray, normalized: bool = False
) -> np.ndarray:
    """Hard (argmax) confusion counts; rows are targets, columns predictions.

    With ``normalized=True`` each row is divided by its example count so
    the diagonal holds per-category recall; rows without examples stay
    all-zero and trigger a warning.
    """
    targets, predictions = validate_pairs(targets, predictions)
    k = targets.shape[1]
    true_hard = np.argmax(targets, axis=1)
    pred_hard = np.argmax(predictions, axis=1)
    matrix = np.zeros((k, k))
    np.add.at(matrix, (true_hard, pred_hard), 1.0)
    if normalized:
        row_sums = matrix.sum(axis=1, keepdims=True)
        empty = np.flatnonzero(row_sums[:, 0] == 0)
        if empty.size:
            warnings.warn(f"rows without target examples left all-zero: {empty.tolist()}",
                          stacklevel=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            matrix = np.where(row_sums > 0, matrix / np.where(row_sums == 0, 1, row_sums), 0.0)
    return matrix


def soft_and(x, y, mode: str):
    """Fuzzy conjunction of two membership values in [0, 1].

    ``strong`` assumes minimal overlap (max(0, x + y - 1)), ``product``
    assumes independence (x * y), ``weak`` assumes maximal overlap
    (min(x, y)); strong <= product <= weak always holds.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(x < 0) or np.any(x > 1) or np.any(y < 0) or np.any(y > 1):
        raise DataError("soft_and arguments must lie in [0, 1]")
    if mode == "strong":
        return np.maximum(0.0, x + y - 1.0)
    if mode == "product":
        return x * y
    if mode == "weak":
        return np.minimum(x, y)
    raise ConfigError(f"unknown soft-AND mode {mode!r}; expected one of {SOFT_AND_MODES}")


@dataclass
class SoftConfusion:
    """Soft confusion matrix together with the fuzzy-AND mode that built it."""

    matrix: np.ndarray  # (k, k), entry (i, j) sums soft_and(t_i, p_j)
    and_mode: str


def soft_confusion(targets: np.ndarray, predictions: np.ndarray, mode: str) -> SoftConfusion:
    """Accumulate soft_and(t_i, p_j) over examples into a k-by-k matrix."""
    targets, predictions = validate_pairs(targets, predictions)
    matrix = soft_and(targets[:, :, None], predictions[:, None, :], mode).sum(axis=0)
    return SoftConfusion(matrix=matrix, and_mode=mode)


@dataclass
class RocCurve:
    """Detection operating points for one category as the threshold sweeps up."""

    category: int
    points: list  # ordered (threshold, fpr, tpr), threshold ascending

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def fprs(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def tprs(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    def auc(self) -> float:
        """Trapezoidal area under the (FPR, TPR) curve."""
        fpr = self.fprs[::-1]  # ascending FPR
        tpr = self.tprs[::-1]
        return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_curve(targets: np.ndarray, predictions: np.ndarray, category: int) -> RocCurve:
    """ROC points for detecting one category from its predicted probability.

    Positives are examples whose target argmax equals ``category``; a
    detection fires when the predicted probability is at or above the
    threshold.  Thresholds sweep the distinct predicted probabilities plus
    0 (everything detected) and a value above every probability (nothing
    detected).

    Raises
    ------
    DataError
        If the category has no positive or no negative examples.
    """
    targets, predictions = validate_pairs(targets, predictions)
    if not 0 <= category < targets.shape[1]:
        raise DataError(f"category {category} out of range")
    scores = predictions[:, category]
    positive = np.argmax(targets, axis=1) == category
    n_pos = int(np.sum(positive))
    n_neg = positive.size - n_pos
    if n_pos == 0:
        raise DataError(f"ROC for category {category} undefined: no positive examples")
    if n_neg == 0:
        raise DataError(f"ROC for category {category} undefined: no negative examples")

    thresholds = np.unique(np.concatenate([scores, [0.0, ABOVE_MAX]]))
    points = []
    for theta in thresholds:
        detected = scores >= theta
        tpr = float(np.sum(detected & positive)) / n_pos
        fpr = float(np.sum(detected & ~positive)) / n_neg
        points.append((float(theta), fpr, tpr))
    return RocCurve(category=category, points=points)


def soc_points(targets: np.ndarray, predictions: np.ndarray, category: int) -> list:
    """Soft operating characteristic points (strong, product, weak order).

    Each point applies the TPR and FPR formulas to the corresponding soft
    confusion matrix: soft-TPR is the diagonal entry over its row sum, and
    soft-FPR is the column mass from other rows over those rows' total
    mass.  Returned as (soft_fpr, soft_tpr) tuples.
    """
    targets, predictions = validate_pairs(targets, predictions)
    if not 0 <= category < targets.shape[1]:
        raise DataError(f"category {category} out of range")
    points = []
    for mode in SOFT_AND_MODES:
        matrix = soft_confusion(targets, predictions, mode).matrix
        row_mass = matrix[category].sum()
        others = np.delete(np.arange(matrix.shape[0]), category)
        other_mass = matrix[others].sum()
        if row_mass == 0 or other_mass == 0:
            raise DataError(
                f"SOC point for category {category} undefined under {mode!r}: "
                "zero confusion mass"
            )
        tpr = matrix[category, category] / row_mass
        fpr = matrix[others, category].sum() / other_mass
        points.append((float(fpr), float(tpr)))
    return points


def f1_score(recall: float, precision: float) -> float:
    """Harmonic mean of recall and precision; 0 when both are 0."""
    if not 0 <= recall <= 1 or not 0 <= precision <= 1:
        raise DataError("recall and precision must lie in [0, 1]")
    if recall == 0 and precision == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def f1_isometric(level: float, fpr, prevalence: float = 0.5):
    """TPR locus achieving a fixed F1 score as a function of FPR.

    With positive-class prevalence pi, F1 = c along
    TPR = c * (pi + (1 - pi) * FPR) / (pi * (2 - c)).  The default is the
    balanced (pi = 1/2) case used when overlaying isometrics on operating-
    characteristic plots.  Values above 1 indicate the level is
    unattainable at that FPR.
    """
    if not 0 < level < 2:
        raise ConfigError(f"F1 level must be in (0, 2), got {level}")
    if not 0 < prevalence < 1:
        raise ConfigError(f"prevalence must be in (0, 1), got {prevalence}")
    fpr = np.asarray(fpr, dtype=np.float64)
    return level * (prevalence + (1.0 - prevalence) * fpr) / (prevalence * (2.0 - level))


@dataclass
class ThresholdSet:
    """Per-category detection thresholds plus where they came from."""

    thresholds: np.ndarray  # (k,) values in [0, 1]
    provenance: str

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        if self.thresholds.ndim != 1:
            raise ConfigError("thresholds must be a vector")
        if np.any(self.thresholds < 0) or np.any(self.thresholds > 1):
            raise ConfigError("thresholds must lie in [0, 1]")


def _criterion_value(detected, positive, criterion: str) -> float:
    tp = float(np.sum(detected & positive))
    fp = float(np.sum(detected & ~positive))
    fn = float(np.sum(~detected & positive))
    tn = float(np.sum(~detected & ~positive))
    if criterion == "accuracy":
        return (tp + tn) / (tp + tn + fp + fn)
    if criterion == "f1":
        recall = tp / (tp + fn) if tp + fn else 0.0
        precision = tp / (tp + fp) if tp + fp else 0.0
        return f1_score(recall, precision)
    raise ConfigError(f"unknown criterion {criterion!r}; expected 'f1' or 'accuracy'")


def optimal_thresholds(
    targets: np.ndarray, predictions: np.ndarray, criterion: str = "f1"
) -> ThresholdSet:
    """Per-category thresholds maximizing F1 or accuracy over the ROC sweep.

    Candidates are the ROC thresholds for each category; ties are broken
    toward the larger threshold.  A winning candidate above every score is
    stored as 1.0 (detect only certainties).
    """
    targets, predictions = validate_pairs(targets, predictions)
    k = targets.shape[1]
    hard = np.argmax(targets, axis=1)
    best = np.empty(k)
    for cat in range(k):
        curve = roc_curve(targets, predictions, cat)
        scores = predictions[:, cat]
        positive = hard == cat
        best_value, best_theta = -1.0, 0.0
        for theta in curve.thresholds:
            value = _criterion_value(scores >= theta, positive, criterion)
            if value > best_value or (value == best_value and theta > best_theta):
                best_value, best_theta = value, float(theta)
        best[cat] = min(best_theta, 1.0)
    return ThresholdSet(thresholds=best, provenance=f"optimized:{criterion}")


def detect_multilabel(label: np.ndarray, thresholds) -> set:
    """Category names whose probability meets or exceeds their threshold.

    May return several categories or none; thresholds may be a
    ThresholdSet or a plain vector.
    """
    label = np.asarray(label, dtype=np.float64)
    values = thresholds.thresholds if isinstance(thresholds, ThresholdSet) else np.asarray(
        thresholds, dtype=np.float64
    )
    if label.shape != values.shape:
        raise DataError(f"label shape {label.shape} does not match thresholds {values.shape}")
    if label.shape[0] != N_CATEGORIES:
        raise DataError(f"multi-label detection expects {N_CATEGORIES} categories")
    return {CATEGORIES[i] for i in np.flatnonzero(label >= values)}


def merge_classes(label: np.ndarray, scheme) -> np.ndarray:
    """Sum label mass into merged categories.

    ``scheme`` is either a named scheme (``"7to5"`` keeps Brain, Muscle,
    Eye, Heart and pools the rest into Other; ``"7to2"`` keeps Brain
    versus everything else) or an explicit sequence of index groups
    partitioning the label. Mass is conserved exactly.
    """
    label = np.asarray(label, dtype=np.float64)
    if label.ndim != 1:
        raise DataError("merge_classes expects a single label vector")
    if isinstance(scheme, str):
        if scheme not in _NAMED_SCHEMES:
            raise ConfigError(
                f"unknown merge scheme {scheme!r}; expected one of {sorted(_NAMED_SCHEMES)}"
            )
        groups = _NAMED_SCHEMES[scheme]
    else:
        groups = tuple(tuple(g) for g in scheme)
    flat = [i for group in groups for i in group]
    if sorted(flat) != list(range(label.shape[0])):
        raise ConfigError(f"merge groups must partition indices 0..{label.shape[0] - 1}")
    return np.array([label[list(group)].sum() for group in groups])
