"""Evaluation metrics: hard, soft, and threshold-based, against brute force."""

import numpy as np
import pytest

import builders
import oracles
from icsort.errors import ConfigError, DataError
from icsort.metrics import (
    MERGE_7_TO_2,
    MERGE_7_TO_5,
    TRAINING_ACCURACY_THRESHOLDS,
    ThresholdSet,
    balanced_accuracy,
    confusion_matrix,
    cross_entropy,
    detect_multilabel,
    f1_isometric,
    f1_score,
    merge_classes,
    optimal_thresholds,
    roc_curve,
    soc_points,
    soft_and,
    soft_confusion,
    validate_pairs,
)


def _one_hot(indices, k=7):
    return np.eye(k)[np.asarray(indices)]


# ------------------------------------------------------------- validation


def test_validate_pairs_rejects_malformed_stacks():
    good = np.full((3, 7), 1.0 / 7.0)
    validate_pairs(good, good)
    with pytest.raises(DataError):
        validate_pairs(good, np.full((4, 7), 1.0 / 7.0))
    with pytest.raises(DataError):
        validate_pairs(np.ones((3, 1)), np.ones((3, 1)))
    with pytest.raises(DataError):
        validate_pairs(np.empty((0, 7)), np.empty((0, 7)))
    bad = good.copy()
    bad[0, 0] = np.nan
    with pytest.raises(DataError):
        validate_pairs(good, bad)
    bad = good.copy()
    bad[1] = [-0.1, 0.3, 0.2, 0.2, 0.2, 0.1, 0.1]
    with pytest.raises(DataError):
        validate_pairs(bad, good)
    with pytest.raises(DataError):
        validate_pairs(good, good * 0.5)


# --------------------------------------------------------------- soft AND


def test_soft_and_on_the_reference_pair():
    assert soft_and(0.5, 0.8, "strong") == pytest.approx(0.3, abs=1e-12)
    assert soft_and(0.5, 0.8, "product") == pytest.approx(0.4, abs=1e-12)
    assert soft_and(0.5, 0.8, "weak") == pytest.approx(0.5, abs=1e-12)


def test_soft_and_modes_are_ordered_and_broadcast():
    rng = np.random.default_rng(0)
    x = rng.random((5, 1))
    y = rng.random((1, 6))
    strong = soft_and(x, y, "strong")
    product = soft_and(x, y, "product")
    weak = soft_and(x, y, "weak")
    assert strong.shape == product.shape == weak.shape == (5, 6)
    assert np.all(strong <= product + 1e-15)
    assert np.all(product <= weak + 1e-15)

    with pytest.raises(DataError):
        soft_and(1.2, 0.5, "product")
    with pytest.raises(DataError):
        soft_and(0.5, -0.1, "weak")
    with pytest.raises(ConfigError):
        soft_and(0.5, 0.5, "min")


# ------------------------------------------------------------ hard metrics


def test_balanced_accuracy_averages_per_category_recall():
    targets = _one_hot([0, 0, 1, 2], k=3)
    predictions = _one_hot([0, 1, 1, 2], k=3)
    assert balanced_accuracy(targets, predictions) == pytest.approx(5.0 / 6.0)


def test_balanced_accuracy_warns_and_skips_absent_categories():
    targets = _one_hot([0, 0, 1], k=3)
    predictions = _one_hot([0, 1, 1], k=3)
    with pytest.warns(UserWarning, match="without target examples"):
        value = balanced_accuracy(targets, predictions)
    assert value == pytest.approx((0.5 + 1.0) / 2.0)


def test_cross_entropy_matches_the_log_loss_formula():
    targets = _one_hot([0, 1], k=3)
    predictions = np.array([[0.5, 0.25, 0.25], [0.1, 0.8, 0.1]])
    expected = -(np.log(0.5) + np.log(0.8)) / 2.0
    assert cross_entropy(targets, predictions) == pytest.approx(expected, abs=1e-12)


def test_cross_entropy_floors_vanishing_predictions():
    targets = _one_hot([0], k=3)
    predictions = np.array([[0.0, 0.5, 0.5]])
    assert cross_entropy(targets, predictions) == pytest.approx(-np.log(1e-12))


def test_confusion_matrix_counts_and_normalizes():
    targets = _one_hot([0, 0, 1, 2, 2, 2], k=3)
    predictions = _one_hot([0, 1, 1, 2, 2, 0], k=3)
    counts = confusion_matrix(targets, predictions)
    assert counts.sum() == 6
    np.testing.assert_array_equal(
        counts, [[1, 1, 0], [0, 1, 0], [1, 0, 2]]
    )
    rows = confusion_matrix(targets, predictions, normalized=True)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0)
    assert rows[2, 2] == pytest.approx(2.0 / 3.0)


def test_normalized_confusion_warns_on_empty_rows():
    targets = _one_hot([0, 1], k=3)
    predictions = _one_hot([0, 1], k=3)
    with pytest.warns(UserWarning, match="left all-zero"):
        rows = confusion_matrix(targets, predictions, normalized=True)
    assert np.all(rows[2] == 0.0)


def test_hard_metrics_match_brute_force_on_random_pairs():
    targets, predictions = builders.random_label_pairs(seed=3, n=200)
    assert balanced_accuracy(targets, predictions) == pytest.approx(
        oracles.bf_balanced_accuracy(targets, predictions), abs=1e-12
    )
    assert cross_entropy(targets, predictions) == pytest.approx(
        oracles.bf_cross_entropy(targets, predictions), abs=1e-12
    )
    np.testing.assert_array_equal(
        confusion_matrix(targets, predictions),
        oracles.bf_confusion(targets, predictions),
    )


# ------------------------------------------------------------ soft metrics


def test_soft_confusion_with_one_hot_rows_reduces_to_hard_counts():
    targets = _one_hot([0, 0, 1, 2, 2, 2], k=3)
    predictions = _one_hot([0, 1, 1, 2, 2, 0], k=3)
    hard = confusion_matrix(targets, predictions)
    for mode in ("strong", "product", "weak"):
        soft = soft_confusion(targets, predictions, mode)
        assert soft.and_mode == mode
        np.testing.assert_allclose(soft.matrix, hard, atol=1e-12)


def test_soft_confusion_matches_brute_force():
    targets, predictions = builders.random_label_pairs(seed=4, n=60)
    for mode in ("strong", "product", "weak"):
        np.testing.assert_allclose(
            soft_confusion(targets, predictions, mode).matrix,
            oracles.bf_soft_confusion(targets, predictions, mode),
            atol=1e-12,
        )


def test_soc_points_on_random_pairs_and_perfect_predictions():
    targets, predictions = builders.random_label_pairs(seed=5, n=80)
    for category in (0, 3, 6):
        np.testing.assert_allclose(
            soc_points(targets, predictions, category),
            oracles.bf_soc_points(targets, predictions, category),
            atol=1e-12,
        )

    perfect = _one_hot([0, 1, 2, 0, 1, 2], k=3)
    for category in range(3):
        for fpr, tpr in soc_points(perfect, perfect, category):
            assert tpr == pytest.approx(1.0)
            assert fpr == pytest.approx(0.0)

    single = _one_hot([0, 0], k=3)
    with pytest.raises(DataError):
        soc_points(single, single, 0)  # no off-category mass


# -------------------------------------------------------------------- ROC


def test_roc_curve_on_a_hand_worked_example():
    # two positives scoring 0.9 / 0.4, two negatives scoring 0.6 / 0.1
    scores = np.array([0.9, 0.6, 0.4, 0.1])
    positive = [True, False, True, False]
    targets = _one_hot([0 if p else 1 for p in positive], k=2)
    predictions = np.stack([scores, 1.0 - scores], axis=1)

    curve = roc_curve(targets, predictions, 0)
    expected = [
        (0.0, 1.0, 1.0),
        (0.1, 1.0, 1.0),
        (0.4, 0.5, 1.0),
        (0.6, 0.5, 0.5),
        (0.9, 0.0, 0.5),
        (1.0 + 1e-9, 0.0, 0.0),
    ]
    assert len(curve.points) == len(expected)
    for got, want in zip(curve.points, expected):
        assert got == pytest.approx(want, abs=1e-12)
    # 3 of the 4 positive/negative score pairs are correctly ordered
    assert curve.auc() == pytest.approx(0.75, abs=1e-12)
    assert curve.category == 0


def test_roc_curve_matches_brute_force():
    targets, predictions = builders.random_label_pairs(seed=6, n=150)
    for category in (0, 2, 6):
        curve = roc_curve(targets, predictions, category)
        reference = oracles.bf_roc_points(targets, predictions, category)
        assert len(curve.points) == len(reference)
        for got, want in zip(curve.points, reference):
            assert got == pytest.approx(want, abs=1e-12)


def test_roc_curve_needs_both_classes():
    targets = _one_hot([0, 0], k=3)
    predictions = np.full((2, 3), 1.0 / 3.0)
    with pytest.raises(DataError):
        roc_curve(targets, predictions, 0)  # no negatives
    with pytest.raises(DataError):
        roc_curve(targets, predictions, 1)  # no positives
    with pytest.raises(DataError):
        roc_curve(targets, predictions, 5)


# ------------------------------------------------------------- F1 helpers


def test_f1_score_formula_and_edges():
    assert f1_score(0.5, 1.0) == pytest.approx(2.0 / 3.0)
    assert f1_score(0.0, 0.0) == 0.0
    assert f1_score(1.0, 1.0) == 1.0
    with pytest.raises(DataError):
        f1_score(1.2, 0.5)
    with pytest.raises(DataError):
        f1_score(0.5, -0.1)


@pytest.mark.parametrize("prevalence", [0.5, 0.3])
@pytest.mark.parametrize("level", [0.25, 0.6, 0.9])
def test_f1_isometric_points_reproduce_their_level(level, prevalence):
    fpr = np.linspace(0.0, 1.0, 11)
    tpr = f1_isometric(level, fpr, prevalence=prevalence)
    mask = tpr <= 1.0  # attainable part of the locus
    assert np.any(mask)
    recall = tpr[mask]
    pos = prevalence * recall
    fp = (1.0 - prevalence) * fpr[mask]
    precision = pos / (pos + fp)
    f1 = 2.0 * precision * recall / (precision + recall)
    np.testing.assert_allclose(f1, level, atol=1e-12)


def test_f1_isometric_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        f1_isometric(0.0, [0.5])
    with pytest.raises(ConfigError):
        f1_isometric(2.0, [0.5])
    with pytest.raises(ConfigError):
        f1_isometric(0.5, [0.5], prevalence=1.0)


# --------------------------------------------------------------- thresholds


def test_threshold_set_validation():
    ThresholdSet(np.full(7, 0.5), "fixed")
    with pytest.raises(ConfigError):
        ThresholdSet(np.full((7, 1), 0.5), "fixed")
    with pytest.raises(ConfigError):
        ThresholdSet(np.array([0.5, 1.5]), "fixed")


@pytest.mark.parametrize("criterion", ["f1", "accuracy"])
def test_optimal_thresholds_match_brute_force(criterion):
    targets, predictions = builders.random_label_pairs(seed=7, n=120)
    result = optimal_thresholds(targets, predictions, criterion=criterion)
    assert result.provenance == f"optimized:{criterion}"
    for category in range(7):
        _, theta = oracles.bf_best_threshold(targets, predictions, category, criterion)
        assert result.thresholds[category] == pytest.approx(theta, abs=1e-12)


def test_optimal_thresholds_break_ties_upward_and_clamp_to_one():
    # every candidate threshold scores the same accuracy, so the sweep
    # settles on the above-all sentinel and stores it clamped to 1.0
    targets = _one_hot([0, 1], k=2)
    predictions = np.array([[0.1, 0.9], [0.9, 0.1]])
    result = optimal_thresholds(targets, predictions, criterion="accuracy")
    assert result.thresholds[0] == 1.0

    with pytest.raises(ConfigError):
        optimal_thresholds(targets, predictions, criterion="gini")


def test_detect_multilabel_with_the_tuned_thresholds():
    label = np.array([0.71, 0.04, 0.03, 0.01, 0.01, 0.02, 0.18])
    detected = detect_multilabel(label, TRAINING_ACCURACY_THRESHOLDS)
    assert detected == {"Brain", "Other"}

    wrapped = ThresholdSet(TRAINING_ACCURACY_THRESHOLDS, "training-accuracy")
    assert detect_multilabel(label, wrapped) == {"Brain", "Other"}

    nothing = detect_multilabel(np.full(7, 0.01), TRAINING_ACCURACY_THRESHOLDS)
    assert nothing == set()

    with pytest.raises(DataError):
        detect_multilabel(np.full(5, 0.2), TRAINING_ACCURACY_THRESHOLDS)


# ----------------------------------------------------------------- merging


def test_merging_can_flip_the_argmax():
    label = np.array([0.45, 0.4, 0.15])
    merged = merge_classes(label, ((0,), (1, 2)))
    np.testing.assert_allclose(merged, [0.45, 0.55], atol=1e-12)
    assert np.argmax(label) == 0
    assert np.argmax(merged) == 1


def test_named_merge_schemes():
    label = np.array([0.3, 0.1, 0.1, 0.1, 0.2, 0.1, 0.1])
    five = merge_classes(label, "7to5")
    np.testing.assert_allclose(five, [0.3, 0.1, 0.1, 0.1, 0.4], atol=1e-15)
    two = merge_classes(label, "7to2")
    np.testing.assert_allclose(two, [0.3, 0.7], atol=1e-15)
    assert MERGE_7_TO_5[-1] == (4, 5, 6)
    assert MERGE_7_TO_2 == ((0,), (1, 2, 3, 4, 5, 6))


def test_merge_conserves_mass_and_validates_partitions():
    rng = np.random.default_rng(8)
    label = rng.dirichlet(np.ones(7))
    merged = merge_classes(label, "7to5")
    assert merged.sum() == pytest.approx(label.sum(), abs=1e-12)

    with pytest.raises(ConfigError):
        merge_classes(label, ((0, 1), (1, 2, 3, 4, 5, 6)))  # overlap
    with pytest.raises(ConfigError):
        merge_classes(label, ((0,), (1, 2)))  # missing indices
    with pytest.raises(ConfigError):
        merge_classes(label, "7to3")
    with pytest.raises(DataError):
        merge_classes(label[None, :], "7to5")
