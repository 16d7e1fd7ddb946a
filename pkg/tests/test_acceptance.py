"""Acceptance gate: one test per release criterion, with pinned tolerances.

Every test in this module freezes a worked example, an error tolerance,
and a wall-clock budget.  The budgets are sized for a single desktop
core and exist to catch order-of-magnitude performance regressions, not
scheduler jitter.  Numeric tolerances are never loosened to make a test
pass; the expected values come from independent oracles (tests/oracles.py)
or hand-worked arithmetic.
"""

import time

import numpy as np
import pytest

import builders
import oracles
from test_crowdlabel import ENUMERATION_FIXTURES, _fixture_instance

from icsort import metrics
from icsort.categories import CATEGORIES, N_CATEGORIES, RESPONSES, RESPONSE_INDEX
from icsort.cli import BENCH_CEILING_SECONDS, REFERENCE_MEDIAN_SECONDS, bench_recordings
from icsort.crowdlabel import ClassPrior, Vote, cllda_fit, default_priors
from icsort.features import median_welch_psd
from icsort.metrics import TRAINING_ACCURACY_THRESHOLDS
from icsort.network import (
    LAYER_ORDER,
    TrainConfig,
    classify,
    forward,
    forward_backward,
    initialize_weights,
    shape_trace,
    train,
    weighted_cross_entropy,
)


def test_criterion_01_soft_and_worked_example():
    started = time.perf_counter()
    assert abs(metrics.soft_and(0.5, 0.8, "strong") - 0.3) <= 1e-12
    assert abs(metrics.soft_and(0.5, 0.8, "product") - 0.4) <= 1e-12
    assert abs(metrics.soft_and(0.5, 0.8, "weak") - 0.5) <= 1e-12
    assert time.perf_counter() - started < 1.0


def test_criterion_02_multilabel_detection_worked_example():
    label = np.array([0.71, 0.04, 0.03, 0.01, 0.01, 0.02, 0.18])
    detected = metrics.detect_multilabel(label, TRAINING_ACCURACY_THRESHOLDS)
    assert detected == {"Brain", "Other"}


def test_criterion_03_category_merge_worked_example():
    label = np.array([0.45, 0.40, 0.15])
    merged = metrics.merge_classes(label, [(0,), (1, 2)])
    np.testing.assert_allclose(merged, [0.45, 0.55], atol=1e-12)
    # the merge flips the winner: category 0 won before, group 1 wins after
    assert int(np.argmax(label)) == 0
    assert int(np.argmax(merged)) == 1


def test_criterion_04_architecture_shape_audit():
    started = time.perf_counter()
    expected = {
        "topo1": (3, 16, 16, 128),
        "topo2": (3, 8, 8, 256),
        "topo3": (3, 4, 4, 512),
        "psd1": (3, 50, 128),
        "psd2": (3, 25, 256),
        "psd3": (3, 13, 1),
        "acf1": (3, 50, 128),
        "acf2": (3, 25, 256),
        "acf3": (3, 13, 1),
        "merged": (3, 4, 4, 514),
        "out": (3, 1, 1, 7),
        "probs": (3, 7),
    }
    assert shape_trace(3) == expected

    # the static trace must match what a live forward pass produces
    weights = initialize_weights(seed=0)
    filters = {name: weights.kernels[name].shape[-1] for name in LAYER_ORDER}
    assert filters == {
        "topo1": 128, "topo2": 256, "topo3": 512,
        "psd1": 128, "psd2": 256, "psd3": 1,
        "acf1": 128, "acf2": 256, "acf3": 1,
        "out": 7,
    }
    stack = builders.random_stack(2, seed=1)
    cache = {}
    probs = forward(weights, stack.topo, stack.psd, stack.autocorr, cache=cache)
    for name in LAYER_ORDER[:-1]:
        assert cache[name][1].shape == (2,) + shape_trace(2)[name][1:]
    assert probs.shape == (2, 7)
    assert np.all(probs >= 0.0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert time.perf_counter() - started < 1.0


def test_criterion_05_analytic_gradients_match_central_differences():
    # double precision, randomized biases, and perturbed inputs put the
    # network in general position; probes whose LeakyReLU sign pattern
    # changes between w+h and w-h are excluded because the loss is not
    # differentiable across such a crossing and the finite-difference
    # quotient measures nothing there
    started = time.perf_counter()
    weights = initialize_weights(seed=42).astype(np.float64)
    bias_rng = np.random.default_rng(99)
    for name in LAYER_ORDER:
        weights.biases[name] = bias_rng.normal(0.0, 0.1, size=weights.biases[name].shape)

    stack = builders.random_stack(2, seed=21)
    topo = stack.topo.astype(np.float64)
    psd = stack.psd.astype(np.float64)
    acf = stack.autocorr.astype(np.float64)
    targets = np.random.default_rng(5).dirichlet(np.ones(7), size=2)
    class_weights = np.asarray(TrainConfig().class_weights, dtype=np.float64)
    _, kernel_grads, bias_grads, _ = forward_backward(
        weights, topo, psd, acf, targets, class_weights
    )

    branch_layers = [n for n in LAYER_ORDER if n != "out"]

    def loss_and_signs():
        cache = {}
        probs = forward(weights, topo, psd, acf, cache=cache)
        signs = np.concatenate([cache[n][1].ravel() > 0 for n in branch_layers])
        loss = weighted_cross_entropy(probs.astype(np.float64), targets, class_weights)
        return loss, signs

    h = 1e-4
    rng = np.random.default_rng(7)
    kept = 0
    for name in LAYER_ORDER:
        probes = [
            ("kernel", weights.kernels[name].ravel(), kernel_grads[name].ravel(), 12),
            ("bias", weights.biases[name], bias_grads[name],
             min(2, weights.biases[name].size)),
        ]
        for kind, flat, grad, count in probes:
            for idx in rng.choice(flat.size, size=count, replace=False):
                original = flat[idx]
                flat[idx] = original + h
                up, signs_up = loss_and_signs()
                flat[idx] = original - h
                down, signs_down = loss_and_signs()
                flat[idx] = original
                if not np.array_equal(signs_up, signs_down):
                    continue
                kept += 1
                numeric = (up - down) / (2.0 * h)
                analytic = grad[idx]
                gap = abs(analytic - numeric)
                tolerance = max(1e-3 * max(abs(analytic), abs(numeric)), 2e-6)
                assert gap <= tolerance, (
                    f"{name}/{kind}[{idx}]: analytic {analytic:.6e} vs "
                    f"numeric {numeric:.6e} (gap {gap:.2e})"
                )
    assert kept >= 100
    assert time.perf_counter() - started < 60.0


def test_criterion_06_classification_invariant_under_topography_symmetries():
    started = time.perf_counter()
    weights = initialize_weights(seed=0)
    stack = builders.random_stack(100, seed=30)
    base = classify(weights, stack.topo, stack.psd, stack.autocorr)
    mirrored = classify(weights, stack.topo[:, :, ::-1], stack.psd, stack.autocorr)
    negated = classify(weights, -stack.topo, stack.psd, stack.autocorr)
    assert np.max(np.abs(mirrored - base)) < 1e-9
    assert np.max(np.abs(negated - base)) < 1e-9
    assert time.perf_counter() - started < 10.0


def test_criterion_07_training_separates_synthetic_categories():
    started = time.perf_counter()
    train_stack, train_labels = builders.toy_dataset(200, seed=0)
    val_stack, val_labels = builders.toy_dataset(50, seed=1)

    config = TrainConfig(max_batches=150, val_interval=50)
    result = train(
        train_stack, train_labels, config, val_stack, val_labels, seed=0
    )
    assert result.batches_run <= 20_000
    probs = classify(result.weights, val_stack.topo, val_stack.psd, val_stack.autocorr)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == np.argmax(val_labels, axis=1)))
    assert accuracy >= 0.95

    # the run must be reproducible: same seed, same weights, bit for bit
    short = TrainConfig(max_batches=20, val_interval=10)
    first = train(train_stack, train_labels, short, val_stack, val_labels, seed=3)
    second = train(train_stack, train_labels, short, val_stack, val_labels, seed=3)
    for name in LAYER_ORDER:
        np.testing.assert_array_equal(
            first.weights.kernels[name], second.weights.kernels[name]
        )
        np.testing.assert_array_equal(
            first.weights.biases[name], second.weights.biases[name]
        )
    assert time.perf_counter() - started < 900.0


def test_criterion_08_crowd_aggregation_enumeration_and_planted_truth():
    started = time.perf_counter()
    # small vote sets: the Gibbs estimate must match exact enumeration
    for name in sorted(ENUMERATION_FIXTURES):
        votes, priors, expected = _fixture_instance(name)
        enumerated = oracles.enum_crowd_posterior(
            [(v.labeler_id, RESPONSE_INDEX[v.response]) for v in votes],
            priors,
            np.ones(N_CATEGORIES),
        )
        np.testing.assert_allclose(enumerated, expected, atol=1e-9)
        result = cllda_fit(votes, priors, ClassPrior(np.ones(N_CATEGORIES)), seed=0)
        np.testing.assert_allclose(result.labels["c"], enumerated, atol=0.02)

    # planted truth: 60 components, 5 noisy labelers at 80% accuracy
    recoveries = []
    for trial in range(10):
        rng = np.random.default_rng(trial)
        planted = rng.integers(0, 7, size=60)
        votes = []
        for comp, true_cat in enumerate(planted):
            for labeler in range(5):
                if rng.random() < 0.8:
                    response = RESPONSES[true_cat]
                else:
                    others = [r for r in range(8) if r != true_cat]
                    response = RESPONSES[others[rng.integers(0, 7)]]
                votes.append(Vote(f"l{labeler}", f"c{comp:02d}", response))
        priors = {f"l{labeler}": default_priors("training-unknown") for labeler in range(5)}
        result = cllda_fit(votes, priors, ClassPrior(np.ones(7)), seed=trial)
        labels = np.stack([result.labels[f"c{i:02d}"] for i in range(60)])
        recoveries.append(float(np.mean(np.argmax(labels, axis=1) == planted)))
    assert float(np.mean(recoveries)) >= 0.90
    assert time.perf_counter() - started < 120.0


def test_criterion_09_metrics_match_brute_force_on_seeded_instances():
    started = time.perf_counter()
    for seed in range(20):
        targets, predictions = builders.random_label_pairs(seed)
        assert abs(
            metrics.balanced_accuracy(targets, predictions)
            - oracles.bf_balanced_accuracy(targets, predictions)
        ) <= 1e-9
        assert abs(
            metrics.cross_entropy(targets, predictions)
            - oracles.bf_cross_entropy(targets, predictions)
        ) <= 1e-9
        np.testing.assert_allclose(
            metrics.confusion_matrix(targets, predictions),
            oracles.bf_confusion(targets, predictions),
            atol=1e-9,
        )
        for category in range(7):
            curve = metrics.roc_curve(targets, predictions, category)
            reference = oracles.bf_roc_points(targets, predictions, category)
            assert len(curve.points) == len(reference)
            for got, want in zip(curve.points, reference):
                np.testing.assert_allclose(got, want, atol=1e-9)
            np.testing.assert_allclose(
                metrics.soc_points(targets, predictions, category),
                oracles.bf_soc_points(targets, predictions, category),
                atol=1e-9,
            )
    assert time.perf_counter() - started < 30.0


def test_criterion_10_median_welch_resists_single_window_corruption():
    started = time.perf_counter()
    fs = 128.0
    t = np.arange(int(fs * 120)) / fs
    rng = np.random.default_rng(7)
    clean = np.sin(2 * np.pi * 10.0 * t) + 0.05 * rng.standard_normal(t.size)
    spiked = clean.copy()
    spiked[40 * 64 : 40 * 64 + 128] *= 1000.0  # one 1-second window, 1000x

    median_clean = median_welch_psd(clean, fs)
    median_spiked = median_welch_psd(spiked, fs)
    mean_clean = oracles.mean_welch_db(clean, fs)
    mean_spiked = oracles.mean_welch_db(spiked, fs)

    peak = int(np.argmax(median_clean))
    assert peak == 9  # the 10 Hz line lives in bin 9 (1-indexed frequency 10)
    off_peak = np.ones(100, dtype=bool)
    off_peak[peak] = False
    assert np.max(np.abs(median_spiked - median_clean)[off_peak]) < 1.0
    assert np.max(np.abs(mean_spiked - mean_clean)[off_peak]) > 10.0
    assert time.perf_counter() - started < 10.0


def test_criterion_11_bench_reports_per_component_stats_within_ceiling():
    weights = initialize_weights(seed=0)
    recordings = [
        (f"rec{i}", builders.make_recording(seed=i)) for i in range(2)
    ]
    report = bench_recordings(weights, recordings)

    assert report["format"] == "icsort-bench"
    assert len(report["recordings"]) == 2
    for entry in report["recordings"]:
        assert entry["n_components"] == 4
        assert entry["per_component_seconds"] * entry["n_components"] == pytest.approx(
            entry["total_seconds"]
        )
        # the hard budget: no recording may exceed the per-component ceiling
        assert entry["per_component_seconds"] < BENCH_CEILING_SECONDS
    summary = report["summary"]
    assert summary["min_seconds"] <= summary["median_seconds"] <= summary["max_seconds"]
    # the reference timing is informational only: it must be reported
    # alongside the measured ratio, but no pass/fail hangs on it
    assert report["reference_median_seconds"] == REFERENCE_MEDIAN_SECONDS == 0.170
    assert report["ratio_to_reference"] == pytest.approx(
        summary["median_seconds"] / 0.170
    )
    assert report["ceiling_seconds"] == BENCH_CEILING_SECONDS == 2.0
    assert report["within_ceiling"] is True
