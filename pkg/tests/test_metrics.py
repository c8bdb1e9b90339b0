from __future__ import annotations

import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defectlab.metrics import (
    ConfusionMatrix,
    confusion,
    roc_auc,
    summarize,
)
from defectlab.errors import RangeError, ShapeError, UndefinedMetricError


def brute_force_auc(scores, labels) -> float:
    """Independent oracle: mean over all (pos, neg) pairs of
    [s_pos > s_neg] + 0.5 * [s_pos == s_neg]."""
    pos = [s for s, t in zip(scores, labels) if t == 1]
    neg = [s for s, t in zip(scores, labels) if t == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestConfusion:
    def test_published_test_split_counts(self):
        # 500 true-0 of which 487 predicted 0; 500 true-1 of which 497 predicted 1
        truth = [0] * 500 + [1] * 500
        preds = [0] * 487 + [1] * 13 + [0] * 3 + [1] * 497
        cm = confusion(truth, preds)
        assert (cm.tn, cm.fp, cm.fn, cm.tp) == (487, 13, 3, 497)
        assert cm.total == 1000

    def test_perfect_predictions_diagonal(self):
        truth = [0] * 3 + [1] * 5
        cm = confusion(truth, truth)
        assert (cm.tn, cm.fp, cm.fn, cm.tp) == (3, 0, 0, 5)

    def test_all_wrong_antidiagonal(self):
        truth = [0] * 3 + [1] * 5
        preds = [1] * 3 + [0] * 5
        cm = confusion(truth, preds)
        assert (cm.tn, cm.fp, cm.fn, cm.tp) == (0, 3, 5, 0)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            confusion([0, 1], [0])

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            confusion([], [])

    def test_non_binary_rejected(self):
        with pytest.raises(RangeError):
            confusion([0, 2], [0, 1])


class TestSummarize:
    def test_test_split_report_values(self):
        # Published confusion matrix (487, 13 / 3, 497). The printed class-1
        # recall is 0.995 but 497/500 computes to 0.994; we assert the
        # recomputed value.
        report = summarize(ConfusionMatrix(487, 13, 3, 497))
        assert report.accuracy == pytest.approx(0.984, abs=1e-12)
        assert report.precision_0 == pytest.approx(0.994, abs=5e-4)
        assert report.recall_0 == pytest.approx(0.974, abs=5e-4)
        assert report.f1_0 == pytest.approx(0.984, abs=5e-4)
        assert report.precision_1 == pytest.approx(0.975, abs=5e-4)
        assert report.recall_1 == pytest.approx(0.994, abs=1e-12)
        assert round(report.recall_1, 3) != 0.995  # the printed value
        assert report.f1_1 == pytest.approx(0.984, abs=5e-4)

    def test_baseline_row_report_values(self):
        # Published baseline confusion matrix (496, 4 / 19, 481); printed
        # recall is 0.963 but 481/500 computes to 0.962.
        report = summarize(ConfusionMatrix(496, 4, 19, 481))
        assert report.accuracy == pytest.approx(0.977, abs=1e-12)
        assert report.precision_1 == pytest.approx(0.992, abs=1e-3)
        assert report.recall_1 == pytest.approx(0.962, abs=1e-12)
        assert report.f1_1 == pytest.approx(0.977, abs=1e-3)

    @pytest.mark.parametrize(
        "cm, accuracy, precision_1, recall_1, f1_1",
        [
            ((483, 17, 4, 496), 0.979, 0.967, 0.992, 0.979),  # best SGD row
            ((490, 10, 2, 498), 0.988, 0.980, 0.996, 0.988),  # best Adam row
            ((485, 15, 3, 497), 0.982, 0.971, 0.994, 0.982),  # best RMSprop row
        ],
    )
    def test_best_optimizer_rows(self, cm, accuracy, precision_1, recall_1, f1_1):
        report = summarize(ConfusionMatrix(*cm))
        assert report.accuracy == pytest.approx(accuracy, abs=1e-12)
        assert report.precision_1 == pytest.approx(precision_1, abs=1e-3)
        assert report.recall_1 == pytest.approx(recall_1, abs=1e-3)
        assert report.f1_1 == pytest.approx(f1_1, abs=1e-3)

    def test_perfect_matrix_all_ones(self):
        report = summarize(ConfusionMatrix(5, 0, 0, 7))
        for value in (report.accuracy, report.precision_0, report.recall_0,
                      report.f1_0, report.precision_1, report.recall_1, report.f1_1):
            assert value == 1.0
        assert report.degenerate == ()

    def test_degenerate_denominator_flags_not_raises(self):
        # nothing predicted positive: precision_1 denominator is 0
        report = summarize(ConfusionMatrix(5, 0, 5, 0))
        assert report.precision_1 == 0.0
        assert "precision_1" in report.degenerate

    def test_accuracy_confusion_consistency(self):
        cm = ConfusionMatrix(487, 13, 3, 497)
        report = summarize(cm)
        assert report.accuracy * cm.total == cm.tn + cm.tp

    def test_json_schema(self):
        report = summarize(ConfusionMatrix(487, 13, 3, 497),
                           scores=[0.1, 0.9], true_labels=[0, 1])
        payload = report.to_json_dict()
        assert payload["confusion"] == [[487, 13], [3, 497]]
        assert set(payload) >= {
            "confusion", "accuracy", "precision_0", "recall_0", "f1_0",
            "precision_1", "recall_1", "f1_1", "auc",
        }
        json.dumps(payload)  # serializable


class TestRocAuc:
    def test_perfectly_separated(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_tied_scores(self):
        assert roc_auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.9], [1, 1])

    def test_matches_brute_force_oracle_random_instances(self):
        rng = random.Random(20260809)
        for _ in range(200):
            n = rng.randint(2, 12)
            labels = [rng.randint(0, 1) for _ in range(n)]
            if len(set(labels)) < 2:
                labels[0] = 1 - labels[0]
            # coarse score grid makes ties common
            scores = [rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]) for _ in range(n)]
            expected = brute_force_auc(scores, labels)
            assert roc_auc(scores, labels) == pytest.approx(expected, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(data=st.data())
    def test_permutation_invariance(self, data):
        n = data.draw(st.integers(min_value=2, max_value=20))
        labels = data.draw(
            st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(
                lambda ls: 0 < sum(ls) < len(ls)
            )
        )
        scores = data.draw(
            st.lists(st.floats(0, 1, allow_nan=False), min_size=n, max_size=n)
        )
        base = roc_auc(scores, labels)
        order = data.draw(st.permutations(range(n)))
        shuffled = roc_auc([scores[i] for i in order], [labels[i] for i in order])
        assert shuffled == pytest.approx(base, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(data=st.data())
    def test_complement_symmetry(self, data):
        n = data.draw(st.integers(min_value=2, max_value=20))
        labels = data.draw(
            st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(
                lambda ls: 0 < sum(ls) < len(ls)
            )
        )
        scores = data.draw(
            st.lists(st.floats(0, 1, allow_nan=False), min_size=n, max_size=n)
        )
        forward = roc_auc(scores, labels)
        flipped = roc_auc(scores, [1 - t for t in labels])
        assert forward + flipped == pytest.approx(1.0, abs=1e-9)


class TestEvaluateModel:
    def test_constant_half_model_on_balanced_set(self, make_dataset):
        import torch

        from defectlab.classifier import ModelConfig, build_model
        from defectlab.metrics import evaluate_model

        manifest = make_dataset(train=8, validation=4, test=8)
        model = build_model(
            ModelConfig(backbone="tiny_cnn", head_widths=(8, 4), input_side=32),
            rng_seed=0,
        )
        with torch.no_grad():  # zero the output layer: p = 0.5 everywhere
            model.head[4].weight.zero_()
            model.head[4].bias.zero_()
        report = evaluate_model(model, manifest.split_samples("test"),
                                root=manifest.source_root)
        assert report.accuracy == 0.5  # ties predict class 1 on a balanced set
        assert report.auc == 0.5

    def test_empty_samples_rejected(self):
        from defectlab.classifier import ModelConfig, build_model
        from defectlab.metrics import evaluate_model

        model = build_model(
            ModelConfig(backbone="tiny_cnn", head_widths=(8, 4), input_side=32),
            rng_seed=0,
        )
        with pytest.raises(ShapeError):
            evaluate_model(model, [])


class TestMetricRanges:
    @settings(max_examples=60, deadline=None)
    @given(data=st.data())
    def test_all_metrics_within_unit_interval(self, data):
        tn = data.draw(st.integers(0, 50))
        fp = data.draw(st.integers(0, 50))
        fn = data.draw(st.integers(0, 50))
        tp = data.draw(st.integers(0, 50))
        if tn + fp + fn + tp == 0:
            tp = 1
        report = summarize(ConfusionMatrix(tn, fp, fn, tp))
        for value in (report.accuracy, report.precision_0, report.recall_0,
                      report.f1_0, report.precision_1, report.recall_1, report.f1_1):
            assert 0.0 <= value <= 1.0
            assert math.isfinite(value)
