import numpy as np
import pytest

from sdvt.data import default_taxonomy
from sdvt.errors import InvalidArgumentError
from sdvt.metrics import (BenchReport, bench_throughput, binary_cancer_report, bma,
                          build_report, confusion_matrix, report_to_csv, weighted_prf)
from sdvt.vit import ViTConfig, build


class TestConfusion:
    def test_perfect_predictions_diagonal(self):
        labels = [0, 0, 1, 2, 2, 2]
        cm = confusion_matrix(labels, labels, 3)
        assert np.all(cm.counts == np.diag([2, 1, 3]))

    def test_hand_tally(self):
        cm = confusion_matrix([0, 0, 1], [0, 1, 1], 2)
        np.testing.assert_array_equal(cm.counts, [[1, 0], [1, 1]])

    def test_total_conservation(self):
        rng = np.random.default_rng(0)
        preds = rng.integers(0, 8, 500)
        labels = rng.integers(0, 8, 500)
        assert confusion_matrix(preds, labels, 8).total == 500

    def test_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            confusion_matrix([0, 9], [0, 1], 8)


class TestBma:
    def test_perfect_diagonal(self):
        cm = confusion_matrix([0, 1, 2], [0, 1, 2], 3)
        assert bma(cm) == 1.0

    def test_hand_computed(self):
        from sdvt.metrics import ConfusionMatrix
        cm = ConfusionMatrix(np.array([[3, 1], [1, 1]], dtype=np.int64))
        assert bma(cm) == pytest.approx(0.625)

    def test_row_scale_invariance(self):
        from sdvt.metrics import ConfusionMatrix
        base = np.array([[3, 1], [1, 1]], dtype=np.int64)
        scaled = base.copy()
        scaled[0] *= 7
        assert bma(ConfusionMatrix(base)) == pytest.approx(bma(ConfusionMatrix(scaled)))

    def test_all_zero_rejected(self):
        from sdvt.metrics import ConfusionMatrix
        with pytest.raises(InvalidArgumentError):
            bma(ConfusionMatrix(np.zeros((3, 3), dtype=np.int64)))

    def test_zero_support_class_excluded(self):
        from sdvt.metrics import ConfusionMatrix
        cm = ConfusionMatrix(np.array([[2, 0, 0], [0, 1, 0], [0, 0, 0]], dtype=np.int64))
        assert bma(cm) == 1.0


class TestWeightedPrf:
    def test_perfect(self):
        cm = confusion_matrix([0, 1, 2], [0, 1, 2], 3)
        prf = weighted_prf(cm)
        assert prf.accuracy == prf.precision == prf.recall == prf.f1 == 1.0

    def test_hand_case_and_identity(self):
        from sdvt.metrics import ConfusionMatrix
        cm = ConfusionMatrix(np.array([[3, 1], [1, 1]], dtype=np.int64))
        prf = weighted_prf(cm)
        assert prf.accuracy == pytest.approx(4 / 6)
        assert prf.recall == pytest.approx(prf.accuracy)

    def test_weighted_recall_equals_accuracy_200_random(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            counts = rng.integers(0, 20, size=(8, 8))
            if counts.sum() == 0:
                continue
            from sdvt.metrics import ConfusionMatrix
            prf = weighted_prf(ConfusionMatrix(counts.astype(np.int64)))
            assert prf.recall == pytest.approx(prf.accuracy, abs=1e-12)

    def test_empty_predicted_column_precision_zero(self):
        from sdvt.metrics import ConfusionMatrix
        cm = ConfusionMatrix(np.array([[0, 2], [0, 3]], dtype=np.int64))
        prf = weighted_prf(cm)
        assert prf.per_class_precision[0] == 0.0


class TestBinaryCancer:
    def test_diagonal_is_perfect(self):
        cm = confusion_matrix(list(range(8)), list(range(8)), 8)
        rep = binary_cancer_report(cm, default_taxonomy())
        assert rep.accuracy == 1.0 and rep.recall == 1.0

    def test_cancer_to_cancer_confusion_is_true_positive(self):
        # a Melanoma (0) predicted as Basal cell carcinoma (2): still malignant
        cm = confusion_matrix([2], [0], 8)
        rep = binary_cancer_report(cm, default_taxonomy())
        assert rep.confusion[1, 1] == 1  # TP
        assert rep.accuracy == 1.0

    def test_hand_tally(self):
        # 10 MEL->MEL, 2 MEL->Nevus, 5 Nevus->Nevus, 1 Nevus->BCC
        preds = [0] * 10 + [1] * 2 + [1] * 5 + [2] * 1
        labels = [0] * 12 + [1] * 6
        cm = confusion_matrix(preds, labels, 8)
        rep = binary_cancer_report(cm, default_taxonomy())
        np.testing.assert_array_equal(rep.confusion, [[5, 1], [2, 10]])
        assert rep.precision == pytest.approx(10 / 11)
        assert rep.recall == pytest.approx(10 / 12)

    def test_counts_conserve(self):
        rng = np.random.default_rng(2)
        preds = rng.integers(0, 8, 300)
        labels = rng.integers(0, 8, 300)
        cm = confusion_matrix(preds, labels, 8)
        rep = binary_cancer_report(cm, default_taxonomy())
        mal = default_taxonomy().malignant_mask()
        true_mal = sum(1 for l in labels if mal[l])
        assert rep.confusion[1].sum() == true_mal
        assert rep.confusion[0].sum() == 300 - true_mal


def test_build_report_cross_checks(tmp_path):
    rng = np.random.default_rng(3)
    preds = rng.integers(0, 8, 400)
    labels = rng.integers(0, 8, 400)
    report = build_report(preds, labels, 8, default_taxonomy())
    # bma equals the unweighted mean of per-class recalls
    present = report.confusion.counts.sum(axis=1) > 0
    assert report.bma == pytest.approx(report.per_class_recall[present].mean())
    report_to_csv(report, tmp_path / "metrics.csv")
    text = (tmp_path / "metrics.csv").read_text()
    assert text.startswith("metric,value\n")
    assert "confusion_matrix" in text
    assert "binary_confusion_matrix" in text
    assert "precision_Melanoma" in text
    body = text.split("\nconfusion_matrix\n")[1].split("binary_confusion_matrix")[0]
    rows = [r for r in body.strip().split("\n")]
    assert len(rows) == 8 and all(len(r.split(",")) == 8 for r in rows)


class TestBench:
    def test_basic_contract(self):
        cfg = ViTConfig(image_size=8, patch_size=4, hidden_dim=16, num_layers=2,
                        num_heads=2, mlp_dim=32, seed=0)
        model = build(cfg)
        samples = np.random.default_rng(0).random((16, 3, 8, 8)).astype(np.float32)
        rep = bench_throughput(model, samples, batch_size=8, warmup_batches=1, reps=3)
        assert rep.items_per_second > 0 and np.isfinite(rep.items_per_second)
        assert rep.total_samples == 16
        assert rep.items_per_second == pytest.approx(rep.total_samples / rep.total_seconds)
        assert rep.param_count > 0

    def test_validation(self):
        cfg = ViTConfig(image_size=8, patch_size=4, hidden_dim=16, num_layers=1,
                        num_heads=2, mlp_dim=32, seed=0)
        model = build(cfg)
        with pytest.raises(InvalidArgumentError):
            bench_throughput(model, [], batch_size=4)
        samples = np.zeros((4, 3, 8, 8), dtype=np.float32)
        with pytest.raises(InvalidArgumentError):
            bench_throughput(model, samples, batch_size=4, warmup_batches=0)
