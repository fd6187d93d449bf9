"""Confusion-matrix metrics, the malignant-vs-benign regrouping, and the
inference throughput benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import ClassTaxonomy, Sample, default_taxonomy
from .errors import InvalidArgumentError
from .tensor import no_grad


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [num_classes, num_classes], rows = true, cols = predicted

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(preds: Sequence[int], labels: Sequence[int],
                     num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise InvalidArgumentError(
            f"preds and labels must be equal-length vectors, got {preds.shape} and {labels.shape}")
    for name, v in (("preds", preds), ("labels", labels)):
        if v.size and (v.min() < 0 or v.max() >= num_classes):
            raise InvalidArgumentError(
                f"{name} contain values outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def bma(cm: ConfusionMatrix) -> float:
    """Mean per-class recall over classes with at least one true sample."""
    row_sums = cm.counts.sum(axis=1)
    present = row_sums > 0
    if not present.any():
        raise InvalidArgumentError("confusion matrix has no samples")
    recalls = np.diag(cm.counts)[present] / row_sums[present]
    return float(recalls.mean())


@dataclass
class WeightedPrf:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray


def weighted_prf(cm: ConfusionMatrix) -> WeightedPrf:
    """Support-weighted precision/recall/F1; empty predicted columns score 0."""
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise InvalidArgumentError("confusion matrix has no samples")
    diag = np.diag(counts)
    row_sums = counts.sum(axis=1)
    col_sums = counts.sum(axis=0)
    precision = np.divide(diag, col_sums, out=np.zeros_like(diag), where=col_sums > 0)
    recall = np.divide(diag, row_sums, out=np.zeros_like(diag), where=row_sums > 0)
    pr_sum = precision + recall
    f1 = np.divide(2 * precision * recall, pr_sum, out=np.zeros_like(diag), where=pr_sum > 0)
    support = row_sums / total
    return WeightedPrf(
        accuracy=float(diag.sum() / total),
        precision=float((support * precision).sum()),
        recall=float((support * recall).sum()),
        f1=float((support * f1).sum()),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
    )


@dataclass
class BinaryCancerReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray  # [[TN, FP], [FN, TP]], rows true (benign, malignant)


def binary_cancer_report(cm: ConfusionMatrix, taxonomy: ClassTaxonomy) -> BinaryCancerReport:
    """Collapse classes into malignant-vs-benign; positive class = malignant."""
    taxonomy.validate()
    mal = taxonomy.malignant_mask()
    if mal.size != cm.num_classes:
        raise InvalidArgumentError(
            f"taxonomy has {mal.size} classes, matrix has {cm.num_classes}")
    c = cm.counts
    tp = int(c[np.ix_(mal, mal)].sum())
    fn = int(c[np.ix_(mal, ~mal)].sum())
    fp = int(c[np.ix_(~mal, mal)].sum())
    tn = int(c[np.ix_(~mal, ~mal)].sum())
    total = tp + fn + fp + tn
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return BinaryCancerReport(
        accuracy=(tp + tn) / total if total else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=np.array([[tn, fp], [fn, tp]], dtype=np.int64),
    )


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    bma: float
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    binary: Optional[BinaryCancerReport]
    class_names: Tuple[str, ...]


def build_report(preds: Sequence[int], labels: Sequence[int], num_classes: int,
                 taxonomy: Optional[ClassTaxonomy] = None) -> MetricsReport:
    cm = confusion_matrix(preds, labels, num_classes)
    prf = weighted_prf(cm)
    # weighted recall is support-weighted per-class recall, which is accuracy
    assert abs(prf.recall - prf.accuracy) < 1e-12, "weighted recall must equal accuracy"
    binary = None
    names = tuple(f"class_{i}" for i in range(num_classes))
    if taxonomy is not None and len(taxonomy.names) == num_classes:
        binary = binary_cancer_report(cm, taxonomy)
        names = taxonomy.names
    return MetricsReport(
        confusion=cm,
        bma=bma(cm),
        accuracy=prf.accuracy,
        weighted_precision=prf.precision,
        weighted_recall=prf.recall,
        weighted_f1=prf.f1,
        per_class_precision=prf.per_class_precision,
        per_class_recall=prf.per_class_recall,
        per_class_f1=prf.per_class_f1,
        binary=binary,
        class_names=names,
    )


def report_to_csv(report: MetricsReport, path) -> None:
    """Long-form metric,value rows followed by the confusion matrix block."""
    lines = ["metric,value"]
    scalars = [
        ("bma", report.bma),
        ("accuracy", report.accuracy),
        ("weighted_precision", report.weighted_precision),
        ("weighted_recall", report.weighted_recall),
        ("weighted_f1", report.weighted_f1),
    ]
    if report.binary is not None:
        scalars += [
            ("binary_accuracy", report.binary.accuracy),
            ("binary_precision", report.binary.precision),
            ("binary_recall", report.binary.recall),
            ("binary_f1", report.binary.f1),
        ]
    for name, value in scalars:
        lines.append(f"{name},{value:.6f}")
    for i, cls in enumerate(report.class_names):
        safe = cls.replace(" ", "_")
        lines.append(f"precision_{safe},{report.per_class_precision[i]:.6f}")
        lines.append(f"recall_{safe},{report.per_class_recall[i]:.6f}")
        lines.append(f"f1_{safe},{report.per_class_f1[i]:.6f}")
    lines.append("confusion_matrix")
    for row in report.confusion.counts:
        lines.append(",".join(str(int(v)) for v in row))
    if report.binary is not None:
        lines.append("binary_confusion_matrix")
        for row in report.binary.confusion:
            lines.append(",".join(str(int(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class BenchReport:
    items_per_second: float
    total_samples: int
    total_seconds: float
    repetitions: int
    warmup_batches: int
    param_count: int
    threads: Optional[int] = None


def bench_throughput(model, samples, batch_size: int, warmup_batches: int = 1,
                     reps: int = 5, threads: Optional[int] = None) -> BenchReport:
    """Median items/s over ``reps`` timed forward-only passes.

    Samples are materialized into batches before the timed region, so data
    preparation is excluded; the reported seconds are the median rep's, so
    items_per_second == total_samples / total_seconds holds exactly.
    """
    from .vit import forward, param_count

    if isinstance(samples, np.ndarray):
        images = samples.astype(np.float32, copy=False)
    else:
        if len(samples) == 0:
            raise InvalidArgumentError("benchmark needs at least one sample")
        images = np.stack([s.image for s in samples])
    n = images.shape[0]
    if n == 0:
        raise InvalidArgumentError("benchmark needs at least one sample")
    if warmup_batches < 1:
        raise InvalidArgumentError(f"warmup_batches must be >= 1, got {warmup_batches}")
    if reps < 1:
        raise InvalidArgumentError(f"reps must be >= 1, got {reps}")

    batches = [images[i:i + batch_size] for i in range(0, n, batch_size)]
    with no_grad():
        for b in batches[:warmup_batches]:
            forward(model, b, "eval")
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            for b in batches:
                forward(model, b, "eval")
            times.append(time.perf_counter() - t0)
    median_seconds = sorted(times)[(len(times) - 1) // 2]
    return BenchReport(
        items_per_second=n / median_seconds,
        total_samples=n,
        total_seconds=median_seconds,
        repetitions=reps,
        warmup_batches=warmup_batches,
        param_count=param_count(model),
        threads=threads,
    )


def bench_to_csv(report: BenchReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("items_per_second,total_samples,total_seconds,repetitions,"
                 "warmup_batches,param_count,threads\n")
        threads = "" if report.threads is None else str(report.threads)
        fh.write(f"{report.items_per_second:.4f},{report.total_samples},"
                 f"{report.total_seconds:.6f},{report.repetitions},"
                 f"{report.warmup_batches},{report.param_count},{threads}\n")
