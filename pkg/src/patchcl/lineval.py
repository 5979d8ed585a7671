"""Linear-probe evaluation: balanced label subsampling, stratified folds,
frozen-feature linear training, and imbalance-aware metrics.

The protocol trains one linear classifier per fold (each on the complement of
its fold), scores every classifier on the full test set, and reports the
arithmetic mean of the per-classifier macro-F1 and balanced accuracy. Metric
values are stored as fractions and rendered x100.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch.nn import functional as F

from .config import EvalConfig, EvalTransform
from .errors import DataError
from .model import ConvEncoder, LinearClassifier, encode_images
from .trainer import OptimizerState, sgd_step

_STREAM_SUBSAMPLE = 20
_STREAM_FOLDS = 21
_STREAM_LINEAR = 22


# ---------------------------------------------------------------------------
# Label subsampling and fold construction
# ---------------------------------------------------------------------------


def balanced_subsample(labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Indices of a class-balanced subset totalling round(fraction * n) items.

    Every class starts from an equal quota of floor(target / K); whatever a
    small class cannot fill (plus any division remainder) is handed back
    round-robin to the classes that still have spare items. fraction = 1.0
    returns every index.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if not 0.0 < fraction <= 1.0:
        raise DataError(f"fraction {fraction} outside (0, 1]")
    target = int(round(fraction * n))
    if target <= 0:
        raise DataError(f"fraction {fraction} of {n} labels selects nothing")
    classes = np.unique(labels)
    sizes = {int(c): int((labels == c).sum()) for c in classes}
    take = {int(c): min(target // len(classes), sizes[int(c)]) for c in classes}
    leftover = target - sum(take.values())
    while leftover > 0:
        progressed = False
        for c in sorted(take):
            if leftover == 0:
                break
            if take[c] < sizes[c]:
                take[c] += 1
                leftover -= 1
                progressed = True
        if not progressed:
            break
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_SUBSAMPLE,))
    )
    chosen = []
    for c in sorted(take):
        members = np.flatnonzero(labels == c)
        chosen.append(rng.permutation(members)[: take[c]])
    return np.sort(np.concatenate(chosen))


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    """Disjoint index folds with per-class counts differing by at most one.

    Classes smaller than the fold count cannot appear in every fold; they are
    still spread round-robin, with a warning.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if folds < 2:
        raise DataError("need at least 2 folds")
    if n < folds:
        raise DataError(f"cannot split {n} items into {folds} folds")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_FOLDS,))
    )
    assignments: list[list[int]] = [[] for _ in range(folds)]
    cursor = 0
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        if len(members) < folds:
            warnings.warn(
                f"class {int(c)} has {len(members)} items for {folds} folds; "
                "it cannot be represented in every fold",
                stacklevel=2,
            )
        for offset, idx in enumerate(members):
            assignments[(cursor + offset) % folds].append(int(idx))
        cursor += len(members)
    return [np.sort(np.array(a, dtype=np.int64)) for a in assignments]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricSummary:
    precision: np.ndarray  # per class, fraction
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_f1: float
    balanced_accuracy: float
    excluded_classes: tuple[int, ...]


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise DataError("label and prediction lengths differ")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (y_true, y_pred), 1)
    return matrix


def classification_metrics(matrix: np.ndarray) -> MetricSummary:
    """Per-class precision/recall/F1 plus macro-F1 and balanced accuracy.

    Classes with zero support (empty rows) are excluded from both means and
    reported in ``excluded_classes``.
    """
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DataError(f"confusion matrix must be square, got {matrix.shape}")
    if (matrix < 0).any():
        raise DataError("confusion matrix entries must be nonnegative")
    total = matrix.sum()
    if total == 0:
        raise DataError("confusion matrix holds no samples")
    diag = np.diag(matrix).astype(np.float64)
    support = matrix.sum(axis=1)
    predicted = matrix.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, diag / support, 0.0)
        precision = np.where(predicted > 0, diag / predicted, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)
    present = support > 0
    excluded = tuple(int(c) for c in np.flatnonzero(~present))
    return MetricSummary(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        macro_f1=float(f1[present].mean()),
        balanced_accuracy=float(recall[present].mean()),
        excluded_classes=excluded,
    )


# ---------------------------------------------------------------------------
# Linear training and evaluation
# ---------------------------------------------------------------------------


def train_linear(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    config: EvalConfig,
    batch_size: int,
    seed: int,
) -> list[LinearClassifier]:
    """One zero-initialized linear classifier per fold, trained on its complement."""
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) != len(labels):
        raise DataError("feature and label counts differ")
    folds = stratified_folds(labels, config.folds, seed)
    classifiers = []
    for fold_idx, holdout in enumerate(folds):
        mask = np.ones(len(labels), dtype=bool)
        mask[holdout] = False
        train_idx = np.flatnonzero(mask)
        clf = LinearClassifier(features.shape[1], num_classes)
        with torch.no_grad():
            clf.linear.weight.zero_()
            clf.linear.bias.zero_()
        params = list(clf.parameters())
        state = OptimizerState.for_params(params)
        x_all = torch.from_numpy(features)
        y_all = torch.from_numpy(labels)
        for epoch in range(config.epochs):
            rng = np.random.default_rng(
                np.random.SeedSequence(
                    entropy=seed, spawn_key=(_STREAM_LINEAR, fold_idx, epoch)
                )
            )
            order = train_idx[rng.permutation(len(train_idx))]
            for start in range(0, len(order), batch_size):
                batch = order[start : start + batch_size]
                logits = clf(x_all[batch])
                loss = F.cross_entropy(logits, y_all[batch])
                for p in params:
                    p.grad = None
                loss.backward()
                grads = [p.grad for p in params]
                sgd_step(params, grads, state, config.lr, config.momentum, config.weight_decay)
        clf.eval()
        classifiers.append(clf)
    return classifiers


def predict(classifier: LinearClassifier, features: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        logits = classifier(torch.from_numpy(np.asarray(features, dtype=np.float32)))
    return logits.argmax(dim=1).numpy()


@dataclass
class EvalReport:
    """Per-fold confusion matrices and metrics plus fold-averaged values."""

    checkpoint_id: str
    fraction: float
    seed: int
    num_classes: int
    fold_matrices: list[np.ndarray]
    fold_metrics: list[MetricSummary]
    macro_f1: float = field(init=False)
    balanced_accuracy: float = field(init=False)

    def __post_init__(self) -> None:
        self.macro_f1 = float(np.mean([m.macro_f1 for m in self.fold_metrics]))
        self.balanced_accuracy = float(
            np.mean([m.balanced_accuracy for m in self.fold_metrics])
        )


def evaluate_classifiers(
    classifiers: Sequence[LinearClassifier],
    test_features: np.ndarray,
    test_labels: np.ndarray,
    num_classes: int,
    checkpoint_id: str = "",
    fraction: float = 1.0,
    seed: int = 0,
) -> EvalReport:
    """Score every fold classifier on the full test set and average metrics."""
    matrices, summaries = [], []
    for clf in classifiers:
        preds = predict(clf, test_features)
        matrix = confusion_matrix(test_labels, preds, num_classes)
        matrices.append(matrix)
        summaries.append(classification_metrics(matrix))
    return EvalReport(
        checkpoint_id=checkpoint_id,
        fraction=fraction,
        seed=seed,
        num_classes=num_classes,
        fold_matrices=matrices,
        fold_metrics=summaries,
    )


# ---------------------------------------------------------------------------
# Feature extraction with on-disk cache
# ---------------------------------------------------------------------------


def extract_features(
    encoder: ConvEncoder,
    images: Sequence[np.ndarray],
    transform: EvalTransform,
    batch_size: int = 256,
) -> np.ndarray:
    from .augment import eval_view

    prepared = np.stack([eval_view(img, transform) for img in images])
    return encode_images(encoder, prepared, batch_size=batch_size)


def cached_features(
    cache_path: str | Path,
    encoder: ConvEncoder,
    images: Sequence[np.ndarray],
    transform: EvalTransform,
) -> np.ndarray:
    """Features cached per (checkpoint, transform) so fractions reuse one pass."""
    cache_path = Path(cache_path)
    if cache_path.exists():
        return np.load(cache_path)["features"]
    feats = extract_features(encoder, images, transform)
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(cache_path, features=feats)
    return feats


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------


def report_text(report: EvalReport) -> str:
    lines = [
        f"checkpoint: {report.checkpoint_id}",
        f"label fraction: {report.fraction:g} ({report.fraction * 100:g}%)",
        f"seed: {report.seed}",
        f"folds: {len(report.fold_metrics)}",
        "",
        f"macro-F1 (fold mean): {report.macro_f1 * 100:.2f}",
        f"balanced accuracy (fold mean): {report.balanced_accuracy * 100:.2f}",
        "",
    ]
    for idx, (matrix, m) in enumerate(zip(report.fold_matrices, report.fold_metrics)):
        lines.append(f"fold {idx}: macro-F1 {m.macro_f1 * 100:.2f}  BA {m.balanced_accuracy * 100:.2f}")
        if m.excluded_classes:
            lines.append(
                f"  note: classes {list(m.excluded_classes)} have zero support and were "
                "excluded from metric means"
            )
        lines.append("  confusion (rows = true class):")
        for row in matrix:
            lines.append("    " + " ".join(f"{v:6d}" for v in row))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, text_path: str | Path, csv_path: str | Path) -> None:
    Path(text_path).parent.mkdir(parents=True, exist_ok=True)
    Path(text_path).write_text(report_text(report))
    with Path(csv_path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "macro_f1", "balanced_accuracy", "excluded_classes"])
        for idx, m in enumerate(report.fold_metrics):
            writer.writerow(
                [
                    idx,
                    f"{m.macro_f1 * 100:.4f}",
                    f"{m.balanced_accuracy * 100:.4f}",
                    ";".join(str(c) for c in m.excluded_classes),
                ]
            )
        writer.writerow(
            [
                "mean",
                f"{report.macro_f1 * 100:.4f}",
                f"{report.balanced_accuracy * 100:.4f}",
                "",
            ]
        )
