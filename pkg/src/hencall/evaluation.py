"""Multi-label metrics, master-class confusion matrices, and data splits.

The headline metric is the sample-average F1: per-sample set-overlap F1
between predicted and true label sets, averaged over samples. Confusion
matrices are single-label and live at the master-class level, so
multi-label predictions are reduced to the argmax subclass first and then
mapped to the owning master class.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .labels import (
    MASTER_NAMES,
    NUM_MASTERS,
    NUM_SUBCLASSES,
    SUBCLASS_NAMES,
    SUBCLASS_TO_MASTER,
    LabelVector,
)


class EvaluationError(Exception):
    pass


class LengthMismatch(EvaluationError):
    pass


class TooFewSamplesPerClass(EvaluationError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    """A held-out test set plus k cross-validation folds over the rest."""

    test: tuple[int, ...]
    folds: tuple[tuple[int, ...], ...]
    seed: int

    def pool(self) -> tuple[int, ...]:
        return tuple(i for fold in self.folds for i in fold)

    def val_indices(self, fold: int) -> tuple[int, ...]:
        return self.folds[fold]

    def train_indices(self, fold: int) -> tuple[int, ...]:
        return tuple(i for f, members in enumerate(self.folds) if f != fold for i in members)


@dataclass(frozen=True)
class EvalReport:
    sample_f1: float
    per_class_f1: tuple[float, ...]          # 8 binary F1 values
    master_confusion: tuple[tuple[int, ...], ...]  # 4x4, rows = true
    master_precision: tuple[float, ...]
    master_recall: tuple[float, ...]
    split_description: str
    seed: int


def sample_f1(preds: Sequence[frozenset | set], truths: Sequence[frozenset | set]) -> float:
    """Mean per-sample 2|P∩T| / (|P|+|T|); two empty sets count as 1."""
    if len(preds) != len(truths):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(truths)} truths")
    if not preds:
        raise LengthMismatch("need at least one sample")
    total = 0.0
    for p, t in zip(preds, truths):
        p, t = set(p), set(t)
        if not p and not t:
            total += 1.0
        else:
            total += 2.0 * len(p & t) / (len(p) + len(t))
    return total / len(preds)


def per_class_f1(preds: Sequence[frozenset | set], truths: Sequence[frozenset | set]) -> np.ndarray:
    """Binary F1 per subclass from predicted/true label sets."""
    if len(preds) != len(truths):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(truths)} truths")
    out = np.zeros(NUM_SUBCLASSES)
    for c in range(NUM_SUBCLASSES):
        tp = sum(1 for p, t in zip(preds, truths) if c in p and c in t)
        fp = sum(1 for p, t in zip(preds, truths) if c in p and c not in t)
        fn = sum(1 for p, t in zip(preds, truths) if c not in p and c in t)
        out[c] = 2.0 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
    return out


def precision_recall_from_counts(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-wise precision and row-wise (true-label) recall of a
    confusion-count matrix; zero denominators yield 0 with a flag."""
    matrix = np.asarray(matrix, dtype=np.float64)
    col = matrix.sum(axis=0)
    row = matrix.sum(axis=1)
    diag = np.diag(matrix)
    flags = (col == 0) | (row == 0)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    return precision, recall, flags


def confusion_matrix(
    preds: Sequence[int],
    truths: Sequence[int],
    to_master: dict[int, int] = SUBCLASS_TO_MASTER,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Master-class confusion counts from single subclass labels.

    Rows index the true master class, columns the predicted one. Returns
    (counts, precision, recall, zero-denominator flags).
    """
    if len(preds) != len(truths):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(truths)} truths")
    counts = np.zeros((NUM_MASTERS, NUM_MASTERS), dtype=np.int64)
    for p, t in zip(preds, truths):
        counts[to_master[int(t)], to_master[int(p)]] += 1
    precision, recall, flags = precision_recall_from_counts(counts)
    return counts, precision, recall, flags


def _primary_labels(labels: Sequence[LabelVector]) -> list[int]:
    return [lab.primary() for lab in labels]


def make_split(
    n: int,
    labels: Sequence[LabelVector],
    test_frac: float = 0.2,
    k: int = 10,
    seed: int = 0,
) -> SplitPlan:
    """Stratified test draw plus k stratified folds over the remainder.

    Per class the test share stays within one sample of test_frac times
    the class count; the folds partition the pool.
    """
    if len(labels) != n:
        raise LengthMismatch(f"{len(labels)} labels for {n} samples")
    if n < 5 * k:
        raise TooFewSamplesPerClass(f"need at least {5 * k} samples for {k} folds")
    by_class: dict[int, list[int]] = {}
    for idx, primary in enumerate(_primary_labels(labels)):
        by_class.setdefault(primary, []).append(idx)
    for cls, members in by_class.items():
        if len(members) < k:
            raise TooFewSamplesPerClass(f"class {SUBCLASS_NAMES[cls]} has {len(members)} < {k} samples")

    rng = np.random.default_rng(seed)
    test: list[int] = []
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in sorted(by_class):
        members = np.array(by_class[cls])
        members = members[rng.permutation(len(members))]
        n_test = int(round(test_frac * len(members)))
        test.extend(members[:n_test].tolist())
        for offset, idx in enumerate(members[n_test:].tolist()):
            folds[offset % k].append(idx)
    return SplitPlan(
        test=tuple(sorted(test)),
        folds=tuple(tuple(sorted(f)) for f in folds),
        seed=seed,
    )


def evaluate_predictions(
    pred_sets: Sequence[frozenset | set],
    logits: np.ndarray,
    truths: Sequence[LabelVector],
    split_description: str = "",
    seed: int = 0,
) -> EvalReport:
    """Assemble the full report from multi-label predictions and logits."""
    truth_sets = [t.subclass_set() for t in truths]
    f1 = sample_f1(pred_sets, truth_sets)
    class_f1 = per_class_f1(pred_sets, truth_sets)
    argmax_preds = [int(np.argmax(z)) for z in np.asarray(logits)]
    argmax_truths = _primary_labels(truths)
    counts, precision, recall, _ = confusion_matrix(argmax_preds, argmax_truths)
    return EvalReport(
        sample_f1=f1,
        per_class_f1=tuple(class_f1.tolist()),
        master_confusion=tuple(tuple(int(v) for v in row) for row in counts),
        master_precision=tuple(precision.tolist()),
        master_recall=tuple(recall.tolist()),
        split_description=split_description,
        seed=seed,
    )


def format_report(report: EvalReport) -> str:
    lines = [
        f"sample_f1: {report.sample_f1!r}",
        f"seed: {report.seed}",
        f"split: {report.split_description}",
        "",
        "per_class_f1:",
    ]
    for name, value in zip(SUBCLASS_NAMES, report.per_class_f1):
        lines.append(f"  {name}: {value!r}")
    lines.append("")
    lines.append("master_confusion_rows_true:")
    header = "\t".join(("",) + MASTER_NAMES)
    lines.append(header)
    for name, row in zip(MASTER_NAMES, report.master_confusion):
        lines.append("\t".join([name] + [str(v) for v in row]))
    lines.append("")
    lines.append("master_precision_pct: " + "\t".join(str(round(100 * p)) for p in report.master_precision))
    lines.append("master_recall_pct: " + "\t".join(str(round(100 * r)) for r in report.master_recall))
    return "\n".join(lines) + "\n"


def write_report(path: str | Path, report: EvalReport) -> None:
    Path(path).write_text(format_report(report))
