#!/usr/bin/env python3
"""
Evaluation backbone: stratified folds, confusion counts, the TPR/TNR/FPR/FNR,
precision, F-measure and weighted F-measure metrics, and ROC AUC.

Malware is the positive class throughout. Cross-validation pools the fold
confusion counts (micro aggregation) and computes AUC on the pooled
out-of-fold scores.
"""

import time
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from ingest import Dataset, Label
from logging_conf import get_logger, log_fold_result

logger = get_logger('dldroid.evalcore')

DEFAULT_THRESHOLD = 0.5

REPORT_COLUMNS = ('TPR', 'TNR', 'FPR', 'FNR', 'Precision', 'Recall', 'Accuracy', 'w-FM', 'AUC')


class EvalError(Exception):
    """Base exception for evaluation errors."""
    pass


class LengthMismatchError(EvalError):
    pass


class ClassTooSmallError(EvalError):
    def __init__(self, label: Label, count: int, k: int):
        super().__init__(f"Class {label.name.lower()} has {count} samples; {k}-fold needs at least 2")
        self.label = label
        self.k = k


class EmptyEvalSetError(EvalError):
    pass


class SingleClassEvalSetError(EvalError):
    pass


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: Tuple[int, ...]

    def test_indices(self, fold: int) -> List[int]:
        return [i for i, f in enumerate(self.assignments) if f == fold]

    def train_indices(self, fold: int) -> List[int]:
        return [i for i, f in enumerate(self.assignments) if f != fold]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: 'ConfusionCounts') -> 'ConfusionCounts':
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    @property
    def n_malware(self) -> int:
        return self.tp + self.fn

    @property
    def n_benign(self) -> int:
        return self.tn + self.fp

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class EvalReport:
    tpr: float
    tnr: float
    fpr: float
    fnr: float
    precision: float
    recall: float
    accuracy: float
    fm_malware: float
    fm_benign: float
    weighted_fm: float
    auc: Optional[float] = None
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)
    # names of metrics whose denominator was zero (reported as 0.0)
    flags: Tuple[str, ...] = ()

    def values(self) -> Tuple[float, ...]:
        """Metric values in report column order (AUC as NaN when absent)."""
        auc = float('nan') if self.auc is None else self.auc
        return (self.tpr, self.tnr, self.fpr, self.fnr, self.precision, self.recall,
                self.accuracy, self.weighted_fm, auc)

    def formatted(self) -> List[str]:
        return ['-' if np.isnan(v) else f"{v:.4f}" for v in self.values()]


class ScoringModel(Protocol):
    def predict_scores(self, matrix: np.ndarray) -> np.ndarray:
        ...


class Learner(Protocol):
    name: str

    def fit(self, train: Dataset, seed: int) -> ScoringModel:
        ...


def stratified_k_fold(ds: Dataset, k: int, seed: int) -> FoldPlan:
    """
    Assign every sample to one of ``k`` folds, class by class.

    Each class is shuffled with a seeded generator and dealt round-robin; the
    second class continues where the first stopped, so per-class fold sizes
    differ by at most one and fold totals stay balanced.
    """
    if k < 2:
        raise EvalError(f"k must be at least 2, got {k}")
    labels = ds.labels()
    rng = np.random.default_rng(seed)
    assignments = np.full(len(labels), -1, dtype=np.int64)

    next_fold = 0
    for label in (Label.MALWARE, Label.BENIGN):
        members = np.flatnonzero(labels == int(label))
        if len(members) < 2:
            raise ClassTooSmallError(label, len(members), k)
        if len(members) < k:
            logger.warning(f"Class {label.name.lower()} has {len(members)} samples for {k} folds")
        shuffled = rng.permutation(members)
        folds = (next_fold + np.arange(len(shuffled))) % k
        assignments[shuffled] = folds
        next_fold = (next_fold + len(shuffled)) % k

    return FoldPlan(k, tuple(int(f) for f in assignments))


def stratified_holdout(labels, fraction: float, seed: int) -> Tuple[List[int], List[int]]:
    """Split positions into (train, holdout) keeping each class's share."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    holdout: List[int] = []
    for label in (Label.MALWARE, Label.BENIGN):
        members = rng.permutation(np.flatnonzero(labels == int(label)))
        take = min(int(round(fraction * len(members))), max(len(members) - 1, 0))
        holdout.extend(int(i) for i in members[:take])
    held = set(holdout)
    train = [i for i in range(len(labels)) if i not in held]
    return train, sorted(holdout)


def confusion(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> ConfusionCounts:
    """Predict malware iff score >= threshold and count outcomes."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise LengthMismatchError(f"{scores.shape[0]} scores vs {labels.shape[0]} labels")
    predicted = scores >= threshold
    actual = labels == int(Label.MALWARE)
    return ConfusionCounts(
        tp=int(np.sum(predicted & actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fp=int(np.sum(predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
    )


def _ratio(numerator: float, denominator: float, name: str, flags: List[str]) -> float:
    if denominator == 0:
        flags.append(name)
        return 0.0
    return numerator / denominator


def f_measure(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def weighted_fm(fm_malware: float, n_malware: int, fm_benign: float, n_benign: int) -> float:
    """Class-size weighted average of the two per-class F-measures."""
    total = n_malware + n_benign
    if total == 0:
        raise EmptyEvalSetError("Weighted F-measure of an empty evaluation set")
    return (fm_malware * n_malware + fm_benign * n_benign) / total


def metrics(c: ConfusionCounts, auc: Optional[float] = None) -> EvalReport:
    """Every threshold metric derived from one confusion matrix."""
    if c.total == 0:
        raise EmptyEvalSetError("No samples were evaluated")
    flags: List[str] = []
    tpr = _ratio(c.tp, c.tp + c.fn, 'tpr', flags)
    tnr = _ratio(c.tn, c.tn + c.fp, 'tnr', flags)
    fpr = _ratio(c.fp, c.fp + c.tn, 'fpr', flags)
    fnr = _ratio(c.fn, c.fn + c.tp, 'fnr', flags)
    precision = _ratio(c.tp, c.tp + c.fp, 'precision', flags)
    # benign as the positive class
    precision_benign = _ratio(c.tn, c.tn + c.fn, 'precision_benign', flags)
    fm_malware = f_measure(precision, tpr)
    fm_benign = f_measure(precision_benign, tnr)
    if flags:
        logger.debug(f"Zero denominators for: {', '.join(flags)}")
    return EvalReport(
        tpr=tpr, tnr=tnr, fpr=fpr, fnr=fnr,
        precision=precision, recall=tpr,
        accuracy=(c.tp + c.tn) / c.total,
        fm_malware=fm_malware, fm_benign=fm_benign,
        weighted_fm=weighted_fm(fm_malware, c.n_malware, fm_benign, c.n_benign),
        auc=auc, counts=c, flags=tuple(flags),
    )


def _class_split(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise LengthMismatchError(f"{scores.shape[0]} scores vs {labels.shape[0]} labels")
    is_malware = labels == int(Label.MALWARE)
    if is_malware.all() or not is_malware.any():
        raise SingleClassEvalSetError("AUC needs both classes in the evaluation set")
    return scores, is_malware


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with tied scores counted as half a win."""
    scores, is_malware = _class_split(scores, labels)
    n_pos = int(is_malware.sum())
    n_neg = len(scores) - n_pos

    unique, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    # average 1-based rank of each distinct score
    starts = np.cumsum(counts) - counts
    average_rank = starts + (counts + 1) / 2.0
    ranks = average_rank[inverse.reshape(-1)]
    u_statistic = ranks[is_malware].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def roc_curve(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    """ROC points (fpr, tpr) over every distinct threshold, from (0, 0) to (1, 1)."""
    scores, is_malware = _class_split(scores, labels)
    order = np.argsort(-scores, kind='mergesort')
    sorted_scores = scores[order]
    sorted_pos = is_malware[order]

    # last index of each group of equal scores
    boundaries = np.flatnonzero(np.diff(sorted_scores)) if len(scores) > 1 else np.array([], dtype=np.int64)
    cut = np.concatenate([boundaries, [len(scores) - 1]])
    tps = np.cumsum(sorted_pos)[cut]
    fps = np.cumsum(~sorted_pos)[cut]
    tpr = np.concatenate([[0.0], tps / is_malware.sum()])
    fpr = np.concatenate([[0.0], fps / (~is_malware).sum()])
    return fpr, tpr


def trapezoid_auc(fpr, tpr) -> float:
    fpr = np.asarray(fpr, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass(frozen=True)
class CrossValidation:
    report: EvalReport
    fold_counts: Tuple[ConfusionCounts, ...]
    out_of_fold_scores: Tuple[float, ...]
    seconds: float


def run_cross_validation(learner: Learner, ds: Dataset, k: int, seed: int,
                         threshold: float = DEFAULT_THRESHOLD) -> CrossValidation:
    """Cross-validate ``learner`` keeping fold counts and out-of-fold scores."""
    started = time.perf_counter()
    plan = stratified_k_fold(ds, k, seed)
    matrix = ds.matrix()
    labels = ds.labels()
    out_of_fold = np.zeros(len(ds), dtype=np.float64)
    fold_counts: List[ConfusionCounts] = []

    for fold in range(k):
        test_idx = plan.test_indices(fold)
        if not test_idx:
            continue
        model = learner.fit(ds.subset(plan.train_indices(fold)), seed + fold)
        scores = np.asarray(model.predict_scores(matrix[test_idx]), dtype=np.float64)
        out_of_fold[test_idx] = scores
        counts = confusion(scores, labels[test_idx], threshold)
        log_fold_result(fold, counts)
        fold_counts.append(counts)

    pooled = sum(fold_counts, ConfusionCounts())
    auc = roc_auc(out_of_fold, labels) if ds.has_both_classes() else None
    report = metrics(pooled, auc)
    return CrossValidation(report, tuple(fold_counts), tuple(out_of_fold.tolist()),
                           time.perf_counter() - started)


def cross_validate(learner: Learner, ds: Dataset, k: int, seed: int,
                   threshold: float = DEFAULT_THRESHOLD) -> EvalReport:
    """Pooled k-fold evaluation of ``learner`` on ``ds``."""
    return run_cross_validation(learner, ds, k, seed, threshold).report


def evaluate_model(model: ScoringModel, ds: Dataset, threshold: float = DEFAULT_THRESHOLD) -> EvalReport:
    """Single hold-out evaluation of an already trained model."""
    scores = np.asarray(model.predict_scores(ds.matrix()), dtype=np.float64)
    auc = roc_auc(scores, ds.labels()) if ds.has_both_classes() else None
    return metrics(confusion(scores, ds.labels(), threshold), auc)


def format_runtime(seconds: float) -> str:
    """``mm:ss`` as in the running-time columns of the grid tables."""
    total = int(round(seconds))
    return f"{total // 60:02d}:{total % 60:02d}"


def report_header(extra: Sequence[str] = ()) -> List[str]:
    return list(extra) + list(REPORT_COLUMNS)
