#!/usr/bin/env python3
"""
Information-gain feature ranking and top-k projection.

All entropies are in bits. Ranking is computed once on the full dataset; ties
are broken by feature name so the selected top-k is reproducible.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ingest import Dataset, Label
from logging_conf import get_logger, log_operation_result, log_operation_start

logger = get_logger('dldroid.ranking')


class RankingError(Exception):
    """Base exception for ranking errors."""
    pass


class LengthMismatchError(RankingError):
    pass


class SingleClassDatasetError(RankingError):
    pass


class KTooLargeError(RankingError):
    pass


@dataclass(frozen=True)
class FeatureScore:
    name: str
    category: str
    malware_present: int
    benign_present: int
    info_gain: float


@dataclass(frozen=True)
class RankedList:
    """Scores sorted by info gain descending, ties by name ascending."""

    scores: Tuple[FeatureScore, ...]

    def __len__(self) -> int:
        return len(self.scores)

    def names(self, k: Optional[int] = None) -> List[str]:
        selected = self.scores if k is None else self.scores[:k]
        return [score.name for score in selected]

    def is_sorted(self) -> bool:
        keys = [_sort_key(score) for score in self.scores]
        return all(a <= b for a, b in zip(keys, keys[1:]))

    def to_frame(self) -> pd.DataFrame:
        """TSV-ready table: rank, name, per-class presence, info gain (6 decimals)."""
        return pd.DataFrame({
            'rank': range(1, len(self.scores) + 1),
            'name': [s.name for s in self.scores],
            'malware_present': [s.malware_present for s in self.scores],
            'benign_present': [s.benign_present for s in self.scores],
            'info_gain': [f"{s.info_gain:.6f}" for s in self.scores],
        })


def _sort_key(score: FeatureScore):
    return (-score.info_gain, score.name)


def entropy(counts: Sequence[float]) -> float:
    """Shannon entropy in bits of a count vector; 0*log(0) = 0."""
    values = np.asarray(counts, dtype=np.float64)
    total = values.sum()
    if total <= 0:
        return 0.0
    p = values[values > 0] / total
    h = float(-np.sum(p * np.log2(p)))
    return h if h > 0.0 else 0.0


def _binary_entropy(positive: np.ndarray, negative: np.ndarray) -> np.ndarray:
    """Element-wise entropy of (positive, negative) count pairs."""
    positive = positive.astype(np.float64)
    negative = negative.astype(np.float64)
    total = positive + negative
    with np.errstate(divide='ignore', invalid='ignore'):
        p = np.where(total > 0, positive / total, 0.0)
        q = np.where(total > 0, negative / total, 0.0)
        p_term = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
        q_term = np.where(q > 0, q * np.log2(np.where(q > 0, q, 1.0)), 0.0)
    return np.maximum(-(p_term + q_term), 0.0)


def _gain_from_counts(malware_present: np.ndarray, benign_present: np.ndarray,
                      n_malware: int, n_benign: int) -> np.ndarray:
    n = n_malware + n_benign
    class_entropy = entropy([n_malware, n_benign])
    present = malware_present + benign_present
    absent = n - present
    conditional = (
        (present / n) * _binary_entropy(malware_present, benign_present)
        + (absent / n) * _binary_entropy(n_malware - malware_present, n_benign - benign_present)
    )
    return np.clip(class_entropy - conditional, 0.0, class_entropy)


def info_gain_columns(matrix, labels) -> np.ndarray:
    """Information gain of every 0/1 column of ``matrix`` against ``labels``."""
    matrix = np.asarray(matrix)
    labels = np.asarray(labels)
    if matrix.ndim != 2 or matrix.shape[0] != labels.shape[0]:
        raise LengthMismatchError(
            f"Matrix with {matrix.shape[0] if matrix.ndim else 0} rows vs {labels.shape[0]} labels"
        )
    if labels.shape[0] == 0:
        raise LengthMismatchError("Information gain needs at least one sample")
    is_malware = labels == int(Label.MALWARE)
    malware_present = matrix[is_malware].sum(axis=0, dtype=np.int64)
    benign_present = matrix[~is_malware].sum(axis=0, dtype=np.int64)
    return _gain_from_counts(malware_present, benign_present, int(is_malware.sum()), int((~is_malware).sum()))


def info_gain(column, labels) -> float:
    """IG = H(labels) - sum over v in {0,1} of P(column=v) * H(labels | column=v)."""
    column = np.asarray(column)
    labels = np.asarray(labels)
    if column.shape != labels.shape or column.ndim != 1:
        raise LengthMismatchError(f"Column length {column.shape} != labels length {labels.shape}")
    return float(info_gain_columns(column.reshape(-1, 1), labels)[0])


def rank_features(ds: Dataset) -> RankedList:
    """One score per catalog feature, sorted by info gain then name."""
    counts = ds.class_counts()
    if counts[Label.MALWARE] == 0 or counts[Label.BENIGN] == 0:
        raise SingleClassDatasetError(
            f"Ranking needs both classes (malware={counts[Label.MALWARE]}, benign={counts[Label.BENIGN]})"
        )
    log_operation_start("feature ranking", features=ds.width, samples=len(ds))

    matrix = ds.matrix()
    is_malware = ds.labels() == int(Label.MALWARE)
    malware_present = matrix[is_malware].sum(axis=0, dtype=np.int64)
    benign_present = matrix[~is_malware].sum(axis=0, dtype=np.int64)
    gains = _gain_from_counts(malware_present, benign_present,
                              counts[Label.MALWARE], counts[Label.BENIGN])

    scores = [
        FeatureScore(feature.name, feature.category, int(m), int(b), float(g))
        for feature, m, b, g in zip(ds.catalog.features, malware_present, benign_present, gains)
    ]
    scores.sort(key=_sort_key)
    log_operation_result("feature ranking", True, len(scores))
    return RankedList(tuple(scores))


def select_top_k(ds: Dataset, k: int, rl: RankedList, keep: Sequence[str] = ()) -> Dataset:
    """
    Project ``ds`` onto the first ``k`` ranked features, in ranked order.

    Features whose category is listed in ``keep`` are appended after the
    top-k block in catalog order, whatever their rank.
    """
    if k < 1:
        raise RankingError(f"k must be positive, got {k}")
    if k > len(ds.catalog) or k > len(rl):
        raise KTooLargeError(f"k={k} exceeds the {min(len(ds.catalog), len(rl))} ranked features")

    ranked = rl.names()
    missing = [name for name in ranked if name not in ds.catalog]
    if missing:
        raise RankingError(f"Ranked features not in dataset: {', '.join(missing[:5])}")
    if keep:
        ranked = [name for name in ranked if ds.catalog.feature(name).category not in keep]
    chosen = ranked[:k]
    columns = [ds.catalog.index_of(name) for name in chosen]
    if keep:
        columns.extend(ds.catalog.indices_of_categories(keep))
    logger.info(f"Selected top {len(chosen)} features" + (f" plus {len(columns) - len(chosen)} kept" if keep else ''))
    return ds.project(columns)

