#!/usr/bin/env python3
"""
Feature catalog, log/permission vectorization and the dataset CSV format.

A catalog fixes the column layout of every binary feature vector. Dynamic logs
and static permission lists are parsed into observation sets, turned into 0/1
samples and stored as one CSV per scenario with a trailing ``class`` column
(1 = malware, 0 = benign).
"""

import hashlib
import io
import os
import re
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from logging_conf import get_logger

logger = get_logger('dldroid.ingest')

ATTRIBUTE = 'attribute'
ACTION_EVENT = 'action_event'
PERMISSION = 'permission'
CATEGORIES = (ATTRIBUTE, ACTION_EVENT, PERMISSION)
DYNAMIC_CATEGORIES = (ATTRIBUTE, ACTION_EVENT)

CLASS_COLUMN = 'class'

# Intent actions outside the action. namespace, e.g. com.android.vending.INSTALL_REFERRER
INTENT_ACTION_PATTERN = re.compile(r'(?:[a-z][a-z0-9_]*\.)+[A-Z][A-Z0-9_]*')

# Named feature sets used by the CLI
FEATURE_SETS = {
    'dynamic': DYNAMIC_CATEGORIES,
    'static': (PERMISSION,),
    'all': CATEGORIES,
}


class IngestError(Exception):
    """Base exception for catalog, log and dataset errors."""
    pass


class DuplicateFeatureError(IngestError):
    def __init__(self, name: str):
        super().__init__(f"Duplicate feature name: {name}")
        self.name = name


class UnknownCategoryError(IngestError):
    def __init__(self, line: str):
        super().__init__(f"Unknown or missing feature category in line: {line!r}")
        self.line = line


class HeaderMismatchError(IngestError):
    pass


class NonBinaryCellError(IngestError):
    def __init__(self, row: int, col: str, value: str):
        super().__init__(f"Non-binary cell {value!r} at row {row}, column {col}")
        self.row = row
        self.col = col


class UnknownLabelError(IngestError):
    def __init__(self, row: int, value: str):
        super().__init__(f"Unknown class label {value!r} at row {row}")
        self.row = row


class WidthMismatchError(IngestError):
    pass


class Label(IntEnum):
    BENIGN = 0
    MALWARE = 1

    @classmethod
    def parse(cls, value) -> 'Label':
        """Accept 0/1 or the class names, case-insensitively."""
        text = str(value).strip().lower()
        if text in ('1', 'malware', 'malicious'):
            return cls.MALWARE
        if text in ('0', 'benign'):
            return cls.BENIGN
        raise ValueError(f"Unknown label: {value!r}")


@dataclass(frozen=True)
class Feature:
    name: str
    category: str


@dataclass(frozen=True)
class FeatureCatalog:
    """Ordered schema of named binary features."""

    features: Tuple[Feature, ...]
    _index: Dict[str, int] = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        features = tuple(self.features)
        object.__setattr__(self, 'features', features)
        index: Dict[str, int] = {}
        for position, feature in enumerate(features):
            if feature.category not in CATEGORIES:
                raise UnknownCategoryError(f"{feature.name},{feature.category}")
            if feature.name in index:
                raise DuplicateFeatureError(feature.name)
            index[feature.name] = position
        object.__setattr__(self, '_index', index)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[str, str]]) -> 'FeatureCatalog':
        return cls(tuple(Feature(name, category) for name, category in pairs))

    @classmethod
    def from_names(cls, names: Iterable[str]) -> 'FeatureCatalog':
        """Build a catalog whose categories are inferred from name prefixes."""
        return cls(tuple(Feature(name, infer_category(name)) for name in names))

    def __len__(self) -> int:
        return len(self.features)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(feature.name for feature in self.features)

    def index_of(self, name: str) -> int:
        return self._index[name]

    def feature(self, name: str) -> Feature:
        return self.features[self._index[name]]

    def category_counts(self) -> Dict[str, int]:
        counts = {category: 0 for category in CATEGORIES}
        for feature in self.features:
            counts[feature.category] += 1
        return counts

    def indices_of_categories(self, categories: Sequence[str]) -> List[int]:
        wanted = set(categories)
        return [i for i, feature in enumerate(self.features) if feature.category in wanted]

    def fingerprint(self) -> str:
        """SHA-256 of the ordered feature-name list."""
        return hashlib.sha256('\n'.join(self.names).encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class ObservationSet:
    """Tokens seen for one app, split into catalog hits and unknown noise."""

    tokens: FrozenSet[str] = frozenset()
    unknown: Counter = field(default_factory=Counter, compare=True, hash=False)

    def __post_init__(self):
        object.__setattr__(self, 'tokens', frozenset(self.tokens))
        object.__setattr__(self, 'unknown', Counter(self.unknown))


@dataclass(frozen=True)
class Sample:
    bits: Tuple[int, ...]
    label: Label
    app_id: str = field(default='', compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'bits', tuple(int(bit) for bit in self.bits))
        object.__setattr__(self, 'label', Label(int(self.label)))
        if any(bit not in (0, 1) for bit in self.bits):
            raise IngestError(f"Sample {self.app_id!r} has non-binary entries")


@dataclass(frozen=True)
class Dataset:
    """Labeled samples bound to one catalog."""

    catalog: FeatureCatalog
    samples: Tuple[Sample, ...]

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, 'samples', samples)
        width = len(self.catalog)
        for sample in samples:
            if len(sample.bits) != width:
                raise WidthMismatchError(
                    f"Sample {sample.app_id!r} has {len(sample.bits)} bits, catalog has {width}"
                )

    @classmethod
    def from_arrays(cls, catalog: FeatureCatalog, matrix, labels,
                    app_ids: Optional[Sequence[str]] = None) -> 'Dataset':
        matrix = np.asarray(matrix)
        labels = np.asarray(labels)
        if matrix.ndim != 2 or matrix.shape[1] != len(catalog):
            raise WidthMismatchError(
                f"Matrix shape {matrix.shape} does not match catalog width {len(catalog)}"
            )
        if len(labels) != matrix.shape[0]:
            raise WidthMismatchError(f"{matrix.shape[0]} rows but {len(labels)} labels")
        if app_ids is None:
            app_ids = [f"row-{i + 1}" for i in range(matrix.shape[0])]
        samples = tuple(
            Sample(tuple(int(v) for v in row), Label(int(label)), app_id)
            for row, label, app_id in zip(matrix.tolist(), labels.tolist(), app_ids)
        )
        return cls(catalog, samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def width(self) -> int:
        return len(self.catalog)

    @cached_property
    def _matrix(self) -> np.ndarray:
        if not self.samples:
            matrix = np.zeros((0, self.width), dtype=np.uint8)
        else:
            matrix = np.array([sample.bits for sample in self.samples], dtype=np.uint8)
        matrix.flags.writeable = False
        return matrix

    @cached_property
    def _labels(self) -> np.ndarray:
        labels = np.array([int(sample.label) for sample in self.samples], dtype=np.int64)
        labels.flags.writeable = False
        return labels

    def matrix(self) -> np.ndarray:
        """Samples as a read-only (n, width) uint8 array."""
        return self._matrix

    def labels(self) -> np.ndarray:
        """Read-only label vector, 1 = malware."""
        return self._labels

    def class_counts(self) -> Dict[Label, int]:
        counts = Counter(sample.label for sample in self.samples)
        return {Label.MALWARE: counts[Label.MALWARE], Label.BENIGN: counts[Label.BENIGN]}

    def has_both_classes(self) -> bool:
        counts = self.class_counts()
        return counts[Label.MALWARE] > 0 and counts[Label.BENIGN] > 0

    def subset(self, indices: Iterable[int]) -> 'Dataset':
        """Rows by position, same catalog."""
        return Dataset(self.catalog, tuple(self.samples[i] for i in indices))

    def project(self, columns: Sequence[int]) -> 'Dataset':
        """Columns by position; the new catalog follows the given order."""
        catalog = FeatureCatalog(tuple(self.catalog.features[c] for c in columns))
        samples = tuple(
            Sample(tuple(sample.bits[c] for c in columns), sample.label, sample.app_id)
            for sample in self.samples
        )
        return Dataset(catalog, samples)


def infer_category(name: str) -> str:
    """Category implied by the token spelling."""
    if name.startswith('permission.'):
        return PERMISSION
    if name.startswith('action.') or INTENT_ACTION_PATTERN.fullmatch(name):
        return ACTION_EVENT
    return ATTRIBUTE


def _content_lines(text: str) -> Iterable[str]:
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if line and not line.startswith('#'):
            yield line


def read_text_file(path, what: str) -> str:
    """Read a UTF-8 input file; unreadable or undecodable files are input errors."""
    try:
        return Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise IngestError(f"Cannot read {what} {path}: {e}")
    except UnicodeDecodeError as e:
        raise IngestError(f"{what.capitalize()} {path} is not valid UTF-8: {e}")


def load_catalog(path) -> FeatureCatalog:
    """Load a ``name,category`` catalog file, preserving file order."""
    text = read_text_file(path, 'catalog')

    features: List[Feature] = []
    seen = set()
    for line in _content_lines(text):
        if ',' not in line:
            raise UnknownCategoryError(line)
        name, category = (part.strip() for part in line.rsplit(',', 1))
        if category not in CATEGORIES or not name:
            raise UnknownCategoryError(line)
        if name in seen:
            raise DuplicateFeatureError(name)
        seen.add(name)
        features.append(Feature(name, category))

    catalog = FeatureCatalog(tuple(features))
    logger.debug(f"Loaded catalog with {len(catalog)} features: {catalog.category_counts()}")
    return catalog


def save_catalog(catalog: FeatureCatalog, path, header: Optional[str] = None) -> None:
    lines = [header] if header else []
    lines.extend(f"{feature.name},{feature.category}" for feature in catalog.features)
    atomic_write_text(path, '\n'.join(lines) + '\n')


def parse_dynamic_log(text: str, catalog: FeatureCatalog) -> ObservationSet:
    """One token per non-comment line; tokens outside the catalog go to ``unknown``."""
    tokens = set()
    unknown: Counter = Counter()
    for token in _content_lines(text):
        if token in catalog:
            tokens.add(token)
        else:
            unknown[token] += 1
    if unknown:
        logger.debug(f"{sum(unknown.values())} unknown tokens ({len(unknown)} distinct)")
    return ObservationSet(frozenset(tokens), unknown)


def merge_observations(*observations: ObservationSet) -> ObservationSet:
    """Union of several observation sets for the same app."""
    tokens = set()
    unknown: Counter = Counter()
    for obs in observations:
        tokens |= obs.tokens
        unknown.update(obs.unknown)
    return ObservationSet(frozenset(tokens), unknown)


def vectorize(obs: ObservationSet, label, catalog: FeatureCatalog, app_id: str = '') -> Sample:
    """bits[i] = 1 iff the i-th catalog feature was observed."""
    bits = tuple(1 if name in obs.tokens else 0 for name in catalog.names)
    if len(bits) != len(catalog):
        raise WidthMismatchError(f"Vector width {len(bits)} != catalog size {len(catalog)}")
    return Sample(bits, Label(int(label)), app_id)


def restrict_categories(ds: Dataset, categories: Sequence[str]) -> Dataset:
    """Keep only the columns whose category is listed, in catalog order."""
    unknown = set(categories) - set(CATEGORIES)
    if unknown:
        raise UnknownCategoryError(','.join(sorted(unknown)))
    return ds.project(ds.catalog.indices_of_categories(categories))


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling file and rename into place."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(target.parent))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as handle:
            handle.write(text)
        os.replace(temp_name, target)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise


def dataset_to_csv_text(ds: Dataset, provenance: Optional[str] = None) -> str:
    if len(ds.catalog) == 0:
        raise IngestError("Cannot write a dataset with an empty catalog")
    if CLASS_COLUMN in ds.catalog:
        raise HeaderMismatchError(f"Feature name '{CLASS_COLUMN}' collides with the label column")

    frame = pd.DataFrame(ds.matrix(), columns=list(ds.catalog.names))
    frame[CLASS_COLUMN] = ds.labels()
    body = frame.to_csv(index=False, lineterminator='\n')
    return (provenance + '\n' + body) if provenance else body


def write_csv(ds: Dataset, path, provenance: Optional[str] = None) -> None:
    """Write the canonical dataset CSV (header, 0/1 cells, trailing class)."""
    atomic_write_text(path, dataset_to_csv_text(ds, provenance))
    logger.debug(f"Wrote {len(ds)} samples x {ds.width} features")


def read_csv(path, catalog: Optional[FeatureCatalog] = None) -> Dataset:
    """
    Read a dataset CSV.

    Leading ``#`` lines are skipped. When a catalog is given the header must
    list exactly its names in order; otherwise categories are inferred from
    the feature spellings.
    """
    text = read_text_file(path, 'dataset')
    return parse_csv_text(text, catalog)


def parse_csv_text(text: str, catalog: Optional[FeatureCatalog] = None) -> Dataset:
    lines = text.splitlines()
    while lines and lines[0].startswith('#'):
        lines.pop(0)
    if not lines:
        raise HeaderMismatchError("Dataset file has no header row")

    try:
        frame = pd.read_csv(
            io.StringIO('\n'.join(lines) + '\n'),
            header=None,
            dtype=str,
            keep_default_na=False,
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise HeaderMismatchError(f"Malformed dataset CSV: {e}")

    header = [str(value) for value in frame.iloc[0].tolist()]
    if not header or header[-1] != CLASS_COLUMN:
        raise HeaderMismatchError(f"Last column must be '{CLASS_COLUMN}', got {header[-1:]}")
    names = header[:-1]
    if not names:
        raise HeaderMismatchError("Dataset has no feature columns")
    duplicates = sorted(name for name, count in Counter(names).items() if count > 1)
    if duplicates:
        raise HeaderMismatchError(f"Duplicate feature columns: {', '.join(duplicates)}")

    if catalog is None:
        catalog = FeatureCatalog.from_names(names)
    elif list(catalog.names) != names:
        raise HeaderMismatchError(describe_header_difference(catalog.names, names))

    cells = frame.iloc[1:].to_numpy(dtype=object)
    if cells.size:
        bad = ~np.isin(cells[:, :-1], ['0', '1'])
        if bad.any():
            row, col = (int(v) for v in np.argwhere(bad)[0])
            raise NonBinaryCellError(row + 1, names[col], str(cells[row, col]))
        bad_labels = ~np.isin(cells[:, -1], ['0', '1'])
        if bad_labels.any():
            row = int(np.argwhere(bad_labels)[0][0])
            raise UnknownLabelError(row + 1, str(cells[row, -1]))
        matrix = cells[:, :-1].astype(np.uint8)
        labels = cells[:, -1].astype(np.int64)
    else:
        matrix = np.zeros((0, len(names)), dtype=np.uint8)
        labels = np.zeros(0, dtype=np.int64)

    return Dataset.from_arrays(catalog, matrix, labels)


def describe_header_difference(expected: Sequence[str], actual: Sequence[str]) -> str:
    """Human-readable diff between two feature-name lists."""
    expected_set, actual_set = set(expected), set(actual)
    missing = [name for name in expected if name not in actual_set]
    extra = [name for name in actual if name not in expected_set]
    parts = []
    if missing:
        parts.append(f"missing: {', '.join(missing[:10])}" + (' ...' if len(missing) > 10 else ''))
    if extra:
        parts.append(f"unexpected: {', '.join(extra[:10])}" + (' ...' if len(extra) > 10 else ''))
    if not parts:
        parts.append("same features in a different order")
    return "Header mismatch (" + '; '.join(parts) + ")"


def load_label_map(path) -> Dict[str, Label]:
    """Read an ``app_id,label`` file (labels 0/1 or benign/malware)."""
    text = read_text_file(path, 'label map')

    labels: Dict[str, Label] = {}
    for line in _content_lines(text):
        if ',' not in line:
            raise IngestError(f"Label map line must be 'app_id,label': {line!r}")
        app_id, value = (part.strip() for part in line.rsplit(',', 1))
        if app_id == 'app_id':
            continue
        try:
            labels[app_id] = Label.parse(value)
        except ValueError:
            raise UnknownLabelError(len(labels) + 1, value)
    return labels


def unknown_report_rows(observations: Mapping[str, ObservationSet]) -> List[Tuple[str, str, int]]:
    """(app_id, token, count) rows sorted for stable reports."""
    rows = []
    for app_id in sorted(observations):
        for token, count in sorted(observations[app_id].unknown.items()):
            rows.append((app_id, token, count))
    return rows
