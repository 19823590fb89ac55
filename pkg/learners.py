#!/usr/bin/env python3
"""
Classifiers behind one learner interface: a numpy multilayer perceptron with
the hidden-layer grid search, a Bernoulli naive Bayes and an entropy-split
decision tree.

Every model exposes ``predict_scores(matrix) -> scores in [0, 1]`` so the
evaluation code treats them uniformly. Training is in double precision and
deterministic given the seed.
"""

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from evalcore import (DEFAULT_THRESHOLD, EvalReport, REPORT_COLUMNS, confusion,
                      cross_validate, format_runtime, metrics, stratified_holdout)
from ingest import Dataset, FeatureCatalog, Label, atomic_write_text
from logging_conf import get_logger, log_grid_row, log_operation_result, log_operation_start
from ranking import info_gain_columns

logger = get_logger('dldroid.learners')

MODEL_FORMAT = 'dldroid-model'
MODEL_VERSION = 1
LEARNER_KINDS = ('mlp', 'nb', 'tree')

# Hidden-layer combinations evaluated by the grid search
DEFAULT_GRID: Tuple[Tuple[int, ...], ...] = (
    (50, 50), (100, 100), (200, 200), (300, 300), (400, 400), (500, 500),
    (50, 50, 50), (100, 50, 100), (50, 100, 50), (100, 100, 100), (100, 200, 100),
    (200, 100, 200), (200, 200, 200), (300, 100, 300), (300, 300, 300),
    (400, 400, 400), (500, 500, 500),
    (50, 50, 50, 50), (100, 100, 100, 100), (200, 200, 200, 200),
    (300, 300, 300, 300), (400, 400, 400, 400),
)
MAX_GRID_LAYERS = 4

NB_PROBABILITY_FLOOR = 1e-9
# gains below this are rounding noise, not information
TREE_MIN_GAIN = 1e-12


class LearnerError(Exception):
    """Base exception for learner errors."""
    pass


class SingleClassTrainSetError(LearnerError):
    pass


class ShapeMismatchError(LearnerError):
    pass


class CatalogMismatchError(LearnerError):
    def __init__(self, expected: str, actual: str):
        super().__init__(
            f"Model was trained on catalog {expected[:12]}..., dataset has {actual[:12]}..."
        )
        self.expected = expected
        self.actual = actual


def _require_both_classes(train: Dataset) -> None:
    counts = train.class_counts()
    if counts[Label.MALWARE] == 0 or counts[Label.BENIGN] == 0:
        raise SingleClassTrainSetError(
            f"Training set needs both classes (malware={counts[Label.MALWARE]}, "
            f"benign={counts[Label.BENIGN]})"
        )


def _check_width(matrix: np.ndarray, width: int) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2 or matrix.shape[1] != width:
        raise ShapeMismatchError(f"Expected {width} features, got shape {matrix.shape}")
    return matrix


def sigmoid(z):
    """Logistic function, stable for large |z|."""
    return np.exp(-np.logaddexp(0.0, -np.asarray(z, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Multilayer perceptron
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MlpConfig:
    hidden_layers: Tuple[int, ...] = (200, 200, 200)
    seed: int = 42
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    l2: float = 1e-5
    patience: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    validation_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, 'hidden_layers', tuple(int(w) for w in self.hidden_layers))
        if not self.hidden_layers or any(w <= 0 for w in self.hidden_layers):
            raise LearnerError(f"Hidden layer widths must be positive: {self.hidden_layers}")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise LearnerError("epochs, batch_size and patience must be at least 1")
        if self.learning_rate <= 0 or self.l2 < 0:
            raise LearnerError("learning_rate must be positive and l2 nonnegative")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise LearnerError(f"validation_fraction must be in [0, 1): {self.validation_fraction}")

    @property
    def total_neurons(self) -> int:
        return sum(self.hidden_layers)

    def label(self) -> str:
        return ','.join(str(w) for w in self.hidden_layers)


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Trained network; weights[i] has shape (fan_in, fan_out)."""

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    epochs_run: int = 0
    final_loss: float = float('nan')

    def __post_init__(self):
        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        if not weights or len(weights) != len(biases):
            raise ShapeMismatchError("Weights and biases must be non-empty and paired")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or w.shape[1] != b.shape[0]:
                raise ShapeMismatchError(f"Layer {i}: weight {w.shape} vs bias {b.shape}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatchError(f"Layer {i} input {w.shape[0]} != previous output {weights[i - 1].shape[1]}")
        if weights[-1].shape[1] != 1:
            raise ShapeMismatchError("Output layer must have a single unit")
        for array in weights + biases:
            array.setflags(write=False)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'biases', biases)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_layers(self) -> Tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def predict_scores(self, matrix) -> np.ndarray:
        return mlp_predict_batch(self, matrix)


def _forward(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], x: np.ndarray):
    """Return the output logits and the (pre-activation, activation) cache."""
    activations = [x]
    pre_activations = []
    a = x
    for w, b in zip(weights[:-1], biases[:-1]):
        z = a @ w + b
        pre_activations.append(z)
        a = np.maximum(z, 0.0)
        activations.append(a)
    logits = (a @ weights[-1] + biases[-1]).reshape(-1)
    return logits, pre_activations, activations


def _bce_from_logits(logits: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^z) - y*z, averaged
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def mlp_loss_and_gradients(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                           x, y, l2: float = 0.0) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """
    Mean binary cross-entropy plus ``l2/2 * sum(W**2)`` and its gradients.

    Returns:
        (loss, weight gradients, bias gradients) in layer order
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    logits, pre_activations, activations = _forward(weights, biases, x)
    loss = _bce_from_logits(logits, y) + 0.5 * l2 * sum(float(np.sum(w * w)) for w in weights)

    delta = ((sigmoid(logits) - y) / len(y)).reshape(-1, 1)
    grad_w: List[np.ndarray] = [np.empty(0)] * len(weights)
    grad_b: List[np.ndarray] = [np.empty(0)] * len(biases)
    for layer in range(len(weights) - 1, -1, -1):
        grad_w[layer] = activations[layer].T @ delta + l2 * weights[layer]
        grad_b[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ weights[layer].T) * (pre_activations[layer - 1] > 0)
    return loss, grad_w, grad_b


def _init_parameters(widths: Sequence[int], rng: np.random.Generator):
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _validation_wfm(weights, biases, valid: Dataset) -> float:
    logits, _, _ = _forward(weights, biases, valid.matrix().astype(np.float64))
    return metrics(confusion(sigmoid(logits), valid.labels(), DEFAULT_THRESHOLD)).weighted_fm


def mlp_train(cfg: MlpConfig, train: Dataset, valid: Optional[Dataset] = None) -> MlpModel:
    """
    Train a ReLU network with a sigmoid output using Adam on mini-batches.

    When ``valid`` is given, training stops once its weighted F-measure has
    not improved for ``cfg.patience`` epochs and the best parameters are kept.
    """
    _require_both_classes(train)
    if train.width == 0:
        raise ShapeMismatchError("Cannot train on a dataset without features")
    if valid is not None and valid.width != train.width:
        raise ShapeMismatchError(f"Validation width {valid.width} != training width {train.width}")
    if valid is not None and len(valid) == 0:
        valid = None

    rng = np.random.default_rng(cfg.seed)
    weights, biases = _init_parameters((train.width,) + cfg.hidden_layers + (1,), rng)
    params = weights + biases
    first_moment = [np.zeros_like(p) for p in params]
    second_moment = [np.zeros_like(p) for p in params]

    x = train.matrix().astype(np.float64)
    y = train.labels().astype(np.float64)
    n = len(y)
    step = 0
    best_score = -1.0
    best_params = [p.copy() for p in params]
    stale = 0
    epochs_run = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grad_w, grad_b = mlp_loss_and_gradients(weights, biases, x[batch], y[batch], cfg.l2)
            step += 1
            for p, g, m, v in zip(params, grad_w + grad_b, first_moment, second_moment):
                m *= cfg.beta1
                m += (1 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1 - cfg.beta2) * g * g
                m_hat = m / (1 - cfg.beta1 ** step)
                v_hat = v / (1 - cfg.beta2 ** step)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        epochs_run = epoch + 1

        if valid is None:
            continue
        score = _validation_wfm(weights, biases, valid)
        logger.debug(f"Epoch {epochs_run}: validation w-FM={score:.4f}")
        if score > best_score:
            best_score = score
            best_params = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.debug(f"Early stop after {epochs_run} epochs")
                break

    if valid is not None:
        for p, best in zip(params, best_params):
            p[...] = best
    final_loss, _, _ = mlp_loss_and_gradients(weights, biases, x, y, cfg.l2)
    return MlpModel(tuple(weights), tuple(biases), epochs_run=epochs_run, final_loss=final_loss)


def mlp_predict_batch(model: MlpModel, matrix) -> np.ndarray:
    x = _check_width(matrix, model.input_width)
    logits, _, _ = _forward(model.weights, model.biases, x)
    return sigmoid(logits)


def mlp_predict(model: MlpModel, bits) -> float:
    """Malware score of one sample; classification is score >= 0.5."""
    bits = np.asarray(bits, dtype=np.float64)
    if bits.ndim != 1 or bits.shape[0] != model.input_width:
        raise ShapeMismatchError(f"Expected {model.input_width} features, got shape {bits.shape}")
    return float(mlp_predict_batch(model, bits.reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# Bernoulli naive Bayes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NaiveBayesModel:
    prior_malware: float
    p_malware: np.ndarray
    p_benign: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        for name in ('p_malware', 'p_benign'):
            array = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        if self.p_malware.shape != self.p_benign.shape:
            raise ShapeMismatchError("Per-class probability vectors differ in length")

    @property
    def input_width(self) -> int:
        return self.p_malware.shape[0]

    def log_odds(self, matrix) -> np.ndarray:
        x = _check_width(matrix, self.input_width)
        present = np.log(self.p_malware) - np.log(self.p_benign)
        absent = np.log1p(-self.p_malware) - np.log1p(-self.p_benign)
        prior = np.log(self.prior_malware) - np.log1p(-self.prior_malware)
        return prior + x @ present + (1.0 - x) @ absent

    def predict_scores(self, matrix) -> np.ndarray:
        return sigmoid(self.log_odds(matrix))


def nb_train(train: Dataset, alpha: float = 1.0) -> NaiveBayesModel:
    """Bernoulli event model, P(x=1|c) = (count + alpha) / (n_c + 2 alpha)."""
    _require_both_classes(train)
    if alpha < 0:
        raise LearnerError(f"alpha must be nonnegative, got {alpha}")
    matrix = train.matrix()
    is_malware = train.labels() == int(Label.MALWARE)
    n_malware = int(is_malware.sum())
    n_benign = len(is_malware) - n_malware

    def class_probabilities(rows: np.ndarray, n: int) -> np.ndarray:
        counts = rows.sum(axis=0, dtype=np.float64)
        p = (counts + alpha) / (n + 2.0 * alpha)
        return np.clip(p, NB_PROBABILITY_FLOOR, 1.0 - NB_PROBABILITY_FLOOR)

    return NaiveBayesModel(
        prior_malware=n_malware / len(is_malware),
        p_malware=class_probabilities(matrix[is_malware], n_malware),
        p_benign=class_probabilities(matrix[~is_malware], n_benign),
        alpha=alpha,
    )


def nb_predict(model: NaiveBayesModel, bits) -> float:
    """Posterior P(malware | bits)."""
    return float(model.predict_scores(np.asarray(bits).reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# Decision tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreeNode:
    score: float
    n_samples: int
    feature: Optional[int] = None
    absent: Optional['TreeNode'] = None
    present: Optional['TreeNode'] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.absent.depth(), self.present.depth())

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {'score': self.score, 'n': self.n_samples}
        if not self.is_leaf:
            data.update(feature=self.feature, absent=self.absent.to_dict(), present=self.present.to_dict())
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TreeNode':
        if 'feature' not in data:
            return cls(float(data['score']), int(data['n']))
        return cls(float(data['score']), int(data['n']), int(data['feature']),
                   cls.from_dict(data['absent']), cls.from_dict(data['present']))


@dataclass(frozen=True)
class DecisionTreeModel:
    root: TreeNode
    input_width: int

    def predict_scores(self, matrix) -> np.ndarray:
        x = _check_width(matrix, self.input_width)
        return np.array([self._leaf_score(row) for row in x], dtype=np.float64)

    def _leaf_score(self, row: np.ndarray) -> float:
        node = self.root
        while not node.is_leaf:
            node = node.present if row[node.feature] > 0 else node.absent
        return node.score


def tree_train(train: Dataset, max_depth: int = 10, min_leaf: int = 1) -> DecisionTreeModel:
    """
    Greedy binary-split tree on maximum information gain, no pruning.

    Growth stops on a pure node, the depth limit, children smaller than
    ``min_leaf`` or no positive gain. Ties go to the lowest feature index.
    """
    _require_both_classes(train)
    if max_depth < 0 or min_leaf < 1:
        raise LearnerError(f"Invalid tree limits: max_depth={max_depth}, min_leaf={min_leaf}")
    matrix = train.matrix()
    labels = train.labels()

    def grow(indices: np.ndarray, depth: int) -> TreeNode:
        node_labels = labels[indices]
        score = float(np.mean(node_labels == int(Label.MALWARE)))
        leaf = TreeNode(score, len(indices))
        if score in (0.0, 1.0) or depth >= max_depth or len(indices) < 2 * min_leaf:
            return leaf

        rows = matrix[indices]
        present_counts = rows.sum(axis=0)
        allowed = (present_counts >= min_leaf) & (len(indices) - present_counts >= min_leaf)
        if not allowed.any():
            return leaf
        gains = np.where(allowed, info_gain_columns(rows, node_labels), -1.0)
        best = int(np.argmax(gains))
        if gains[best] <= TREE_MIN_GAIN:
            return leaf

        split = rows[:, best] > 0
        return TreeNode(score, len(indices), best,
                        absent=grow(indices[~split], depth + 1),
                        present=grow(indices[split], depth + 1))

    root = grow(np.arange(len(train)), 0)
    logger.debug(f"Tree grown to depth {root.depth()}")
    return DecisionTreeModel(root, train.width)


def tree_predict(tree: DecisionTreeModel, bits) -> float:
    """Malware fraction of the leaf reached by ``bits``."""
    return float(tree.predict_scores(np.asarray(bits).reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# Learner adapters
# ---------------------------------------------------------------------------

Model = Union[MlpModel, NaiveBayesModel, DecisionTreeModel]


@dataclass(frozen=True)
class MlpLearner:
    config: MlpConfig = field(default_factory=MlpConfig)
    name: ClassVar[str] = 'mlp'

    def fit(self, train: Dataset, seed: int) -> MlpModel:
        cfg = replace(self.config, seed=seed)
        if cfg.validation_fraction <= 0:
            return mlp_train(cfg, train)
        fit_idx, valid_idx = stratified_holdout(train.labels(), cfg.validation_fraction, seed)
        return mlp_train(cfg, train.subset(fit_idx), train.subset(valid_idx))


@dataclass(frozen=True)
class NaiveBayesLearner:
    alpha: float = 1.0
    name: ClassVar[str] = 'nb'

    def fit(self, train: Dataset, seed: int) -> NaiveBayesModel:
        return nb_train(train, self.alpha)


@dataclass(frozen=True)
class DecisionTreeLearner:
    max_depth: int = 10
    min_leaf: int = 1
    name: ClassVar[str] = 'tree'

    def fit(self, train: Dataset, seed: int) -> DecisionTreeModel:
        return tree_train(train, self.max_depth, self.min_leaf)


def make_learner(kind: str, layers: Optional[Sequence[int]] = None, **options: Any):
    """Build a learner by CLI name; ``options`` go to the learner's config."""
    if kind == 'mlp':
        if layers is not None:
            options['hidden_layers'] = tuple(layers)
        return MlpLearner(MlpConfig(**options))
    if kind == 'nb':
        return NaiveBayesLearner(**options)
    if kind == 'tree':
        return DecisionTreeLearner(**options)
    raise LearnerError(f"Unknown learner '{kind}' (choose from {', '.join(LEARNER_KINDS)})")


def parse_layers(text: str) -> Tuple[int, ...]:
    """Parse ``200,200,200`` into a layer tuple."""
    try:
        layers = tuple(int(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise LearnerError(f"Invalid layer list: '{text}'")
    if not layers or any(w <= 0 for w in layers):
        raise LearnerError(f"Invalid layer list: '{text}'")
    return layers


def load_grid_file(path) -> List[Tuple[int, ...]]:
    """One comma-separated layer tuple per line; blank lines and # comments skipped."""
    try:
        text = Path(path).read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as e:
        raise LearnerError(f"Cannot read grid file {path}: {e}")
    lines = [line.split('#', 1)[0].strip() for line in text.splitlines()]
    return [parse_layers(line) for line in lines if line]


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridRow:
    config: MlpConfig
    report: EvalReport
    seconds: float

    def sort_key(self):
        return (-self.report.weighted_fm, self.config.total_neurons,
                len(self.config.hidden_layers), self.seconds, self.config.hidden_layers)


@dataclass(frozen=True)
class GridResult:
    rows: Tuple[GridRow, ...]
    best: int = 0

    @property
    def best_row(self) -> GridRow:
        return self.rows[self.best]

    def to_frame(self, include_runtime: bool = True) -> pd.DataFrame:
        records = []
        for row in self.rows:
            record = {'layers': len(row.config.hidden_layers), 'neurons': row.config.label()}
            record.update(zip(REPORT_COLUMNS, row.report.formatted()))
            if include_runtime:
                record['runtime'] = format_runtime(row.seconds)
            records.append(record)
        return pd.DataFrame.from_records(records)


def _evaluate_config(job: Tuple[MlpConfig, Dataset, int, int, float]) -> GridRow:
    cfg, ds, k, seed, threshold = job
    started = time.perf_counter()
    report = cross_validate(MlpLearner(cfg), ds, k, seed, threshold)
    return GridRow(cfg, report, time.perf_counter() - started)


def grid_search(configs: Sequence[MlpConfig], ds: Dataset, k: int, seed: int,
                threshold: float = DEFAULT_THRESHOLD, jobs: int = 1) -> GridResult:
    """
    Cross-validate every configuration and sort by weighted F-measure.

    Ties go to fewer total neurons, then fewer layers, then shorter runtime.
    With ``jobs > 1`` configurations run in worker processes; each run is
    seeded independently so the metrics match a sequential search.
    """
    if not configs:
        raise LearnerError("Grid search needs at least one configuration")
    for cfg in configs:
        if len(cfg.hidden_layers) > MAX_GRID_LAYERS:
            raise LearnerError(f"Grid configurations use at most {MAX_GRID_LAYERS} layers: {cfg.label()}")
    log_operation_start("grid search", configs=len(configs), k=k, seed=seed, jobs=jobs)

    work = [(cfg, ds, k, seed, threshold) for cfg in configs]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_evaluate_config, work))
    else:
        rows = [_evaluate_config(job) for job in work]
    for row in rows:
        log_grid_row(row.config.hidden_layers, row.report.weighted_fm, row.seconds)

    rows.sort(key=GridRow.sort_key)
    log_operation_result("grid search", True, len(rows))
    return GridResult(tuple(rows), best=0)


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SavedModel:
    kind: str
    model: Any
    catalog_fingerprint: str
    config: Dict[str, Any]

    def check_catalog(self, catalog: FeatureCatalog) -> None:
        actual = catalog.fingerprint()
        if actual != self.catalog_fingerprint:
            raise CatalogMismatchError(self.catalog_fingerprint, actual)


def model_kind(model: Model) -> str:
    if isinstance(model, MlpModel):
        return 'mlp'
    if isinstance(model, NaiveBayesModel):
        return 'nb'
    if isinstance(model, DecisionTreeModel):
        return 'tree'
    raise LearnerError(f"Unsupported model type {type(model).__name__}")


def _model_params(model: Model) -> Dict[str, Any]:
    if isinstance(model, MlpModel):
        return {
            'weights': [w.tolist() for w in model.weights],
            'biases': [b.tolist() for b in model.biases],
            'epochs_run': model.epochs_run,
            'final_loss': model.final_loss,
        }
    if isinstance(model, NaiveBayesModel):
        return {
            'prior_malware': model.prior_malware,
            'p_malware': model.p_malware.tolist(),
            'p_benign': model.p_benign.tolist(),
            'alpha': model.alpha,
        }
    return {'input_width': model.input_width, 'root': model.root.to_dict()}


def _model_from_params(kind: str, params: Dict[str, Any]) -> Model:
    if kind == 'mlp':
        return MlpModel(tuple(np.array(w) for w in params['weights']),
                        tuple(np.array(b) for b in params['biases']),
                        epochs_run=int(params['epochs_run']), final_loss=float(params['final_loss']))
    if kind == 'nb':
        return NaiveBayesModel(float(params['prior_malware']), np.array(params['p_malware']),
                               np.array(params['p_benign']), float(params['alpha']))
    if kind == 'tree':
        return DecisionTreeModel(TreeNode.from_dict(params['root']), int(params['input_width']))
    raise LearnerError(f"Unknown model kind '{kind}'")


def save_model(model: Model, catalog: FeatureCatalog, path, config: Optional[Dict[str, Any]] = None) -> None:
    """Write a versioned JSON model file bound to the catalog fingerprint."""
    document = {
        'format': MODEL_FORMAT,
        'version': MODEL_VERSION,
        'kind': model_kind(model),
        'catalog_fingerprint': catalog.fingerprint(),
        'config': config or {},
        'params': _model_params(model),
    }
    atomic_write_text(path, json.dumps(document, indent=1, sort_keys=True) + '\n')
    logger.info(f"Saved {document['kind']} model to {path}")


def load_model(path, catalog: Optional[FeatureCatalog] = None) -> SavedModel:
    """Read a model file; with ``catalog`` given, reject a fingerprint mismatch."""
    try:
        document = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as e:
        raise LearnerError(f"Cannot read model file {path}: {e}")
    if not isinstance(document, dict) or document.get('format') != MODEL_FORMAT:
        raise LearnerError(f"{path} is not a {MODEL_FORMAT} file")
    if document.get('version') != MODEL_VERSION:
        raise LearnerError(f"Unsupported model version {document.get('version')}")
    try:
        saved = SavedModel(
            kind=document['kind'],
            model=_model_from_params(document['kind'], document['params']),
            catalog_fingerprint=document['catalog_fingerprint'],
            config=document.get('config', {}),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise LearnerError(f"Malformed model file {path}: {e}")
    if catalog is not None:
        saved.check_catalog(catalog)
    return saved


def config_dict(learner) -> Dict[str, Any]:
    """Learner settings recorded in model files."""
    if isinstance(learner, MlpLearner):
        data = asdict(learner.config)
        data['hidden_layers'] = list(learner.config.hidden_layers)
        return data
    return asdict(learner)
