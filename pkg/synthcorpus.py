#!/usr/bin/env python3
"""
Synthetic app corpora and simulated input generation.

Each synthetic app carries a latent set of features, every one tagged with the
depth of app state at which it becomes reachable (permissions sit at depth 0).
An exploration policy with trigger rate ``r`` observes a depth-``d`` feature
with probability ``r**d``. With coupled sampling both policies share one
uniform draw per (app, feature), so a higher rate always observes a superset.
"""

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import ConfigError, parse_bool
from ingest import (PERMISSION, Dataset, FeatureCatalog, Label, ObservationSet,
                    atomic_write_text, load_catalog, vectorize)
from logging_conf import get_logger, log_operation_result, log_operation_start

logger = get_logger('dldroid.synthcorpus')

STATELESS = 'stateless'
STATEFUL = 'stateful'
EXPLORE_MODES = (STATELESS, STATEFUL)

DEFAULT_MAX_DEPTH = 3
DEFAULT_R_STATELESS = 0.6
DEFAULT_R_STATEFUL = 0.9
DEFAULT_P_MALWARE = 0.1
DEFAULT_P_BENIGN = 0.1

# Presence counts (malware, benign) of top-ranked features, observed over
# 11,505 malware and 19,620 benign apps under stateful exploration
REFERENCE_TOTALS = (11505, 19620)
REFERENCE_PRESENCE: Dict[str, Tuple[int, int]] = {
    'TelephonyManager;->getDeviceId': (4899, 2011),
    'com.android.vending.INSTALL_REFERRER': (741, 7285),
    'action.SMS_RECEIVED': (2421, 665),
    'TelephonyManager;->getSubscriberId': (1993, 387),
    'action.USER_PRESENT': (2633, 912),
    'methods/HttpPost;-><init>': (3408, 1985),
    'TelephonyManager;->getLine1Number': (1429, 278),
    'WifiManager;->getConnectionInfo': (2680, 792),
    'content/Context;->bindService': (573, 2271),
    'Ljava/util/TimerTask;-><init>': (7399, 4068),
    'Ljava/io/FileOutputStream;->write': (3775, 1563),
    'PackageManager;->checkPermission': (2726, 858),
    'Landroid/net/NetworkInfo;->getState': (1632, 396),
    'Ljava/io/File;->exists': (6217, 3361),
    'security/MessageDigest;->getInstance': (4905, 2779),
    'Landroid/content/Context;->unbindService': (264, 1347),
    'action.PHONE_STATE': (1030, 215),
    'action.PACKAGE_ADDED': (1540, 508),
    'TelephonyManager;->getSimSerialNumber': (859, 157),
    'SmsManager;->sendTextMessage': (351, 2),
    'action.MOUNT_UNMOUNT_FILESYSTEMS': (2889, 781),
    'action.NEW_OUTGOING_CALL': (655, 182),
    'permission.SEND_SMS': (5128, 1084),
    'permission.READ_PHONE_STATE': (10508, 10183),
    'permission.RECEIVE_SMS': (4054, 1565),
    'permission.WRITE_SMS': (2847, 764),
    'permission.READ_SMS': (3592, 1429),
    'permission.SYSTEM_ALERT_WINDOW': (4314, 2276),
    'permission.INSTALL_PACKAGES': (1640, 290),
    'permission.ACCESS_MTK_MMHW': (1092, 29),
    'permission.GET_TASKS': (5790, 5040),
    'permission.RECEIVE_BOOT_COMPLETED': (6648, 6378),
    'permission.USE_CREDENTIALS': (313, 3369),
    'permission.ACCESS_WIFI_STATE': (8406, 9802),
    'permission.GET_ACCOUNTS': (3012, 8601),
}

# Background rates for features outside the reference table
BACKGROUND_RANGE = (0.01, 0.25)
BACKGROUND_SHIFT = 0.05

CONFIG_KEYS = frozenset({
    'n_malware', 'n_benign', 'max_depth', 'seed', 'catalog', 'reference',
    'default_p_malware', 'default_p_benign', 'r_stateless', 'r_stateful',
    'event_budget', 'coupled',
})


class SynthError(Exception):
    """Base exception for synthetic corpus errors."""
    pass


class EmptyCatalogError(SynthError):
    pass


@dataclass(frozen=True)
class GenParams:
    """Corpus shape; p_malware[i] / p_benign[i] belong to catalog feature i."""

    n_malware: int
    n_benign: int
    catalog: FeatureCatalog
    p_malware: Tuple[float, ...]
    p_benign: Tuple[float, ...]
    max_depth: int = DEFAULT_MAX_DEPTH
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, 'p_malware', tuple(float(p) for p in self.p_malware))
        object.__setattr__(self, 'p_benign', tuple(float(p) for p in self.p_benign))
        if self.n_malware < 0 or self.n_benign < 0:
            raise SynthError(f"Class sizes must be nonnegative: {self.n_malware}/{self.n_benign}")
        if self.max_depth < 0:
            raise SynthError(f"max_depth must be nonnegative, got {self.max_depth}")
        width = len(self.catalog)
        if len(self.p_malware) != width or len(self.p_benign) != width:
            raise SynthError(f"Probability vectors must have {width} entries")
        for p in self.p_malware + self.p_benign:
            if not 0.0 <= p <= 1.0:
                raise SynthError(f"Probability out of range: {p}")

    @property
    def n_apps(self) -> int:
        return self.n_malware + self.n_benign

    def probability(self, label: Label, token: str) -> float:
        probabilities = self.p_malware if label == Label.MALWARE else self.p_benign
        return probabilities[self.catalog.index_of(token)]


@dataclass(frozen=True)
class AppBehaviorModel:
    app_id: str
    label: Label
    # (token, depth) in catalog order
    latent: Tuple[Tuple[str, int], ...]
    permissions: FrozenSet[str] = frozenset()

    def __post_init__(self):
        for token, depth in self.latent:
            if depth < 0 or (token in self.permissions and depth != 0):
                raise SynthError(f"{self.app_id}: invalid depth {depth} for {token}")

    @property
    def tokens(self) -> FrozenSet[str]:
        return frozenset(token for token, _ in self.latent)


@dataclass(frozen=True)
class ExplorePolicy:
    mode: str
    trigger_rate: float
    # max dynamic features observed per app, shallowest first; None = unlimited
    event_budget: Optional[int] = None

    def __post_init__(self):
        if self.mode not in EXPLORE_MODES:
            raise SynthError(f"Unknown exploration mode '{self.mode}'")
        if not 0.0 < self.trigger_rate <= 1.0:
            raise SynthError(f"Trigger rate must be in (0, 1], got {self.trigger_rate}")
        if self.event_budget is not None and self.event_budget < 0:
            raise SynthError(f"Event budget must be nonnegative, got {self.event_budget}")


def default_policies() -> Tuple[ExplorePolicy, ExplorePolicy]:
    return ExplorePolicy(STATELESS, DEFAULT_R_STATELESS), ExplorePolicy(STATEFUL, DEFAULT_R_STATEFUL)


def _app_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def gen_corpus(p: GenParams) -> List[AppBehaviorModel]:
    """
    Draw every app's latent features from its class-conditional Bernoulli rates.

    Malware apps come first. Each app uses its own generator derived from
    (seed, app index), so any subset of apps can be regenerated independently.
    """
    if len(p.catalog) == 0:
        raise EmptyCatalogError("Cannot generate a corpus over an empty catalog")
    log_operation_start("corpus generation", malware=p.n_malware, benign=p.n_benign,
                        features=len(p.catalog), max_depth=p.max_depth, seed=p.seed)

    names = p.catalog.names
    is_permission = np.array([f.category == PERMISSION for f in p.catalog.features])
    probabilities = {
        Label.MALWARE: np.array(p.p_malware),
        Label.BENIGN: np.array(p.p_benign),
    }

    corpus: List[AppBehaviorModel] = []
    for index in range(p.n_apps):
        label = Label.MALWARE if index < p.n_malware else Label.BENIGN
        rng = _app_rng(p.seed, index)
        present = rng.random(len(names)) < probabilities[label]
        if p.max_depth > 0:
            depths = rng.integers(1, p.max_depth + 1, size=len(names))
        else:
            depths = np.zeros(len(names), dtype=np.int64)
        depths[is_permission] = 0
        latent = tuple((names[i], int(depths[i])) for i in np.flatnonzero(present))
        permissions = frozenset(names[i] for i in np.flatnonzero(present & is_permission))
        corpus.append(AppBehaviorModel(f"app-{index + 1:05d}", label, latent, permissions))

    log_operation_result("corpus generation", True, len(corpus))
    return corpus


def _explore_rng(app: AppBehaviorModel, policy: ExplorePolicy, seed: int, coupled: bool) -> np.random.Generator:
    app_key = zlib.crc32(app.app_id.encode('utf-8'))
    if coupled:
        return np.random.default_rng([seed, app_key])
    return np.random.default_rng([seed, app_key, EXPLORE_MODES.index(policy.mode) + 1])


def explore(app: AppBehaviorModel, policy: ExplorePolicy, seed: int, coupled: bool = True) -> ObservationSet:
    """Observe each latent feature at depth d with probability r**d."""
    uniforms = _explore_rng(app, policy, seed, coupled).random(len(app.latent))
    observed = [
        (depth, position, token)
        for position, ((token, depth), u) in enumerate(zip(app.latent, uniforms))
        if depth == 0 or u < policy.trigger_rate ** depth
    ]
    if policy.event_budget is not None:
        static = [entry for entry in observed if entry[0] == 0 and entry[2] in app.permissions]
        dynamic = sorted(entry for entry in observed if entry not in static)
        observed = static + dynamic[:policy.event_budget]
    return ObservationSet(frozenset(token for _, _, token in observed))


def build_scenario_datasets(corpus: Sequence[AppBehaviorModel], stateless: ExplorePolicy,
                            stateful: ExplorePolicy, seed: int, catalog: FeatureCatalog,
                            coupled: bool = True) -> Tuple[Dataset, Dataset]:
    """Explore every app under both policies; returns (stateless, stateful) datasets."""
    log_operation_start("scenario exploration", apps=len(corpus), stateless=stateless.trigger_rate,
                        stateful=stateful.trigger_rate, coupled=coupled)
    datasets = []
    for policy in (stateless, stateful):
        samples = tuple(
            vectorize(explore(app, policy, seed, coupled), app.label, catalog, app.app_id)
            for app in corpus
        )
        datasets.append(Dataset(catalog, samples))
    log_operation_result("scenario exploration", True, 2 * len(corpus))
    return datasets[0], datasets[1]


def reference_params(catalog: FeatureCatalog, n_malware: int, n_benign: int, seed: int,
                     max_depth: int = DEFAULT_MAX_DEPTH) -> GenParams:
    """
    Class-conditional rates seeded from the reference presence table.

    Features outside the table get a seeded background rate shifted by a small
    random amount between the classes.
    """
    rng = np.random.default_rng(seed)
    base = rng.uniform(*BACKGROUND_RANGE, size=len(catalog))
    shift = rng.uniform(-BACKGROUND_SHIFT, BACKGROUND_SHIFT, size=len(catalog))
    p_malware = np.clip(base + shift, 0.0, 1.0)
    p_benign = np.clip(base - shift, 0.0, 1.0)

    total_malware, total_benign = REFERENCE_TOTALS
    matched = 0
    for token, (malware, benign) in REFERENCE_PRESENCE.items():
        if token in catalog:
            index = catalog.index_of(token)
            p_malware[index] = malware / total_malware
            p_benign[index] = benign / total_benign
            matched += 1
    logger.debug(f"Reference rates matched {matched} of {len(REFERENCE_PRESENCE)} table features")
    return GenParams(n_malware, n_benign, catalog, tuple(p_malware), tuple(p_benign), max_depth, seed)


@dataclass(frozen=True)
class SynthSettings:
    params: GenParams
    stateless: ExplorePolicy
    stateful: ExplorePolicy
    coupled: bool = True


def _int_value(mapping: Mapping[str, str], key: str, default: int) -> int:
    try:
        return int(mapping.get(key, default))
    except ValueError:
        raise SynthError(f"{key} must be an integer, got '{mapping[key]}'")


def _float_value(mapping: Mapping[str, str], key: str, default: float) -> float:
    try:
        return float(mapping.get(key, default))
    except ValueError:
        raise SynthError(f"{key} must be a number, got '{mapping[key]}'")


def gen_params_from_mapping(mapping: Mapping[str, str], catalog: Optional[FeatureCatalog] = None,
                            base_dir: Optional[Path] = None) -> SynthSettings:
    """
    Build generation settings from a key-value configuration.

    ``catalog`` wins over the ``catalog`` key, whose path is resolved against
    ``base_dir``. ``p.malware.<token>`` / ``p.benign.<token>`` override single
    feature rates on top of the reference or default rates.
    """
    unknown = [key for key in mapping
               if key not in CONFIG_KEYS and not key.startswith(('p.malware.', 'p.benign.'))]
    if unknown:
        raise SynthError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")

    if catalog is None:
        if 'catalog' not in mapping:
            raise SynthError("No catalog given (set the 'catalog' key or pass --catalog)")
        catalog_path = Path(mapping['catalog'])
        if base_dir is not None and not catalog_path.is_absolute():
            catalog_path = base_dir / catalog_path
        catalog = load_catalog(catalog_path)

    n_malware = _int_value(mapping, 'n_malware', 100)
    n_benign = _int_value(mapping, 'n_benign', 100)
    max_depth = _int_value(mapping, 'max_depth', DEFAULT_MAX_DEPTH)
    seed = _int_value(mapping, 'seed', 42)
    try:
        use_reference = parse_bool(mapping.get('reference', 'false'))
        coupled = parse_bool(mapping.get('coupled', 'true'))
    except ConfigError as e:
        raise SynthError(str(e))

    if use_reference:
        base = reference_params(catalog, n_malware, n_benign, seed, max_depth)
        p_malware, p_benign = list(base.p_malware), list(base.p_benign)
    else:
        p_malware = [_float_value(mapping, 'default_p_malware', DEFAULT_P_MALWARE)] * len(catalog)
        p_benign = [_float_value(mapping, 'default_p_benign', DEFAULT_P_BENIGN)] * len(catalog)

    for key in mapping:
        if not key.startswith(('p.malware.', 'p.benign.')):
            continue
        _, label_name, token = key.split('.', 2)
        if token not in catalog:
            raise SynthError(f"{key}: '{token}' is not in the catalog")
        target = p_malware if label_name == 'malware' else p_benign
        target[catalog.index_of(token)] = _float_value(mapping, key, 0.0)

    budget = mapping.get('event_budget', '').strip()
    event_budget = _int_value(mapping, 'event_budget', 0) if budget else None
    params = GenParams(n_malware, n_benign, catalog, tuple(p_malware), tuple(p_benign), max_depth, seed)
    return SynthSettings(
        params=params,
        stateless=ExplorePolicy(STATELESS, _float_value(mapping, 'r_stateless', DEFAULT_R_STATELESS), event_budget),
        stateful=ExplorePolicy(STATEFUL, _float_value(mapping, 'r_stateful', DEFAULT_R_STATEFUL), event_budget),
        coupled=coupled,
    )


def corpus_manifest_lines(corpus: Sequence[AppBehaviorModel], header: Optional[str] = None) -> List[str]:
    lines = []
    if header:
        lines.append(json.dumps({'provenance': header}))
    for app in corpus:
        lines.append(json.dumps({
            'app_id': app.app_id,
            'label': int(app.label),
            'latent': [[token, depth] for token, depth in app.latent],
        }))
    return lines


def write_corpus_manifest(corpus: Sequence[AppBehaviorModel], path, header: Optional[str] = None) -> None:
    """JSON lines: an optional provenance object, then one object per app."""
    atomic_write_text(path, ''.join(line + '\n' for line in corpus_manifest_lines(corpus, header)))
    logger.info(f"Wrote corpus manifest for {len(corpus)} apps to {path}")
