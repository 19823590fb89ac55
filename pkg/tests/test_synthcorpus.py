#!/usr/bin/env python3
"""
Tests for synthcorpus module.

Tests corpus generation, depth-decay exploration, the paired scenario
datasets and the key-value generation settings.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from config import load_key_value_file
from evalcore import run_cross_validation
from ingest import (ACTION_EVENT, ATTRIBUTE, PERMISSION, FeatureCatalog, Label,
                    load_catalog, restrict_categories)
from learners import make_learner
from ranking import info_gain
from synthcorpus import (DEFAULT_R_STATEFUL, DEFAULT_R_STATELESS, STATEFUL,
                         STATELESS, AppBehaviorModel, EmptyCatalogError,
                         ExplorePolicy, GenParams, SynthError,
                         build_scenario_datasets, corpus_manifest_lines,
                         default_policies, explore, gen_corpus,
                         gen_params_from_mapping, reference_params,
                         write_corpus_manifest)

ROOT = Path(__file__).resolve().parent.parent
SHIPPED_CATALOG = ROOT / 'catalog' / 'dldroid_features.csv'
REFERENCE_CONF = ROOT / 'catalog' / 'reference_corpus.conf'


@pytest.fixture
def catalog():
    return FeatureCatalog.from_pairs([
        ('TelephonyManager;->getDeviceId', ATTRIBUTE),
        ('SmsManager;->sendTextMessage', ATTRIBUTE),
        ('action.SMS_RECEIVED', ACTION_EVENT),
        ('action.BOOT_COMPLETED', ACTION_EVENT),
        ('permission.SEND_SMS', PERMISSION),
        ('permission.INTERNET', PERMISSION),
    ])


def uniform_params(catalog, p: float, n_malware=20, n_benign=20, max_depth=3, seed=42) -> GenParams:
    width = len(catalog)
    return GenParams(n_malware, n_benign, catalog, (p,) * width, (p,) * width, max_depth, seed)


class TestGenParams:

    def test_probability_lookup(self, catalog):
        p_malware = (0.1, 0.2, 0.3, 0.4, 0.45, 0.6)
        params = GenParams(1, 1, catalog, p_malware, (0.05,) * 6)

        assert params.probability(Label.MALWARE, 'permission.SEND_SMS') == 0.45
        assert params.probability(Label.BENIGN, 'permission.SEND_SMS') == 0.05
        assert params.n_apps == 2

    @pytest.mark.parametrize('options', [
        {'n_malware': -1},
        {'max_depth': -1},
        {'p_malware': (1.5,) * 6},
        {'p_benign': (0.1,) * 5},
    ])
    def test_invalid(self, catalog, options):
        values = dict(n_malware=1, n_benign=1, catalog=catalog, p_malware=(0.1,) * 6, p_benign=(0.1,) * 6)
        values.update(options)

        with pytest.raises(SynthError):
            GenParams(**values)


class TestGenCorpus:
    """Test latent feature generation."""

    def test_probability_one_gives_full_catalog(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 1.0))

        assert len(corpus) == 40
        assert all(app.tokens == set(catalog.names) for app in corpus)

    def test_probability_zero_gives_empty_sets(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 0.0))

        assert all(app.latent == () for app in corpus)

    def test_malware_first_and_ids(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 0.5, n_malware=3, n_benign=2))

        assert [app.label for app in corpus] == [Label.MALWARE] * 3 + [Label.BENIGN] * 2
        assert corpus[0].app_id == 'app-00001'
        assert corpus[-1].app_id == 'app-00005'

    def test_depths(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 1.0, max_depth=3))

        for app in corpus:
            for token, depth in app.latent:
                if token.startswith('permission.'):
                    assert depth == 0
                    assert token in app.permissions
                else:
                    assert 1 <= depth <= 3

    def test_zero_max_depth(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 1.0, max_depth=0))

        assert all(depth == 0 for app in corpus for _, depth in app.latent)

    def test_reproducible(self, catalog):
        params = uniform_params(catalog, 0.4, seed=9)

        assert gen_corpus(params) == gen_corpus(params)
        assert gen_corpus(params) != gen_corpus(uniform_params(catalog, 0.4, seed=10))

    def test_presence_rates_follow_binomial(self, catalog):
        p_malware = [0.1] * 6
        p_benign = [0.1] * 6
        index = catalog.index_of('permission.SEND_SMS')
        p_malware[index], p_benign[index] = 0.45, 0.05
        params = GenParams(1000, 1000, catalog, tuple(p_malware), tuple(p_benign), seed=3)

        corpus = gen_corpus(params)

        for label, p in ((Label.MALWARE, 0.45), (Label.BENIGN, 0.05)):
            hits = sum(1 for app in corpus if app.label == label and 'permission.SEND_SMS' in app.tokens)
            sigma = np.sqrt(1000 * p * (1 - p))
            assert abs(hits - 1000 * p) <= 3 * sigma

    def test_empty_catalog(self):
        with pytest.raises(EmptyCatalogError):
            gen_corpus(GenParams(1, 1, FeatureCatalog(()), (), ()))

    def test_permission_depth_enforced(self):
        with pytest.raises(SynthError):
            AppBehaviorModel('a', Label.MALWARE, (('permission.SEND_SMS', 2),), frozenset({'permission.SEND_SMS'}))


class TestExplore:
    """Test depth-decay observation."""

    @pytest.fixture
    def app(self):
        latent = (('permission.SEND_SMS', 0), ('A;->a', 1), ('B;->b', 2), ('C;->c', 3))
        return AppBehaviorModel('app-00001', Label.MALWARE, latent, frozenset({'permission.SEND_SMS'}))

    def test_depth_zero_always_observed(self, app):
        for seed in range(20):
            observed = explore(app, ExplorePolicy(STATELESS, 0.01), seed)
            assert 'permission.SEND_SMS' in observed.tokens

    def test_rate_one_observes_everything(self, app):
        assert explore(app, ExplorePolicy(STATEFUL, 1.0), 7).tokens == app.tokens

    def test_observed_subset_of_latent(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 0.5))
        stateless, stateful = default_policies()

        for app in corpus:
            for policy in (stateless, stateful):
                for coupled in (True, False):
                    assert explore(app, policy, 5, coupled).tokens <= app.tokens

    def test_depth_two_fractions(self):
        """Test r**2 observation rates on 10,000 depth-2 features."""
        n = 10000
        latent = tuple((f"F{i};->x", 2) for i in range(n))
        app = AppBehaviorModel('app-00001', Label.BENIGN, latent)

        for rate, expected in ((0.6, 0.36), (0.9, 0.81)):
            observed = len(explore(app, ExplorePolicy(STATEFUL, rate), 11).tokens) / n
            sigma = np.sqrt(expected * (1 - expected) / n)
            assert abs(observed - expected) <= 3 * sigma

    def test_coupled_superset(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 0.7, n_malware=50, n_benign=50))
        stateless, stateful = default_policies()

        for app in corpus:
            assert explore(app, stateless, 3).tokens <= explore(app, stateful, 3).tokens

    def test_event_budget_keeps_shallowest(self, app):
        observed = explore(app, ExplorePolicy(STATEFUL, 1.0, event_budget=1), 1)

        assert observed.tokens == {'permission.SEND_SMS', 'A;->a'}

    def test_zero_budget_keeps_permissions(self, app):
        observed = explore(app, ExplorePolicy(STATEFUL, 1.0, event_budget=0), 1)

        assert observed.tokens == {'permission.SEND_SMS'}

    @pytest.mark.parametrize('mode,rate', [('random', 0.5), (STATEFUL, 0.0), (STATEFUL, 1.5)])
    def test_invalid_policy(self, mode, rate):
        with pytest.raises(SynthError):
            ExplorePolicy(mode, rate)

    def test_default_rates(self):
        stateless, stateful = default_policies()

        assert stateless.trigger_rate == DEFAULT_R_STATELESS == 0.6
        assert stateful.trigger_rate == DEFAULT_R_STATEFUL == 0.9
        assert stateful.trigger_rate > stateless.trigger_rate


class TestScenarioDatasets:
    """Test the paired stateless/stateful datasets."""

    def test_same_apps_and_labels(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 0.5))
        stateless, stateful = default_policies()

        low, high = build_scenario_datasets(corpus, stateless, stateful, 1, catalog)

        assert [s.app_id for s in low.samples] == [s.app_id for s in high.samples]
        assert low.labels().tolist() == high.labels().tolist()

    def test_permission_columns_identical(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 0.5))
        stateless, stateful = default_policies()

        low, high = build_scenario_datasets(corpus, stateless, stateful, 1, catalog, coupled=False)

        columns = catalog.indices_of_categories([PERMISSION])
        assert np.array_equal(low.matrix()[:, columns], high.matrix()[:, columns])

    def test_popcount_monotone_when_coupled(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 0.6, n_malware=100, n_benign=100))
        stateless, stateful = default_policies()

        low, high = build_scenario_datasets(corpus, stateless, stateful, 8, catalog)

        assert np.all(high.matrix().sum(axis=1) >= low.matrix().sum(axis=1))
        assert np.all(high.matrix() >= low.matrix())

    def test_equal_rates_give_equal_datasets(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 0.6))
        policy = 0.75

        low, high = build_scenario_datasets(corpus, ExplorePolicy(STATELESS, policy),
                                            ExplorePolicy(STATEFUL, policy), 2, catalog)

        assert low == high

    def test_stateful_info_gain_higher_on_reference_corpus(self):
        catalog = load_catalog(SHIPPED_CATALOG)
        params = reference_params(catalog, 1000, 1000, seed=42)
        corpus = gen_corpus(params)
        stateless, stateful = default_policies()

        low, high = build_scenario_datasets(corpus, stateless, stateful, 42, catalog)

        for token in ('TelephonyManager;->getDeviceId', 'action.SMS_RECEIVED'):
            column = catalog.index_of(token)
            gain_low = info_gain(low.matrix()[:, column], low.labels())
            gain_high = info_gain(high.matrix()[:, column], high.labels())
            assert gain_high > gain_low

        dynamic_low = restrict_categories(low, (ATTRIBUTE, ACTION_EVENT))
        dynamic_high = restrict_categories(high, (ATTRIBUTE, ACTION_EVENT))
        assert dynamic_high.matrix().sum() > dynamic_low.matrix().sum()


@pytest.mark.slow
class TestReferenceCorpusComparison:
    """Compare the two scenarios on the shipped 2,000-app corpus."""

    @pytest.fixture(scope='class')
    def scenario_pair(self):
        mapping = load_key_value_file(REFERENCE_CONF)
        settings = gen_params_from_mapping(mapping, base_dir=REFERENCE_CONF.parent)
        corpus = gen_corpus(settings.params)
        return build_scenario_datasets(corpus, settings.stateless, settings.stateful,
                                       settings.params.seed, settings.params.catalog,
                                       settings.coupled)

    def test_stateful_observations_superset(self, scenario_pair):
        low, high = scenario_pair

        assert len(low) == 2000
        assert np.all(high.matrix() >= low.matrix())

    @pytest.mark.parametrize('kind', ['mlp', 'nb', 'tree'])
    def test_stateful_weighted_fm_higher(self, scenario_pair, kind):
        low, high = scenario_pair

        fm_low = run_cross_validation(make_learner(kind), low, 10, 42).report.weighted_fm
        fm_high = run_cross_validation(make_learner(kind), high, 10, 42).report.weighted_fm

        assert fm_high > fm_low


class TestReferenceParams:

    def test_table_rates_applied(self):
        catalog = load_catalog(SHIPPED_CATALOG)

        params = reference_params(catalog, 10, 10, seed=1)

        assert params.probability(Label.MALWARE, 'permission.SEND_SMS') == pytest.approx(5128 / 11505)
        assert params.probability(Label.BENIGN, 'permission.SEND_SMS') == pytest.approx(1084 / 19620)
        assert all(0.0 <= p <= 1.0 for p in params.p_malware + params.p_benign)

    def test_seeded(self):
        catalog = load_catalog(SHIPPED_CATALOG)

        assert reference_params(catalog, 5, 5, seed=3) == reference_params(catalog, 5, 5, seed=3)


class TestSettingsFromMapping:
    """Test key-value generation settings."""

    def test_shipped_reference_config(self):
        mapping = load_key_value_file(REFERENCE_CONF)

        settings = gen_params_from_mapping(mapping, base_dir=REFERENCE_CONF.parent)

        assert settings.params.n_malware == 740
        assert settings.params.n_benign == 1260
        assert len(settings.params.catalog) == 420
        assert settings.stateless.trigger_rate == 0.6
        assert settings.stateful.trigger_rate == 0.9
        assert settings.stateful.event_budget is None
        assert settings.coupled is True

    def test_defaults_and_overrides(self, catalog):
        mapping = {
            'n_malware': '4', 'n_benign': '6', 'default_p_malware': '0.2',
            'p.malware.permission.SEND_SMS': '0.9', 'p.benign.action.SMS_RECEIVED': '0.0',
            'event_budget': '5', 'coupled': 'no',
        }

        settings = gen_params_from_mapping(mapping, catalog)

        assert settings.params.probability(Label.MALWARE, 'permission.SEND_SMS') == 0.9
        assert settings.params.probability(Label.MALWARE, 'permission.INTERNET') == 0.2
        assert settings.params.probability(Label.BENIGN, 'action.SMS_RECEIVED') == 0.0
        assert settings.params.probability(Label.BENIGN, 'permission.INTERNET') == 0.1
        assert settings.stateless.event_budget == 5
        assert settings.coupled is False

    def test_unknown_key(self, catalog):
        with pytest.raises(SynthError) as exc_info:
            gen_params_from_mapping({'n_apps': '3'}, catalog)

        assert 'n_apps' in str(exc_info.value)

    def test_override_for_unknown_token(self, catalog):
        with pytest.raises(SynthError):
            gen_params_from_mapping({'p.malware.permission.CAMERA': '0.5'}, catalog)

    def test_missing_catalog(self):
        with pytest.raises(SynthError):
            gen_params_from_mapping({'n_malware': '3'})

    def test_bad_number(self, catalog):
        with pytest.raises(SynthError):
            gen_params_from_mapping({'n_malware': 'many'}, catalog)


class TestCorpusManifest:

    def test_json_lines(self, tmp_path, catalog):
        corpus = gen_corpus(uniform_params(catalog, 0.5, n_malware=2, n_benign=1))
        path = tmp_path / 'corpus.jsonl'

        write_corpus_manifest(corpus, path, header='# dldroid 1.0.0 | command: synth | seed: 42')

        lines = path.read_text(encoding='utf-8').splitlines()
        assert json.loads(lines[0]) == {'provenance': '# dldroid 1.0.0 | command: synth | seed: 42'}
        first = json.loads(lines[1])
        assert first['app_id'] == 'app-00001'
        assert first['label'] == 1
        assert [tuple(pair) for pair in first['latent']] == list(corpus[0].latent)
        assert len(lines) == 4

    def test_no_header(self, catalog):
        corpus = gen_corpus(uniform_params(catalog, 0.5, n_malware=1, n_benign=1))

        assert len(corpus_manifest_lines(corpus)) == 2
