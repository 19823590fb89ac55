#!/usr/bin/env python3
"""
Tests for the dldroid command-line interface.

Runs main() end to end on small files and checks outputs and exit codes.
"""

import io
import os
import struct
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from app import DEFAULT_CATALOG, build_parser, main
from ingest import Dataset, FeatureCatalog, load_catalog, read_csv, write_csv
from learners import load_model
from tests.axml_builder import build_apk, document, manifest_apk

M, B = 1, 0

SMALL_CATALOG = """\
TelephonyManager;->getDeviceId,attribute
SmsManager;->sendTextMessage,attribute
action.SMS_RECEIVED,action_event
action.BOOT_COMPLETED,action_event
permission.SEND_SMS,permission
permission.INTERNET,permission
"""


def read_tsv(text: str) -> pd.DataFrame:
    """Drop the provenance line and parse the rest as strings."""
    lines = text.splitlines()
    assert lines[0].startswith('# dldroid ')
    return pd.read_csv(io.StringIO('\n'.join(lines[1:]) + '\n'), sep='\t', dtype=str)


def body(path) -> str:
    return path.read_text(encoding='utf-8').split('\n', 1)[1]


@pytest.fixture(autouse=True)
def clean_environment():
    kept = {key: value for key, value in os.environ.items() if not key.startswith('DLDROID_')}
    with patch.dict(os.environ, kept, clear=True):
        yield


@pytest.fixture
def dataset_csv(tmp_path):
    rng = np.random.default_rng(7)
    labels = np.array([M, B] * 20)
    names = ['TelephonyManager;->getDeviceId', 'action.SMS_RECEIVED', 'permission.SEND_SMS', 'Ljava/io/File;->exists']
    matrix = np.column_stack([labels, rng.integers(0, 2, size=40), labels, rng.integers(0, 2, size=40)])
    ds = Dataset.from_arrays(FeatureCatalog.from_names(names), matrix, labels)
    path = tmp_path / 'stateful.csv'
    write_csv(ds, path)
    return path


@pytest.fixture
def synth_params(tmp_path):
    (tmp_path / 'small.csv').write_text(SMALL_CATALOG, encoding='utf-8')
    path = tmp_path / 'small.conf'
    path.write_text(
        "catalog = small.csv\n"
        "seed = 5\n"
        "n_malware = 30\n"
        "n_benign = 30\n"
        "default_p_malware = 0.3\n"
        "p.malware.permission.SEND_SMS = 0.8\n"
        "p.malware.TelephonyManager;->getDeviceId = 0.7\n",
        encoding='utf-8'
    )
    return path


class TestMain:
    """Test entry point behaviour."""

    def test_no_command_prints_help(self, capsys):
        assert main([]) == 2
        assert 'usage' in capsys.readouterr().out

    def test_bad_environment_is_input_error(self, dataset_csv):
        with patch.dict(os.environ, {'DLDROID_FOLDS': 'ten'}):
            assert main(['rank', str(dataset_csv)]) == 2

    def test_missing_dataset(self, tmp_path):
        assert main(['rank', str(tmp_path / 'absent.csv')]) == 2

    def test_missing_argument_exits_with_usage_error(self):
        with pytest.raises(SystemExit) as exc_info:
            build_parser().parse_args(['rank'])

        assert exc_info.value.code == 2

    def test_logs_stay_off_stdout(self, dataset_csv, capsys):
        assert main(['rank', str(dataset_csv)]) == 0

        captured = capsys.readouterr()
        assert 'Starting feature ranking' not in captured.out


class TestExtractCommand:

    def test_good_and_bad_apks(self, tmp_path, capsys):
        apks = tmp_path / 'apks'
        apks.mkdir()
        (apks / 'good.apk').write_bytes(manifest_apk('com.example.sms', [
            'android.permission.SEND_SMS', 'android.permission.INTERNET',
        ]))
        (apks / 'bad.apk').write_bytes(b'not a zip archive')
        out_dir = tmp_path / 'perms'

        code = main(['extract', str(apks), '--out-dir', str(out_dir)])

        assert code == 2
        report = read_tsv(capsys.readouterr().out)
        assert dict(zip(report['apk'], report['status'])) == {'bad.apk': 'error', 'good.apk': 'ok'}
        tokens = body(out_dir / 'good.perms.txt').split()
        assert tokens == ['permission.SEND_SMS', 'permission.INTERNET']
        assert not (out_dir / 'bad.perms.txt').exists()

    def test_malformed_manifest_reported_and_run_continues(self, tmp_path, capsys):
        apks = tmp_path / 'apks'
        apks.mkdir()
        broken_manifest = document(struct.pack('<HHI', 0x0180, 16, 12) + b'\x00' * 4)
        (apks / 'a_broken.apk').write_bytes(build_apk({'AndroidManifest.xml': broken_manifest}))
        (apks / 'b_good.apk').write_bytes(manifest_apk('com.example.b', ['android.permission.CAMERA']))

        code = main(['extract', str(apks), '--out-dir', str(tmp_path / 'perms')])

        assert code == 2
        report = read_tsv(capsys.readouterr().out)
        assert dict(zip(report['apk'], report['status'])) == {'a_broken.apk': 'error', 'b_good.apk': 'ok'}
        assert (tmp_path / 'perms' / 'b_good.perms.txt').exists()

    def test_all_good(self, tmp_path):
        apk = tmp_path / 'one.apk'
        apk.write_bytes(manifest_apk('com.example.one', ['android.permission.CAMERA']))

        assert main(['extract', str(apk), '--out-dir', str(tmp_path / 'perms'),
                     '--out', str(tmp_path / 'report.tsv')]) == 0
        assert (tmp_path / 'report.tsv').exists()


class TestVectorizeCommand:
    """Test building a scenario CSV from logs and permission lists."""

    @pytest.fixture
    def inputs(self, tmp_path):
        logs = tmp_path / 'logs'
        perms = tmp_path / 'perms'
        logs.mkdir()
        perms.mkdir()
        (logs / 'app1.log').write_text(
            "TelephonyManager;->getDeviceId\naction.SMS_RECEIVED\ncom.example.NOT_A_FEATURE\n", encoding='utf-8')
        (perms / 'app1.perms.txt').write_text("# header\npermission.SEND_SMS\n", encoding='utf-8')
        (logs / 'app2.log').write_text("action.BOOT_COMPLETED\n", encoding='utf-8')
        labels = tmp_path / 'labels.csv'
        labels.write_text("app_id,label\napp1,1\napp2,0\n", encoding='utf-8')
        return logs, perms, labels

    def test_vectorize(self, tmp_path, inputs):
        logs, perms, labels = inputs
        out = tmp_path / 'stateful.csv'
        unknown = tmp_path / 'unknown.tsv'

        code = main(['vectorize', '--logs', str(logs), '--perms', str(perms), '--labels', str(labels),
                     '--out', str(out), '--unknown-report', str(unknown)])

        assert code == 0
        catalog = load_catalog(DEFAULT_CATALOG)
        ds = read_csv(out, catalog)
        assert ds.labels().tolist() == [M, B]
        first = ds.matrix()[0]
        for token in ('TelephonyManager;->getDeviceId', 'action.SMS_RECEIVED', 'permission.SEND_SMS'):
            assert first[catalog.index_of(token)] == 1
        assert first.sum() == 3
        assert ds.matrix()[1].sum() == 1
        assert 'com.example.NOT_A_FEATURE' in unknown.read_text(encoding='utf-8')

    def test_missing_label(self, tmp_path, inputs):
        logs, perms, labels = inputs
        labels.write_text("app1,1\n", encoding='utf-8')

        code = main(['vectorize', '--logs', str(logs), '--labels', str(labels),
                     '--out', str(tmp_path / 'out.csv')])

        assert code == 2

    def test_undecodable_log_is_input_error(self, tmp_path, inputs):
        logs, perms, labels = inputs
        (logs / 'app2.log').write_bytes(b'\xff\xfeaction.BOOT_COMPLETED\n')

        code = main(['vectorize', '--logs', str(logs), '--labels', str(labels),
                     '--out', str(tmp_path / 'out.csv')])

        assert code == 2
        assert not (tmp_path / 'out.csv').exists()


class TestRankCommand:

    def test_ranked_table(self, dataset_csv, capsys):
        assert main(['rank', str(dataset_csv), '--top', '2']) == 0

        table = read_tsv(capsys.readouterr().out)
        assert list(table.columns) == ['rank', 'name', 'malware_present', 'benign_present', 'info_gain']
        assert len(table) == 2
        # the two label-equal columns tie at 1 bit and sort by name
        assert table['name'].tolist() == ['TelephonyManager;->getDeviceId', 'permission.SEND_SMS']
        assert table['info_gain'].tolist() == ['1.000000', '1.000000']

    def test_projected_csv(self, tmp_path, dataset_csv):
        projected = tmp_path / 'top1.csv'

        assert main(['rank', str(dataset_csv), '--top', '1', '--projected', str(projected),
                     '--out', str(tmp_path / 'rank.tsv')]) == 0

        ds = read_csv(projected)
        assert ds.catalog.names == ('TelephonyManager;->getDeviceId',)

    def test_projected_needs_top(self, tmp_path, dataset_csv):
        assert main(['rank', str(dataset_csv), '--projected', str(tmp_path / 'x.csv')]) == 2

    @pytest.mark.parametrize('top', ['0', '-1'])
    def test_top_must_be_positive(self, dataset_csv, top):
        assert main(['rank', str(dataset_csv), '--top', top]) == 2

    def test_undecodable_csv_is_input_error(self, tmp_path):
        path = tmp_path / 'bad.csv'
        path.write_bytes(b'permission.SEND_SMS\xff,class\n1,1\n0,0\n')

        assert main(['rank', str(path)]) == 2

    def test_dynamic_feature_set(self, dataset_csv, capsys):
        assert main(['rank', str(dataset_csv), '--feature-set', 'dynamic']) == 0

        table = read_tsv(capsys.readouterr().out)
        assert 'permission.SEND_SMS' not in table['name'].tolist()


class TestGridCommand:

    def test_custom_grid(self, tmp_path, dataset_csv, capsys):
        grid = tmp_path / 'grid.txt'
        grid.write_text("3\n5,5\n", encoding='utf-8')

        code = main(['grid', str(dataset_csv), '--grid', str(grid), '--epochs', '2', '--k', '2', '--seed', '1'])

        assert code == 0
        table = read_tsv(capsys.readouterr().out)
        assert sorted(table['neurons'].tolist()) == ['3', '5,5']
        assert 'runtime' in table.columns

    def test_missing_grid_file(self, tmp_path, dataset_csv):
        assert main(['grid', str(dataset_csv), '--grid', str(tmp_path / 'absent.txt')]) == 2


class TestTrainAndEvalCommands:
    """Test model training, saved-model evaluation and cross-validation."""

    def test_cross_validated_eval(self, dataset_csv, capsys):
        assert main(['eval', str(dataset_csv), '--model', 'nb', '--k', '4']) == 0

        table = read_tsv(capsys.readouterr().out)
        assert len(table) == 1
        assert table['w-FM'][0] == '1.0000'
        assert table['neurons'][0] == '-'

    def test_small_mlp_eval(self, dataset_csv, capsys):
        assert main(['eval', str(dataset_csv), '--layers', '4', '--epochs', '2', '--k', '2']) == 0

        table = read_tsv(capsys.readouterr().out)
        assert table['neurons'][0] == '4'

    def test_train_then_eval_model_file(self, tmp_path, dataset_csv, capsys):
        model_path = tmp_path / 'model.json'

        assert main(['train', str(dataset_csv), '--model', 'tree', '--out', str(model_path)]) == 0
        saved = load_model(model_path)
        assert saved.kind == 'tree'
        assert saved.config['provenance'].startswith('# dldroid ')

        assert main(['eval', str(dataset_csv), '--model-file', str(model_path)]) == 0
        table = read_tsv(capsys.readouterr().out)
        assert table['Accuracy'][0] == '1.0000'

    def test_model_file_catalog_mismatch(self, tmp_path, dataset_csv):
        model_path = tmp_path / 'model.json'
        main(['train', str(dataset_csv), '--model', 'nb', '--out', str(model_path)])
        other = Dataset.from_arrays(FeatureCatalog.from_names(['A;->a']), [[1], [0]], [M, B])
        other_csv = tmp_path / 'other.csv'
        write_csv(other, other_csv)

        assert main(['eval', str(other_csv), '--model-file', str(model_path)]) == 2


class TestSynthAndCompareCommands:
    """Test the synthetic corpus workflow."""

    def test_synth_outputs(self, tmp_path, synth_params):
        out_dir = tmp_path / 'synthetic'

        assert main(['synth', str(synth_params), '--out-dir', str(out_dir)]) == 0

        stateless = read_csv(out_dir / 'stateless.csv')
        stateful = read_csv(out_dir / 'stateful.csv')
        assert len(stateless) == len(stateful) == 60
        assert np.all(stateful.matrix() >= stateless.matrix())
        manifest_lines = (out_dir / 'corpus.jsonl').read_text(encoding='utf-8').splitlines()
        assert len(manifest_lines) == 61

    def test_synth_deterministic(self, tmp_path, synth_params):
        main(['synth', str(synth_params), '--out-dir', str(tmp_path / 'a')])
        main(['synth', str(synth_params), '--out-dir', str(tmp_path / 'b')])

        for name in ('stateless.csv', 'stateful.csv', 'corpus.jsonl'):
            first = (tmp_path / 'a' / name).read_text(encoding='utf-8').splitlines()[1:]
            second = (tmp_path / 'b' / name).read_text(encoding='utf-8').splitlines()[1:]
            assert first == second

    def test_seed_override_recorded(self, tmp_path, synth_params):
        out_dir = tmp_path / 'seeded'

        assert main(['synth', str(synth_params), '--out-dir', str(out_dir), '--seed', '9']) == 0

        assert (out_dir / 'stateful.csv').read_text(encoding='utf-8').splitlines()[0].endswith('seed: 9')

    def test_bad_params(self, tmp_path):
        params = tmp_path / 'bad.conf'
        params.write_text("n_apps = 3\n", encoding='utf-8')

        assert main(['synth', str(params), '--out-dir', str(tmp_path / 'out')]) == 2

    def test_compare(self, tmp_path, synth_params, capsys):
        out_dir = tmp_path / 'synthetic'
        main(['synth', str(synth_params), '--out-dir', str(out_dir)])
        capsys.readouterr()

        code = main(['compare', str(out_dir / 'stateless.csv'), str(out_dir / 'stateful.csv'),
                     '--model', 'nb', '--model', 'tree', '--k', '3'])

        assert code == 0
        table = read_tsv(capsys.readouterr().out)
        assert table['model'].tolist() == ['nb', 'tree']
        assert list(table.columns) == ['model', 'stateless w-FM', 'stateful w-FM', 'stateless AUC', 'stateful AUC']

    def test_compare_header_mismatch(self, tmp_path, dataset_csv, synth_params):
        out_dir = tmp_path / 'synthetic'
        main(['synth', str(synth_params), '--out-dir', str(out_dir)])

        assert main(['compare', str(dataset_csv), str(out_dir / 'stateful.csv'), '--model', 'nb']) == 2


class TestRerunDeterminism:
    """Identical flags give identical outputs apart from runtime columns."""

    @staticmethod
    def rerun(argv, capsys) -> tuple:
        outputs = []
        for _ in range(2):
            assert main(argv) == 0
            outputs.append(capsys.readouterr().out)
        return tuple(outputs)

    def test_extract_and_vectorize(self, tmp_path, capsys):
        apks = tmp_path / 'apks'
        apks.mkdir()
        (apks / 'app1.apk').write_bytes(manifest_apk('com.example.app1', [
            'android.permission.SEND_SMS', 'android.permission.INTERNET',
        ]))
        (apks / 'app2.apk').write_bytes(manifest_apk('com.example.app2', ['android.permission.CAMERA']))
        logs = tmp_path / 'logs'
        logs.mkdir()
        (logs / 'app1.log').write_text("action.SMS_RECEIVED\n", encoding='utf-8')
        (logs / 'app2.log').write_text("action.BOOT_COMPLETED\n", encoding='utf-8')
        labels = tmp_path / 'labels.csv'
        labels.write_text("app_id,label\napp1,1\napp2,0\n", encoding='utf-8')

        reports = self.rerun(['extract', str(apks), '--out-dir', str(tmp_path / 'perms')], capsys)
        assert reports[0] == reports[1]

        argv = ['vectorize', '--logs', str(logs), '--perms', str(tmp_path / 'perms'),
                '--labels', str(labels), '--out', str(tmp_path / 'out.csv')]
        assert main(argv) == 0
        first = (tmp_path / 'out.csv').read_bytes()
        assert main(argv) == 0
        assert (tmp_path / 'out.csv').read_bytes() == first

    def test_rank(self, dataset_csv, capsys):
        first, second = self.rerun(['rank', str(dataset_csv), '--top', '3'], capsys)

        assert first == second

    def test_grid(self, dataset_csv, capsys):
        argv = ['grid', str(dataset_csv), '--grid', 'default', '--epochs', '1', '--k', '2', '--seed', '3']
        with patch('app.DEFAULT_GRID', ((3, 3), (4, 2, 4))):
            first, second = self.rerun(argv, capsys)

        assert first.splitlines()[0] == second.splitlines()[0]
        assert read_tsv(first).drop(columns='runtime').equals(read_tsv(second).drop(columns='runtime'))

    @pytest.mark.parametrize('model', ['mlp', 'nb', 'tree'])
    def test_eval(self, dataset_csv, capsys, model):
        argv = ['eval', str(dataset_csv), '--model', model, '--layers', '4', '--epochs', '2', '--k', '3']
        first, second = self.rerun(argv, capsys)

        assert first.splitlines()[0] == second.splitlines()[0]
        assert read_tsv(first).drop(columns='runtime').equals(read_tsv(second).drop(columns='runtime'))

    def test_compare(self, tmp_path, synth_params, capsys):
        out_dir = tmp_path / 'synthetic'
        main(['synth', str(synth_params), '--out-dir', str(out_dir)])
        capsys.readouterr()

        first, second = self.rerun(['compare', str(out_dir / 'stateless.csv'), str(out_dir / 'stateful.csv'),
                                    '--k', '3', '--epochs', '2', '--layers', '4'], capsys)

        assert first == second
