#!/usr/bin/env python3
"""
dldroid command-line interface.

File-based pipeline for dynamic-analysis malware detection: extract manifest
permissions, vectorize logs into scenario CSVs, rank features, search the
MLP layer grid, train/evaluate classifiers, generate synthetic corpora and
compare stateless against stateful exploration.

Exit codes: 0 success, 1 unexpected error, 2 input or usage error.
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from axml import AxmlError, extract_manifest, permission_tokens_in_order
from config import Config, ConfigError, RunConfig, load_key_value_file
from evalcore import (EvalError, EvalReport, REPORT_COLUMNS, evaluate_model,
                      format_runtime, run_cross_validation)
from ingest import (FEATURE_SETS, Dataset, HeaderMismatchError, IngestError,
                    atomic_write_text, describe_header_difference,
                    load_catalog, load_label_map, merge_observations, parse_dynamic_log,
                    read_csv, read_text_file, restrict_categories, unknown_report_rows,
                    vectorize, write_csv)
from learners import (DEFAULT_GRID, LEARNER_KINDS, LearnerError, MlpConfig, MlpLearner,
                      config_dict, grid_search, load_grid_file, load_model, make_learner,
                      parse_layers, save_model)
from logging_conf import get_logger, log_operation_result, log_operation_start, setup_logging
from ranking import RankingError, rank_features, select_top_k
from synthcorpus import (SynthError, build_scenario_datasets, gen_corpus,
                         gen_params_from_mapping, write_corpus_manifest)

DEFAULT_CATALOG = Path(__file__).resolve().parent / 'catalog' / 'dldroid_features.csv'
LOG_SUFFIX = '.log'
PERMS_SUFFIX = '.perms.txt'
APK_SUFFIX = '.apk'

# Errors caused by bad input rather than a bug
INPUT_ERRORS = (IngestError, AxmlError, RankingError, EvalError, LearnerError,
                SynthError, ConfigError)


def build_run_config(args, argv: Sequence[str], config: Config) -> RunConfig:
    """Merge parsed flags over environment defaults."""
    paths = {key: str(value) for key, value in vars(args).items()
             if key in ('csv', 'out', 'out_dir', 'catalog', 'params') and value}
    return RunConfig(
        command=args.command,
        argv=['dldroid'] + list(argv),
        seed=args.seed if getattr(args, 'seed', None) is not None else config.seed,
        k=args.k if getattr(args, 'k', None) is not None else config.folds,
        threshold=args.threshold if getattr(args, 'threshold', None) is not None else config.threshold,
        jobs=args.jobs if getattr(args, 'jobs', None) is not None else config.jobs,
        paths=paths,
    )


def emit(text: str, out: Optional[str]) -> None:
    """Write a primary output to ``out`` atomically, or to stdout."""
    if out:
        atomic_write_text(out, text)
        get_logger().info(f"Results saved to {out}")
    else:
        sys.stdout.write(text)


def frame_to_tsv(frame: pd.DataFrame, header: str) -> str:
    return header + '\n' + frame.to_csv(sep='\t', index=False, lineterminator='\n')


def load_dataset(path: str, feature_set: str = 'all', catalog_path: Optional[str] = None) -> Dataset:
    catalog = load_catalog(catalog_path) if catalog_path else None
    ds = read_csv(path, catalog)
    if feature_set != 'all':
        ds = restrict_categories(ds, FEATURE_SETS[feature_set])
    get_logger().info(f"Loaded {len(ds)} samples x {ds.width} features from {path}")
    return ds


def build_learner(args, kind: Optional[str] = None):
    kind = kind or args.model
    if kind == 'mlp':
        options = {}
        if args.epochs is not None:
            options['epochs'] = args.epochs
        return make_learner('mlp', layers=parse_layers(args.layers), **options)
    return make_learner(kind)


def report_row(learner, report: EvalReport, seconds: float) -> Dict[str, str]:
    if isinstance(learner, MlpLearner):
        row = {'layers': str(len(learner.config.hidden_layers)), 'neurons': learner.config.label()}
    else:
        row = {'layers': '-', 'neurons': '-'}
    row.update(zip(REPORT_COLUMNS, report.formatted()))
    row['runtime'] = format_runtime(seconds)
    return row


def collect_apks(paths: Sequence[str]) -> List[Path]:
    apks: List[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            apks.extend(sorted(p for p in path.iterdir() if p.suffix.lower() == APK_SUFFIX))
        else:
            apks.append(path)
    return apks


def run_extract(args, run: RunConfig) -> int:
    """Write one permission token file per APK; failures are reported, not fatal."""
    logger = get_logger()
    apks = collect_apks(args.apk)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_operation_start("permission extraction", apks=len(apks))

    report = []
    failures = 0
    for apk in apks:
        try:
            info = extract_manifest(apk.read_bytes())
        except (AxmlError, OSError) as e:
            failures += 1
            logger.error(f"{apk.name}: {e}")
            report.append((apk.name, 'error', str(e)))
            continue
        for warning in info.warnings:
            logger.warning(f"{apk.name}: {warning}")
        tokens = permission_tokens_in_order(info)
        target = out_dir / (apk.stem + PERMS_SUFFIX)
        atomic_write_text(target, run.header() + '\n' + ''.join(token + '\n' for token in tokens))
        report.append((apk.name, 'ok', str(len(tokens))))

    frame = pd.DataFrame(report, columns=['apk', 'status', 'detail'])
    emit(frame_to_tsv(frame, run.header()), args.out)
    log_operation_result("permission extraction", failures == 0, len(apks) - failures,
                         f"{failures} APKs failed" if failures else None)
    return 2 if failures else 0


def _files_by_app(directory: Optional[str], suffix: str) -> Dict[str, Path]:
    if not directory:
        return {}
    folder = Path(directory)
    if not folder.is_dir():
        raise IngestError(f"Not a directory: {directory}")
    return {p.name[:-len(suffix)]: p for p in sorted(folder.iterdir()) if p.name.endswith(suffix)}


def run_vectorize(args, run: RunConfig) -> int:
    """Turn per-app logs and permission lists into one scenario CSV."""
    logger = get_logger()
    catalog = load_catalog(args.catalog or DEFAULT_CATALOG)
    labels = load_label_map(args.labels)
    logs = _files_by_app(args.logs, LOG_SUFFIX)
    perms = _files_by_app(args.perms, PERMS_SUFFIX)
    app_ids = sorted(set(logs) | set(perms))
    log_operation_start("vectorization", apps=len(app_ids), features=len(catalog))

    unlabeled = [app_id for app_id in app_ids if app_id not in labels]
    if unlabeled:
        raise IngestError(f"No label for app(s): {', '.join(unlabeled[:10])}")

    observations = {}
    samples = []
    for app_id in app_ids:
        parts = [parse_dynamic_log(read_text_file(source[app_id], 'input file'), catalog)
                 for source in (logs, perms) if app_id in source]
        observations[app_id] = merge_observations(*parts)
        samples.append(vectorize(observations[app_id], labels[app_id], catalog, app_id))

    write_csv(Dataset(catalog, tuple(samples)), args.out, provenance=run.header())
    unknown = unknown_report_rows(observations)
    if unknown:
        logger.warning(f"{len(unknown)} unknown (app, token) pairs across {len(app_ids)} apps")
        if args.unknown_report:
            frame = pd.DataFrame(unknown, columns=['app_id', 'token', 'count'])
            atomic_write_text(args.unknown_report, frame_to_tsv(frame, run.header()))
    log_operation_result("vectorization", True, len(samples))
    return 0


def run_rank(args, run: RunConfig) -> int:
    if args.top is not None and args.top < 1:
        raise RankingError(f"--top must be at least 1, got {args.top}")
    ds = load_dataset(args.csv, args.feature_set, args.catalog)
    ranked = rank_features(ds)
    frame = ranked.to_frame()
    if args.top is not None:
        frame = frame.head(args.top)
    emit(frame_to_tsv(frame, run.header()), args.out)

    if args.projected:
        if args.top is None:
            raise RankingError("--projected needs --top")
        projected = select_top_k(ds, args.top, ranked, keep=args.keep or ())
        write_csv(projected, args.projected, provenance=run.header())
    return 0


def run_grid(args, run: RunConfig) -> int:
    ds = load_dataset(args.csv, args.feature_set, args.catalog)
    layer_grid = DEFAULT_GRID if args.grid == 'default' else load_grid_file(args.grid)
    options = {'epochs': args.epochs} if args.epochs is not None else {}
    configs = [MlpConfig(hidden_layers=layers, seed=run.seed, **options) for layers in layer_grid]

    result = grid_search(configs, ds, run.k, run.seed, run.threshold, run.jobs)
    best = result.best_row
    get_logger().info(f"Best configuration [{best.config.label()}] w-FM={best.report.weighted_fm:.4f}")
    emit(frame_to_tsv(result.to_frame(), run.header()), args.out)
    return 0


def run_train(args, run: RunConfig) -> int:
    ds = load_dataset(args.csv, args.feature_set, args.catalog)
    learner = build_learner(args)
    log_operation_start("training", model=learner.name, samples=len(ds), seed=run.seed)
    model = learner.fit(ds, run.seed)
    settings = config_dict(learner)
    settings['provenance'] = run.header()
    settings['feature_set'] = args.feature_set
    save_model(model, ds.catalog, args.out, settings)
    log_operation_result("training", True, len(ds))
    return 0


def run_eval(args, run: RunConfig) -> int:
    ds = load_dataset(args.csv, args.feature_set, args.catalog)
    if args.model_file:
        saved = load_model(args.model_file, ds.catalog)
        report = evaluate_model(saved.model, ds, run.threshold)
        row = {'layers': '-', 'neurons': '-'}
        if saved.kind == 'mlp':
            layers = saved.model.hidden_layers
            row = {'layers': str(len(layers)), 'neurons': ','.join(str(w) for w in layers)}
        row.update(zip(REPORT_COLUMNS, report.formatted()))
        row['runtime'] = format_runtime(0.0)
    else:
        learner = build_learner(args)
        result = run_cross_validation(learner, ds, run.k, run.seed, run.threshold)
        report, row = result.report, report_row(learner, result.report, result.seconds)
    if report.flags:
        get_logger().warning(f"Zero denominators reported as 0: {', '.join(report.flags)}")
    emit(frame_to_tsv(pd.DataFrame([row]), run.header()), args.out)
    return 0


def run_synth(args, run: RunConfig) -> int:
    params_path = Path(args.params)
    mapping = load_key_value_file(params_path)
    if args.seed is not None:
        mapping['seed'] = str(args.seed)
    catalog = load_catalog(args.catalog) if args.catalog else None
    settings = gen_params_from_mapping(mapping, catalog, base_dir=params_path.parent)
    run = RunConfig(run.command, run.argv, settings.params.seed, run.k, run.threshold, run.jobs, run.paths)

    corpus = gen_corpus(settings.params)
    stateless, stateful = build_scenario_datasets(corpus, settings.stateless, settings.stateful,
                                                  settings.params.seed, settings.params.catalog,
                                                  settings.coupled)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_corpus_manifest(corpus, out_dir / 'corpus.jsonl', run.header())
    write_csv(stateless, out_dir / 'stateless.csv', provenance=run.header())
    write_csv(stateful, out_dir / 'stateful.csv', provenance=run.header())
    get_logger().info(f"Wrote {len(corpus)} apps and two scenario datasets to {out_dir}")
    return 0


def run_compare(args, run: RunConfig) -> int:
    stateless = load_dataset(args.stateless, args.feature_set, args.catalog)
    stateful = load_dataset(args.stateful, args.feature_set, args.catalog)
    if stateless.catalog.names != stateful.catalog.names:
        raise HeaderMismatchError(describe_header_difference(stateless.catalog.names,
                                                             stateful.catalog.names))

    rows = []
    for kind in args.model or list(LEARNER_KINDS):
        learner = build_learner(args, kind)
        reports = [run_cross_validation(learner, ds, run.k, run.seed, run.threshold).report
                   for ds in (stateless, stateful)]
        rows.append({
            'model': kind,
            'stateless w-FM': f"{reports[0].weighted_fm:.4f}",
            'stateful w-FM': f"{reports[1].weighted_fm:.4f}",
            'stateless AUC': reports[0].formatted()[-1],
            'stateful AUC': reports[1].formatted()[-1],
        })
        get_logger().info(f"{kind}: stateless w-FM={reports[0].weighted_fm:.4f}, "
                          f"stateful w-FM={reports[1].weighted_fm:.4f}")
    emit(frame_to_tsv(pd.DataFrame(rows), run.header()), args.out)
    return 0


COMMANDS = {
    'extract': run_extract,
    'vectorize': run_vectorize,
    'rank': run_rank,
    'grid': run_grid,
    'train': run_train,
    'eval': run_eval,
    'synth': run_synth,
    'compare': run_compare,
}


def _add_dataset_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--feature-set', choices=sorted(FEATURE_SETS), default='all',
                        help='Feature categories to use (default: all)')
    parser.add_argument('--catalog', help='Catalog the CSV header must match')
    parser.add_argument('--out', help='Output file path (default: stdout)')


def _add_learner_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--layers', default='200,200,200', help='MLP hidden layers (default: 200,200,200)')
    parser.add_argument('--epochs', type=int, help='MLP training epochs')
    parser.add_argument('--seed', type=int, help='Random seed (default: DLDROID_SEED or 42)')


def _add_eval_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--k', type=int, help='Cross-validation folds (default: DLDROID_FOLDS or 10)')
    parser.add_argument('--threshold', type=float, help='Malware score threshold (default: 0.5)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='dldroid',
        description='Android malware detection pipeline over dynamic and static features',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s extract samples/ --out-dir perms/
  %(prog)s vectorize --logs logs/ --perms perms/ --labels labels.csv --out stateful.csv
  %(prog)s rank stateful.csv --top 20
  %(prog)s grid stateful.csv --feature-set dynamic --out grid.tsv
  %(prog)s eval stateful.csv --model nb
  %(prog)s synth catalog/reference_corpus.conf --out-dir synthetic/
  %(prog)s compare synthetic/stateless.csv synthetic/stateful.csv --model nb --model tree
        """
    )

    # Global options
    parser.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Logging level (default: DLDROID_LOG_LEVEL or INFO)')
    parser.add_argument('--log-file', help='Log file path')
    parser.add_argument('--quiet', action='store_true', help='Disable console logging')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    extract_parser = subparsers.add_parser('extract', help='Extract manifest permissions from APKs')
    extract_parser.add_argument('apk', nargs='+', help='APK files or directories of APKs')
    extract_parser.add_argument('--out-dir', required=True, help='Directory for per-APK token files')
    extract_parser.add_argument('--out', help='Report file path (default: stdout)')

    vectorize_parser = subparsers.add_parser('vectorize', help='Build a scenario CSV from logs')
    vectorize_parser.add_argument('--logs', help=f'Directory of <app_id>{LOG_SUFFIX} dynamic logs')
    vectorize_parser.add_argument('--perms', help=f'Directory of <app_id>{PERMS_SUFFIX} permission lists')
    vectorize_parser.add_argument('--labels', required=True, help='app_id,label file')
    vectorize_parser.add_argument('--catalog', help='Feature catalog (default: shipped catalog)')
    vectorize_parser.add_argument('--out', required=True, help='Output CSV path')
    vectorize_parser.add_argument('--unknown-report', help='TSV of tokens outside the catalog')

    rank_parser = subparsers.add_parser('rank', help='Rank features by information gain')
    rank_parser.add_argument('csv', help='Dataset CSV')
    rank_parser.add_argument('--top', type=int, help='Keep the top K features')
    rank_parser.add_argument('--projected', help='Write the top-K projected CSV here')
    rank_parser.add_argument('--keep', action='append', choices=['attribute', 'action_event', 'permission'],
                             help='Category appended to the projection regardless of rank (repeatable)')
    _add_dataset_options(rank_parser)

    grid_parser = subparsers.add_parser('grid', help='Cross-validate the MLP layer grid')
    grid_parser.add_argument('csv', help='Dataset CSV')
    grid_parser.add_argument('--grid', default='default', help="'default' or a file of layer lists")
    grid_parser.add_argument('--epochs', type=int, help='MLP training epochs')
    grid_parser.add_argument('--seed', type=int, help='Random seed (default: DLDROID_SEED or 42)')
    grid_parser.add_argument('--jobs', type=int, help='Worker processes (default: DLDROID_JOBS or 1)')
    _add_eval_options(grid_parser)
    _add_dataset_options(grid_parser)

    train_parser = subparsers.add_parser('train', help='Train a model on a whole dataset')
    train_parser.add_argument('csv', help='Dataset CSV')
    train_parser.add_argument('--model', choices=LEARNER_KINDS, default='mlp', help='Learner (default: mlp)')
    _add_learner_options(train_parser)
    train_parser.add_argument('--feature-set', choices=sorted(FEATURE_SETS), default='all',
                              help='Feature categories to use (default: all)')
    train_parser.add_argument('--catalog', help='Catalog the CSV header must match')
    train_parser.add_argument('--out', required=True, help='Model file path')

    eval_parser = subparsers.add_parser('eval', help='Cross-validate a learner or score a saved model')
    eval_parser.add_argument('csv', help='Dataset CSV')
    eval_parser.add_argument('--model', choices=LEARNER_KINDS, default='mlp', help='Learner (default: mlp)')
    eval_parser.add_argument('--model-file', help='Evaluate this saved model instead of cross-validating')
    _add_learner_options(eval_parser)
    _add_eval_options(eval_parser)
    _add_dataset_options(eval_parser)

    synth_parser = subparsers.add_parser('synth', help='Generate a synthetic corpus and scenario CSVs')
    synth_parser.add_argument('params', help='Key-value generation parameters')
    synth_parser.add_argument('--out-dir', required=True, help='Output directory')
    synth_parser.add_argument('--catalog', help='Catalog overriding the parameter file')
    synth_parser.add_argument('--seed', type=int, help='Seed overriding the parameter file')

    compare_parser = subparsers.add_parser('compare', help='Compare stateless and stateful scenario CSVs')
    compare_parser.add_argument('stateless', help='Stateless scenario CSV')
    compare_parser.add_argument('stateful', help='Stateful scenario CSV')
    compare_parser.add_argument('--model', action='append', choices=LEARNER_KINDS,
                                help='Learner to compare (repeatable; default: mlp, nb, tree)')
    _add_learner_options(compare_parser)
    _add_eval_options(compare_parser)
    _add_dataset_options(compare_parser)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 2

    try:
        config = Config()
        setup_logging(
            level=args.log_level or config.log_level,
            log_file=args.log_file,
            enable_console=not args.quiet
        )
        run = build_run_config(args, argv, config)
        get_logger().debug(f"Effective settings: {config.summary()}")
    except ConfigError as e:
        print(f"Configuration Error: {e}", file=sys.stderr)
        return 2

    logger = get_logger()
    try:
        return COMMANDS[args.command](args, run)
    except INPUT_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        return 2
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {e}")
        return 1


if __name__ == '__main__':
    sys.exit(main())
