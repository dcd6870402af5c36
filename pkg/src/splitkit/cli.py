"""Command line entry point: ``splitkit <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ._version import __version__
from .compare import rank_swap_report, scatter_csv, scatter_rows
from .evaluation import EvalConfig, evaluate, load_report
from .experiment import StageError, run_experiment, validate_config
from .filtering import FilterSpec, apply_filter, builtin_spec
from .ingest import SCHEMA_PRESETS, SchemaConfig, export_dataset, parse_transactions, read_dataset
from .models import MODELS, interaction_matrix, load_model, make_model, save_model
from .split import export_split, load_split, make_splitter, read_manifest
from .synth import SynthConfig, step_drift, write_synth
from .utils import STRATEGY_TAGS, ConfigError, DataError, canonical_json, derive_seed, normalize_strategy

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_STAGE = 0, 2, 3, 4


def _global_options(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0,
                        help="global seed (default 0)")
    parser.add_argument("--out", default=default, help="output file or directory")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker threads for independent runs")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def _filter_options(parser):
    g = parser.add_argument_group("filtering")
    g.add_argument("--apply-filter", choices=["builtin", "none"], default=None,
                   help="builtin: the strategy's published thresholds")
    g.add_argument("--min-item-purchases", type=int)
    g.add_argument("--min-user-items", type=int)
    g.add_argument("--min-user-baskets", type=int)
    g.add_argument("--filter-order", choices=["items-first", "users-first"])
    g.add_argument("--filter-fixpoint", action="store_true", default=None)


def _filter_spec(args, strategy=None):
    """FilterSpec from flags; explicit thresholds override the builtin base."""
    overrides = {k: v for k, v in (
        ("min_item_purchases", args.min_item_purchases),
        ("min_user_items", args.min_user_items),
        ("min_user_baskets", args.min_user_baskets),
        ("order", args.filter_order),
        ("iterate_to_fixpoint", args.filter_fixpoint),
    ) if v is not None}
    if args.apply_filter == "none" and not overrides:
        return None
    base = builtin_spec(strategy).to_dict() if args.apply_filter == "builtin" and strategy else {}
    spec = FilterSpec(**{**base, **overrides})
    return None if spec.is_identity else spec


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    parser = argparse.ArgumentParser(prog="splitkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"splitkit {__version__}")
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse a transaction log into canonical form")
    p.add_argument("source", help="delimited log (.gz accepted)")
    p.add_argument("--preset", choices=sorted(SCHEMA_PRESETS))
    p.add_argument("--user")
    p.add_argument("--item")
    p.add_argument("--timestamp")
    p.add_argument("--basket", help="column, or comma-separated columns for a composite key")
    p.add_argument("--quantity")
    p.add_argument("--delimiter")
    p.add_argument("--time-format")
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--basket-policy", choices=["reject", "repair"])
    p.add_argument("--gzip", action="store_true", help="compress the canonical interaction file")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic log with popularity drift")
    p.add_argument("--config", help="JSON generator config (flags below are ignored)")
    p.add_argument("--n-users", type=int, default=200)
    p.add_argument("--n-items", type=int, default=100)
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--baskets-per-user", type=int, nargs=2, default=(3, 8))
    p.add_argument("--items-per-basket", type=int, nargs=2, default=(1, 5))
    p.add_argument("--drift-windows", type=int, default=0, help="step drift with this many windows")
    p.add_argument("--spread", type=float, default=0.5, help="user activity spread in [0, 1)")

    p = sub.add_parser("filter", parents=[common], help="apply frequency thresholds to a dataset")
    p.add_argument("--data", required=True, help="canonical dataset directory")
    p.add_argument("--strategy", help="use this strategy's builtin thresholds as the base")
    _filter_options(p)

    p = sub.add_parser("split", parents=[common], help="split a dataset and write a manifest")
    p.add_argument("--data", required=True, help="canonical dataset directory")
    p.add_argument("--strategy", required=True, help=f"one of {', '.join(STRATEGY_TAGS)}")
    p.add_argument("--test-ratio", type=float)
    p.add_argument("--valid-ratio", type=float)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="extra splitter parameter (JSON value), repeatable")
    _filter_options(p)

    p = sub.add_parser("train", parents=[common], help="fit a model on a split's training partition")
    p.add_argument("--model", required=True, choices=list(MODELS))
    p.add_argument("--split", required=True, help="split directory")
    p.add_argument("--hp", help="JSON file of hyperparameters")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--model-ckpt", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--candidates", default="full", help="'full' or 'sampled:N'")
    p.add_argument("--dataset-id")

    p = sub.add_parser("compare", parents=[common], help="rank-swap table from evaluation reports")
    p.add_argument("--reports", nargs="+", required=True, help="report.json files or their directories")
    p.add_argument("--reference", default="leave-one-last-item")
    p.add_argument("--metric", help="default: every metric in the reports")

    p = sub.add_parser("run", parents=[common], help="end-to-end experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--check", action="store_true", help="validate and print the normalized config only")

    p = sub.add_parser("manifest", parents=[common], help="verify and print a split manifest")
    p.add_argument("split", help="split directory")
    p.add_argument("--table", action="store_true", help="print a one-line counts row")
    return parser


def _out(args, default):
    return Path(args.out or default)


def _print(obj):
    sys.stdout.write(canonical_json(obj))


def cmd_ingest(args):
    if args.preset:
        schema = SCHEMA_PRESETS[args.preset]
        fields = {}
    else:
        schema = None
        fields = {"user": "user", "item": "item", "timestamp": "timestamp"}
    for name in ("user", "item", "timestamp", "basket", "quantity"):
        value = getattr(args, name)
        if value is not None:
            refs = tuple(int(v) if args.no_header else v for v in value.split(","))
            fields[name] = refs[0] if len(refs) == 1 else refs
    if args.delimiter is not None:
        fields["delimiter"] = args.delimiter
    if args.time_format is not None:
        fields["timestamp_format"] = args.time_format
    if args.no_header:
        fields["header"] = False
    if args.basket_policy:
        fields["basket_policy"] = args.basket_policy
    schema = SchemaConfig.from_dict({**({"preset": args.preset} if schema else {}), **fields})
    dataset = parse_transactions(args.source, schema)
    out = _out(args, "dataset")
    export_dataset(dataset, out, compress=args.gzip)
    _print(_dataset_summary(dataset, out))


def _dataset_summary(dataset, out):
    return {"out": str(out), "interactions": len(dataset), "users": dataset.n_users,
            "items": dataset.n_items, "baskets": dataset.n_baskets,
            "time_granularity": dataset.time_granularity, "digest": dataset.digest}


def cmd_synth(args):
    if args.config:
        cfg = SynthConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        drift = (step_drift(args.n_items, args.horizon, args.drift_windows, seed=args.seed)
                 if args.drift_windows else None)
        cfg = SynthConfig(n_users=args.n_users, n_items=args.n_items, horizon=args.horizon,
                          baskets_per_user=tuple(args.baskets_per_user),
                          items_per_basket=tuple(args.items_per_basket),
                          drift=drift, user_activity_spread=args.spread, seed=args.seed)
    out = _out(args, "synth")
    dataset = write_synth(cfg, out)
    _print(_dataset_summary(dataset, out))


def cmd_filter(args):
    dataset = read_dataset(args.data)
    strategy = normalize_strategy(args.strategy) if args.strategy else None
    if strategy and args.apply_filter is None:
        args.apply_filter = "builtin"
    spec = _filter_spec(args, strategy)
    result = dataset if spec is None else apply_filter(dataset, spec)
    out = _out(args, "filtered")
    export_dataset(result, out)
    _print({**_dataset_summary(result, out), "filter": None if spec is None else spec.to_dict()})


def _parse_params(pairs):
    params = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--param: expected KEY=VALUE, got {pair!r}")
        try:
            params[key.replace("-", "_")] = json.loads(value)
        except json.JSONDecodeError:
            params[key.replace("-", "_")] = value
    return params


def cmd_split(args):
    tag = normalize_strategy(args.strategy)
    params = _parse_params(args.param)
    for name in ("test_ratio", "valid_ratio"):
        value = getattr(args, name)
        if value is not None:
            params[name] = value
    if tag in ("random-leave-one", "random-ratio", "user-split") and "seed" not in params:
        params["seed"] = args.seed
    splitter = make_splitter(tag, **params)
    splitter._validate()
    dataset = read_dataset(args.data)
    spec = _filter_spec(args, tag)
    source = dataset if spec is None else apply_filter(dataset, spec)
    split = splitter.split(source)
    out = _out(args, f"split-{tag}")
    export_split(split, out, source)
    body = split.manifest.to_dict()
    body["filter"] = None if spec is None else spec.to_dict()
    _print(body)


def cmd_train(args):
    split = load_split(args.split)
    dataset = read_dataset(Path(args.split) / "dataset")
    hp = json.loads(Path(args.hp).read_text()) if args.hp else {}
    model = make_model(args.model, **hp)
    if "seed" in model.get_params() and "seed" not in hp:
        model.set_params(seed=derive_seed(args.seed, "model", args.model))
    model._check_params()
    V = interaction_matrix(dataset, split.validation)
    model.fit(interaction_matrix(dataset, split.train), validation=V if V.nnz else None)
    out = _out(args, f"{args.model}.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    _print({"checkpoint": str(out), "model": args.model, "params": model.get_params(),
            "parameter_digest": model.parameter_digest()})


def _candidate_config(spec, k, seed):
    if spec == "full":
        return EvalConfig(k=k, seed=seed)
    mode, _, n = spec.partition(":")
    if mode != "sampled" or not n.isdigit():
        raise ConfigError(f"--candidates: expected 'full' or 'sampled:N', got {spec!r}")
    return EvalConfig(k=k, candidate_mode="sampled", n_negatives=int(n), seed=seed)


def cmd_eval(args):
    config = _candidate_config(args.candidates, args.k, derive_seed(args.seed, "eval"))
    split = load_split(args.split)
    dataset = read_dataset(Path(args.split) / "dataset")
    model = load_model(args.model_ckpt)
    if model.n_users_ != dataset.n_users or model.n_items_ != dataset.n_items:
        raise DataError("checkpoint was trained on a different split (matrix shape mismatch)")
    report = evaluate(model, split, dataset, config, dataset_id=args.dataset_id)
    out = _out(args, f"eval-{model.name}")
    report.write(out)
    _print(report.to_dict())


def cmd_compare(args):
    reports = [load_report(p) for p in args.reports]
    metrics = [args.metric] if args.metric else sorted(reports[0].metrics)
    out = _out(args, "table")
    if out.suffix in (".txt", ".json", ".csv"):
        out = out.with_suffix("")
    out.parent.mkdir(parents=True, exist_ok=True)
    for metric in metrics:
        # one metric writes <stem>.txt/.json/.csv, several add the metric name
        stem = out.name if len(metrics) == 1 else f"{out.name}.{metric}"
        swap = rank_swap_report(reports, metric, args.reference)
        (out.parent / f"{stem}.txt").write_text(swap.render_text(), encoding="utf-8")
        (out.parent / f"{stem}.json").write_text(swap.to_json(), encoding="utf-8")
        (out.parent / f"{stem}.csv").write_text(swap.to_csv(), encoding="utf-8")
        for c in swap.comparisons:
            rows = scatter_rows(reports, c.strategy_a, c.strategy_b, metric)
            name = f"{stem}.scatter.{c.strategy_a}__{c.strategy_b}.csv"
            (out.parent / name).write_text(scatter_csv(rows, c.strategy_a, c.strategy_b), encoding="utf-8")
        sys.stdout.write(swap.render_text())


def cmd_run(args):
    config = validate_config(args.config)
    if args.threads and args.threads > 1:
        config.threads = args.threads
    if args.check:
        _print(config.to_dict())
        return
    bundle = run_experiment(config, args.out)
    for metric, swap in bundle.swap_reports.items():
        sys.stdout.write(swap.render_text() + "\n")
    _print({"bundle": str(bundle.path), "bundle_digest": bundle.digest,
            "reports": len(bundle.reports)})


def cmd_manifest(args):
    manifest = read_manifest(args.split)
    load_split(args.split)  # verifies partition and dataset digests
    if args.table:
        sys.stdout.write(json.dumps(manifest.table_row()) + "\n")
    else:
        _print(manifest.to_dict())


COMMANDS = {
    "ingest": cmd_ingest, "synth": cmd_synth, "filter": cmd_filter, "split": cmd_split,
    "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare, "run": cmd_run,
    "manifest": cmd_manifest,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which is our config-error code too
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON ({exc})", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
