"""End-to-end experiments: ingest, filter, split, train, evaluate, compare.

A run is fully determined by its normalized config and the toolkit version.
One global seed fans out to per-stage seeds with :func:`~splitkit.utils.derive_seed`
keyed by stage name, so editing one stage never shifts another's randomness.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ._version import __version__
from .compare import rank_swap_report, scatter_csv, scatter_rows
from .evaluation import EvalConfig, evaluate
from .filtering import FilterSpec, apply_filter, builtin_spec
from .ingest import SchemaConfig, parse_transactions, read_dataset
from .models import MODELS, interaction_matrix, make_model
from .split import export_split, load_split, make_splitter
from .synth import SynthConfig, generate
from .utils import (
    STRATEGY_TAGS,
    ConfigError,
    DataError,
    SplitkitError,
    canonical_json,
    derive_seed,
    normalize_strategy,
    params_digest,
    sha256_bytes,
)

log = logging.getLogger(__name__)

_SEEDED_STRATEGIES = ("random-leave-one", "random-ratio", "user-split")
_BUNDLE_ENTRIES = ("config.json", "dataset.json", "splits", "runs", "comparisons",
                   "scatter", "bundle.json", "FAILED.json")


class StageError(SplitkitError):
    """A pipeline stage failed; carries the stage coordinates."""

    def __init__(self, stage, message, strategy=None, model=None, hp=None):
        self.stage, self.strategy, self.model, self.hp = stage, strategy, model, hp
        where = ", ".join(f"{k}={v}" for k, v in
                          (("strategy", strategy), ("model", model), ("hp", hp)) if v is not None)
        super().__init__(f"stage {stage!r} failed ({where}): {message}" if where
                         else f"stage {stage!r} failed: {message}")

    def to_dict(self):
        return {"stage": self.stage, "strategy": self.strategy, "model": self.model,
                "hp": self.hp, "error": str(self.__cause__ or self)}


@dataclass
class ExperimentConfig:
    dataset: dict
    strategies: list
    models: list
    metrics: dict
    seed: int = 0
    reference: str = "leave-one-last-item"
    output: str | None = None
    threads: int = 1
    cache_dir: str | None = None

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "strategies": self.strategies,
            "models": self.models,
            "metrics": self.metrics,
            "seed": self.seed,
            "reference": self.reference,
            "output": self.output,
            "threads": self.threads,
            "cache_dir": self.cache_dir,
        }

    def result_dict(self):
        """Settings that determine results; runtime options (paths, threads) are left out."""
        d = self.to_dict()
        for key in ("output", "threads", "cache_dir"):
            del d[key]
        return d

    @staticmethod
    def hp_points(model):
        """Cartesian product of a model's grid merged over its fixed params, in key order."""
        grid = model.get("grid") or {}
        keys = sorted(grid)
        for values in itertools.product(*(grid[k] for k in keys)):
            point = dict(model["params"])
            point.update(zip(keys, values))
            yield dict(sorted(point.items()))

    @property
    def n_points(self):
        return sum(1 for m in self.models for _ in self.hp_points(m))


_TOP_KEYS = {"dataset", "strategies", "models", "metrics", "seed", "reference", "output",
             "threads", "cache_dir", "filter"}


def validate_config(source, *, base_dir=None):
    """Parse and normalize an experiment config.

    ``source`` is a path to a JSON file or an already-parsed mapping. Every
    default is filled in explicitly; every problem is collected and raised
    together as one :class:`ConfigError` whose messages start with the
    offending location (e.g. ``strategies[1].params.test_ratio``).
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        base_dir = base_dir or path.parent
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    else:
        raw = copy.deepcopy(source)
    base_dir = Path(base_dir or ".")
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    for key in sorted(set(raw) - _TOP_KEYS):
        errors.append(f"{key}: unknown key; valid keys: {', '.join(sorted(_TOP_KEYS))}")

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append(f"seed: expected a non-negative integer, got {seed!r}")
        seed = 0

    dataset = _validate_dataset(raw.get("dataset"), base_dir, errors)
    global_filter = _validate_filter(raw.get("filter", "builtin"), "filter", errors)
    strategies = _validate_strategies(raw.get("strategies"), global_filter, seed, errors)
    models = _validate_models(raw.get("models"), errors)

    metrics = raw.get("metrics", {})
    try:
        if not isinstance(metrics, dict):
            raise ConfigError("expected an object")
        metrics = EvalConfig(**{"seed": derive_seed(seed, "eval"), **metrics}).to_dict()
    except (ConfigError, TypeError) as exc:
        errors.append(f"metrics: {exc}")
        metrics = EvalConfig().to_dict()

    tags = [s["tag"] for s in strategies]
    if len(tags) == 1:
        errors.append("strategies: need at least two strategies to compare model rankings")
    if models and sum(1 for m in models for _ in ExperimentConfig.hp_points(m)) < 2:
        errors.append("models: need at least two model configurations to rank")
    default_ref = "leave-one-last-item" if "leave-one-last-item" in tags or not tags else tags[0]
    reference = raw.get("reference", default_ref)
    try:
        reference = normalize_strategy(reference)
        if strategies and reference not in [s["tag"] for s in strategies]:
            errors.append(f"reference: strategy {reference!r} is not in the strategy list")
    except ConfigError as exc:
        errors.append(f"reference: {exc}")

    threads = raw.get("threads", 1)
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        errors.append(f"threads: expected a positive integer, got {threads!r}")
        threads = 1

    if errors:
        raise ConfigError(errors)
    output = raw.get("output")
    cache_dir = raw.get("cache_dir")
    return ExperimentConfig(
        dataset=dataset, strategies=strategies, models=models, metrics=metrics, seed=seed,
        reference=reference, threads=threads,
        output=str(base_dir / output) if output else None,
        cache_dir=str(base_dir / cache_dir) if cache_dir else None,
    )


def _validate_dataset(spec, base_dir, errors):
    if not isinstance(spec, dict):
        errors.append("dataset: expected an object with either 'path' or 'synth'")
        return {}
    if ("path" in spec) == ("synth" in spec):
        errors.append("dataset: give exactly one of 'path' or 'synth'")
        return {}
    if "synth" in spec:
        try:
            cfg = SynthConfig.from_dict(spec["synth"]).validate()
        except ConfigError as exc:
            errors.extend(f"dataset.synth.{e}" for e in exc.errors)
            return {}
        return {"synth": cfg.to_dict(), "id": spec.get("id", "synth")}
    path = Path(spec["path"])
    if not path.is_absolute():
        path = base_dir / path
    if not path.exists():
        errors.append(f"dataset.path: {path} does not exist")
    out = {"path": str(path), "id": spec.get("id", path.stem)}
    if "schema" in spec:
        try:
            SchemaConfig.from_dict(spec["schema"])
        except (TypeError, DataError) as exc:
            errors.append(f"dataset.schema: {exc}")
        out["schema"] = spec["schema"]
    elif path.is_file():
        errors.append("dataset.schema: required when dataset.path is a raw file")
    return out


def _validate_filter(spec, where, errors):
    """Return ``"builtin"``, ``None`` (no filtering) or a FilterSpec dict."""
    if spec in ("builtin", None, "none"):
        return None if spec in (None, "none") else "builtin"
    if not isinstance(spec, dict):
        errors.append(f"{where}: expected 'builtin', 'none' or an object")
        return "builtin"
    try:
        return FilterSpec(**spec).to_dict()
    except (ConfigError, TypeError) as exc:
        errors.append(f"{where}: {exc}")
        return "builtin"


def _validate_strategies(spec, global_filter, seed, errors):
    if not isinstance(spec, list) or not spec:
        errors.append(f"strategies: expected a non-empty list; valid tags: {', '.join(STRATEGY_TAGS)}")
        return []
    out = []
    for k, entry in enumerate(spec):
        where = f"strategies[{k}]"
        if isinstance(entry, str):
            entry = {"tag": entry}
        if not isinstance(entry, dict) or "tag" not in entry:
            errors.append(f"{where}: expected a tag or an object with 'tag'")
            continue
        try:
            tag = normalize_strategy(entry["tag"])
        except ConfigError as exc:
            errors.append(f"{where}.tag: {exc}")
            continue
        params = dict(entry.get("params", {}))
        if tag in _SEEDED_STRATEGIES and params.get("seed") is None:
            params["seed"] = derive_seed(seed, "split", tag)
        try:
            splitter = make_splitter(tag, **params)
            splitter._validate()
        except ConfigError as exc:
            errors.extend(f"{where}.params.{e}" for e in exc.errors)
            continue
        flt = _validate_filter(entry["filter"], f"{where}.filter", errors) if "filter" in entry else global_filter
        if flt == "builtin":
            flt = builtin_spec(tag).to_dict()
        if any(s["tag"] == tag for s in out):
            errors.append(f"{where}.tag: strategy {tag!r} listed twice")
            continue
        out.append({"tag": tag, "params": splitter._params(), "filter": flt})
    return out


def _validate_models(spec, errors):
    if not isinstance(spec, list) or not spec:
        errors.append(f"models: expected a non-empty list; valid models: {', '.join(MODELS)}")
        return []
    out = []
    for k, entry in enumerate(spec):
        where = f"models[{k}]"
        if isinstance(entry, str):
            entry = {"name": entry}
        if not isinstance(entry, dict) or entry.get("name") not in MODELS:
            errors.append(f"{where}.name: expected one of {', '.join(MODELS)}, got {entry!r}")
            continue
        params = dict(entry.get("params", {}))
        grid = entry.get("grid", {})
        if not isinstance(grid, dict) or any(not isinstance(v, list) or not v for v in grid.values()):
            errors.append(f"{where}.grid: expected an object of non-empty lists")
            continue
        # validate every grid value through the estimator itself
        defaults = make_model(entry["name"]).get_params()
        for key in list(params) + list(grid):
            if key not in defaults:
                errors.append(f"{where}: unknown hyperparameter {key!r} for {entry['name']}")
        for key, values in sorted(grid.items()):
            for v in values:
                try:
                    make_model(entry["name"], **{**params, key: v})._check_params()
                except (ConfigError, TypeError) as exc:
                    errors.append(f"{where}.grid.{key}: {exc}")
        try:
            make_model(entry["name"], **{k: v for k, v in params.items() if k in defaults})._check_params()
        except ConfigError as exc:
            errors.extend(f"{where}.params.{e}" for e in exc.errors)
        model_id = entry.get("id", entry["name"])
        if any(m["id"] == model_id for m in out):
            errors.append(f"{where}.id: model id {model_id!r} used twice")
        out.append({"name": entry["name"], "id": model_id, "params": dict(sorted(params.items())),
                    "grid": {k: grid[k] for k in sorted(grid)}})
    return out


# --- running ---------------------------------------------------------------

@dataclass
class Bundle:
    path: Path
    digest: str
    reports: list = field(default_factory=list)
    swap_reports: dict = field(default_factory=dict)
    manifests: dict = field(default_factory=dict)


def load_source_dataset(spec):
    if "synth" in spec:
        return generate(SynthConfig.from_dict(spec["synth"]))
    path = Path(spec["path"])
    if path.is_dir():
        return read_dataset(path)
    return parse_transactions(path, SchemaConfig.from_dict(spec["schema"]))


def _split_key(dataset_digest, strategy):
    body = {"dataset": dataset_digest, "strategy": strategy["tag"],
            "params": strategy["params"], "filter": strategy["filter"], "version": __version__}
    return sha256_bytes(canonical_json(body).encode())[:24]


def _prepare_split(dataset, strategy, cache_root):
    key = _split_key(dataset.digest, strategy)
    cache = cache_root / key
    if (cache / "manifest.json").exists():
        try:
            split = load_split(cache)
            return split, read_dataset(cache / "dataset"), True
        except DataError as exc:
            log.warning("discarding corrupt split cache %s: %s", cache, exc)
            shutil.rmtree(cache)
    source = dataset if strategy["filter"] is None else apply_filter(dataset, FilterSpec(**strategy["filter"]))
    split = make_splitter(strategy["tag"], **strategy["params"]).split(source)
    tmp = cache.with_name(cache.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    export_split(split, tmp, source)
    tmp.rename(cache)
    return split, source, False


def _model_seed(config, model, point):
    return derive_seed(config.seed, "model", model["id"], params_digest(point))


def _run_one(config, out, strategy, split, source, model, point):
    tag = strategy["tag"]
    hp = params_digest(point)
    n_points = sum(1 for _ in config.hp_points(model))
    model_id = model["id"] if n_points == 1 else f"{model['id']}@{hp}"
    run_dir = out / "runs" / tag / model_id.replace("@", "-")
    stage = "train"
    try:
        params = dict(point)
        estimator = make_model(model["name"], **params)
        if "seed" in estimator.get_params() and "seed" not in params:
            estimator.set_params(seed=_model_seed(config, model, point))
        X = interaction_matrix(source, split.train)
        V = interaction_matrix(source, split.validation)
        estimator.fit(X, validation=V if V.nnz else None)
        stage = "eval"
        report = evaluate(estimator, split, source, EvalConfig(**config.metrics),
                          model_id=model_id, hp=point, hp_digest=hp,
                          dataset_id=config.dataset.get("id", "dataset"))
        report.write(run_dir)
        return report
    except Exception as exc:
        run_dir.mkdir(parents=True, exist_ok=True)
        err = StageError(stage, exc, strategy=tag, model=model_id, hp=point)
        (run_dir / "FAILED.json").write_text(canonical_json({**err.to_dict(), "error": str(exc)}))
        raise err from exc


def _clean(out):
    for name in _BUNDLE_ENTRIES:
        p = out / name
        if p.is_dir():
            shutil.rmtree(p)
        elif p.exists():
            p.unlink()


def bundle_files(out):
    """Relative path -> SHA-256 for every bundle file (cache excluded)."""
    files = {}
    for p in sorted(out.rglob("*")):
        rel = p.relative_to(out).as_posix()
        if p.is_file() and not rel.startswith("cache/") and rel != "bundle.json":
            files[rel] = sha256_bytes(p.read_bytes())
    return files


def run_experiment(config, out=None):
    """Execute every (strategy, model, hyperparameter point) and compare the rankings.

    Returns a :class:`Bundle`. Splits are cached under ``cache_dir``
    (default ``<out>/cache``) keyed by dataset digest, strategy, parameters
    and filter; a cached split is re-verified against its digests before
    reuse. On failure a ``FAILED.json`` marker names the stage, and the
    partial outputs are kept.
    """
    if not isinstance(config, ExperimentConfig):
        config = validate_config(config)
    out = Path(out or config.output or "splitkit-run")
    out.mkdir(parents=True, exist_ok=True)
    _clean(out)
    cache_root = Path(config.cache_dir) if config.cache_dir else out / "cache" / "splits"
    cache_root.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(canonical_json(config.result_dict()), encoding="utf-8")

    try:
        try:
            dataset = load_source_dataset(config.dataset)
        except (DataError, OSError) as exc:
            raise StageError("ingest", exc) from exc
        (out / "dataset.json").write_text(canonical_json({
            "id": config.dataset.get("id"),
            "digest": dataset.digest,
            "interactions": len(dataset),
            "users": dataset.n_users,
            "items": dataset.n_items,
            "baskets": dataset.n_baskets,
            "time_granularity": dataset.time_granularity,
        }), encoding="utf-8")

        prepared = {}
        manifests = {}
        for strategy in config.strategies:
            try:
                split, source, hit = _prepare_split(dataset, strategy, cache_root)
            except Exception as exc:
                raise StageError("split", exc, strategy=strategy["tag"]) from exc
            log.info("split %s: %s", strategy["tag"], "cache hit" if hit else "computed")
            prepared[strategy["tag"]] = (split, source)
            manifests[strategy["tag"]] = split.manifest
            d = out / "splits" / strategy["tag"]
            d.mkdir(parents=True, exist_ok=True)
            body = split.manifest.to_dict()
            body["filter"] = strategy["filter"]
            (d / "manifest.json").write_text(canonical_json(body), encoding="utf-8")

        jobs = [(strategy, model, point)
                for strategy in config.strategies
                for model in config.models
                for point in config.hp_points(model)]

        def work(job):
            strategy, model, point = job
            split, source = prepared[strategy["tag"]]
            return _run_one(config, out, strategy, split, source, model, point)

        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                reports = list(pool.map(work, jobs))
        else:
            reports = [work(job) for job in jobs]

        swap_reports = {}
        try:
            for metric in EvalConfig(**config.metrics).metric_names:
                swap = rank_swap_report(reports, metric, config.reference)
                swap_reports[metric] = swap
                d = out / "comparisons" / metric
                d.mkdir(parents=True, exist_ok=True)
                (d / "table.txt").write_text(swap.render_text(), encoding="utf-8")
                (d / "table.json").write_text(swap.to_json(), encoding="utf-8")
                (d / "table.csv").write_text(swap.to_csv(), encoding="utf-8")
                s = out / "scatter" / metric
                s.mkdir(parents=True, exist_ok=True)
                tags = [st["tag"] for st in config.strategies]
                for a, b in itertools.combinations(tags, 2):
                    rows = scatter_rows(reports, a, b, metric)
                    (s / f"{a}__{b}.csv").write_text(scatter_csv(rows, a, b), encoding="utf-8")
        except Exception as exc:
            raise StageError("compare", exc) from exc
    except StageError as err:
        (out / "FAILED.json").write_text(canonical_json(err.to_dict()), encoding="utf-8")
        raise

    files = bundle_files(out)
    digest = hashlib.sha256(canonical_json(files).encode()).hexdigest()
    (out / "bundle.json").write_text(canonical_json({
        "toolkit_version": __version__,
        "files": files,
        "bundle_digest": digest,
    }), encoding="utf-8")
    return Bundle(out, digest, reports, swap_reports, manifests)
