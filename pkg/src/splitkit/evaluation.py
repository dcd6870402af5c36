"""Per-user ranking evaluation of a fitted recommender on a split."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .metrics import ndcg_at_k, rank_candidates, recall_at_k, top_k
from .models import interaction_matrix
from .utils import (
    FORMAT_VERSION,
    ConfigError,
    DataError,
    EmptyResultError,
    canonical_json,
    check_positive,
    make_rng,
)


@dataclass(frozen=True)
class EvalConfig:
    """Ranking protocol.

    ``candidate_mode="full"`` ranks every item seen in training (minus the
    user's own training items when ``exclude_train_items``);
    ``"sampled"`` ranks the relevant items plus ``n_negatives`` seeded
    uniform negatives. Relevance is binary: the distinct items of the
    user's test interactions, whether they come from one basket or the
    union of several (``relevance_granularity`` is echoed in reports).
    """

    k: int = 10
    candidate_mode: str = "full"
    n_negatives: int = 100
    seed: int = 0
    exclude_train_items: bool = True
    relevance_granularity: str = "item"
    recall_denominator: str = "relevant"

    def __post_init__(self):
        check_positive("k", self.k, integer=True)
        if self.candidate_mode not in ("full", "sampled"):
            raise ConfigError(f"candidate_mode: expected 'full' or 'sampled', got {self.candidate_mode!r}")
        if self.candidate_mode == "sampled":
            check_positive("n_negatives", self.n_negatives, integer=True)
        if self.relevance_granularity not in ("item", "basket-union"):
            raise ConfigError(
                f"relevance_granularity: expected 'item' or 'basket-union', got {self.relevance_granularity!r}")
        if self.recall_denominator not in ("relevant", "truncated"):
            raise ConfigError(
                f"recall_denominator: expected 'relevant' or 'truncated', got {self.recall_denominator!r}")

    def to_dict(self):
        return {
            "k": self.k,
            "candidate_mode": self.candidate_mode,
            "n_negatives": self.n_negatives,
            "seed": self.seed,
            "exclude_train_items": self.exclude_train_items,
            "relevance_granularity": self.relevance_granularity,
            "recall_denominator": self.recall_denominator,
        }

    @property
    def metric_names(self):
        return (f"ndcg@{self.k}", f"recall@{self.k}")


@dataclass
class EvalReport:
    model: str
    strategy: str
    dataset_id: str
    config: dict
    users: np.ndarray
    ndcg: np.ndarray
    recall: np.ndarray
    model_id: str = ""
    hp: dict = field(default_factory=dict)
    hp_digest: str = ""
    n_empty_relevant: int = 0
    n_skipped_cold: int = 0
    #: stored means and user count, used when per-user rows are unavailable
    summary: dict | None = None

    def __post_init__(self):
        if not self.model_id:
            self.model_id = self.model

    @property
    def k(self):
        return self.config["k"]

    @property
    def n_evaluated(self):
        if self.summary is not None and len(self.users) == 0:
            return self.summary["n_evaluated"]
        return int(len(self.users))

    @property
    def mean_ndcg(self):
        return _mean(self.ndcg)

    @property
    def mean_recall(self):
        return _mean(self.recall)

    @property
    def metrics(self):
        if self.summary is not None and len(self.users) == 0:
            return dict(self.summary["metrics"])
        return {f"ndcg@{self.k}": self.mean_ndcg, f"recall@{self.k}": self.mean_recall}

    def metric(self, name):
        try:
            return self.metrics[name]
        except KeyError:
            raise ConfigError(f"metric {name!r} not in report; available: {sorted(self.metrics)}") from None

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "toolkit_version": __version__,
            "model": self.model,
            "model_id": self.model_id,
            "hp": self.hp,
            "hp_digest": self.hp_digest,
            "strategy": self.strategy,
            "dataset_id": self.dataset_id,
            "config": self.config,
            "metrics": self.metrics,
            "n_evaluated": self.n_evaluated,
            "n_empty_relevant": self.n_empty_relevant,
            "n_skipped_cold": self.n_skipped_cold,
        }

    def per_user_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["user", f"ndcg@{self.k}", f"recall@{self.k}"])
        for u, n, r in zip(self.users.tolist(), self.ndcg.tolist(), self.recall.tolist()):
            w.writerow([u, repr(n), repr(r)])
        return buf.getvalue()

    def write(self, directory):
        """Write ``report.json`` and ``per_user.csv`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(canonical_json(self.to_dict()), encoding="utf-8")
        (directory / "per_user.csv").write_text(self.per_user_csv(), encoding="utf-8")
        return directory


def _mean(values):
    if len(values) == 0:
        return float("nan")
    # fixed summation order, exact rounding
    return math.fsum(values.tolist()) / len(values)


def load_report(path):
    """Load a report from ``report.json`` (or its directory), with per-user rows when present."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    body = json.loads(path.read_text(encoding="utf-8"))
    if body.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported report format {body.get('format_version')!r}")
    users, ndcg, recall = [], [], []
    rows = path.with_name("per_user.csv")
    if rows.exists():
        with rows.open(newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for u, n, r in reader:
                users.append(int(u))
                ndcg.append(float(n))
                recall.append(float(r))
    report = EvalReport(
        model=body["model"], strategy=body["strategy"], dataset_id=body["dataset_id"],
        config=body["config"], users=np.array(users, dtype=np.int64),
        ndcg=np.array(ndcg), recall=np.array(recall), model_id=body["model_id"],
        hp=body.get("hp", {}), hp_digest=body.get("hp_digest", ""),
        n_empty_relevant=body.get("n_empty_relevant", 0),
        n_skipped_cold=body.get("n_skipped_cold", 0),
        summary=None if rows.exists() else {"metrics": body["metrics"],
                                            "n_evaluated": body["n_evaluated"]})
    if rows.exists() and any(abs(report.metrics[k] - v) > 1e-12 for k, v in body["metrics"].items()):
        raise DataError(f"{path}: stored means disagree with per-user rows")
    return report


def relevant_set(split, dataset, user):
    """Distinct test items of ``user`` (sorted)."""
    test = split.test
    return np.unique(dataset.item[test[dataset.user[test] == user]])


class _Context:
    """Per-split lookups shared by every user of one evaluation."""

    def __init__(self, split, dataset):
        self.train = interaction_matrix(dataset, split.train)
        self.universe = np.flatnonzero(np.asarray(self.train.sum(axis=0)).ravel() > 0)
        order = np.lexsort((dataset.item[split.test], dataset.user[split.test]))
        tu = dataset.user[split.test][order]
        ti = dataset.item[split.test][order]
        users, starts = np.unique(tu, return_index=True)
        ends = np.r_[starts[1:], len(tu)]
        self.relevant = {int(u): np.unique(ti[s:e]) for u, s, e in zip(users, starts, ends)}
        self.test_users = users
        held = [v for r, v in split.dropped.items() if r in ("cold-user", "cold-item")]
        lost = np.unique(dataset.user[np.concatenate(held)]) if held else np.empty(0, np.int64)
        self.n_empty_relevant = int(len(np.setdiff1d(lost, users)))

    def seen(self, user):
        return self.train.indices[self.train.indptr[user]:self.train.indptr[user + 1]]

    def candidates(self, user, config):
        cands = self.universe
        if config.exclude_train_items:
            cands = np.setdiff1d(cands, self.seen(user), assume_unique=True)
        if config.candidate_mode == "sampled":
            rel = self.relevant.get(int(user), np.empty(0, np.int64))
            pool = np.setdiff1d(cands, rel, assume_unique=True)
            rng = make_rng(config.seed, "sampled-negatives", int(user))
            negs = rng.choice(pool, size=min(config.n_negatives, len(pool)), replace=False)
            cands = np.union1d(rel, negs)
        return cands


def rank_for_user(model, user, split, dataset, config=EvalConfig(), _ctx=None):
    """Full candidate ranking for ``user``: descending score, ties by item index."""
    ctx = _ctx or _Context(split, dataset)
    if ctx.train.indptr[user + 1] == ctx.train.indptr[user]:
        raise DataError(f"user {user} has no training history")
    return rank_candidates(model.score(user), ctx.candidates(user, config))


def evaluate(model, split, dataset, config=EvalConfig(), *, model_id=None, hp=None,
             hp_digest="", dataset_id=None, batch_size=512):
    """Evaluate ``model`` on every test user with a non-empty relevant set.

    Users without training history are skipped and counted in
    ``n_skipped_cold``; users whose test interactions were all removed by
    the intersection rule are counted in ``n_empty_relevant``.

    Raises
    ------
    EmptyResultError
        If no user can be evaluated.
    """
    ctx = _Context(split, dataset)
    has_history = np.diff(ctx.train.indptr) > 0
    users = ctx.test_users[has_history[ctx.test_users]]
    skipped = len(ctx.test_users) - len(users)
    if len(users) == 0:
        raise EmptyResultError("no evaluable users: every test user lacks training history")
    k = config.k
    truncated = config.recall_denominator == "truncated"
    ndcg = np.empty(len(users))
    recall = np.empty(len(users))
    for lo in range(0, len(users), batch_size):
        block = users[lo:lo + batch_size]
        scores = model.score_users(block)
        for row, pos, u in zip(scores, range(lo, lo + len(block)), block):
            ranked = top_k(row, k, ctx.candidates(u, config))
            rel = ctx.relevant[int(u)]
            ndcg[pos] = ndcg_at_k(ranked, rel, k)
            recall[pos] = recall_at_k(ranked, rel, k, truncated=truncated)
    name = getattr(model, "name", None) or type(model).__name__
    return EvalReport(
        model=name,
        strategy=split.manifest.strategy,
        dataset_id=dataset_id or split.manifest.dataset_digest[:16],
        config=config.to_dict(),
        users=users.astype(np.int64),
        ndcg=ndcg,
        recall=recall,
        model_id=model_id or name,
        hp=hp or {},
        hp_digest=hp_digest,
        n_empty_relevant=ctx.n_empty_relevant,
        n_skipped_cold=int(skipped),
    )
