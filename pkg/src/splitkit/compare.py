"""How the splitting strategy reorders models: Kendall's tau-b and rank swaps."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .utils import DataError, canonical_json, normalize_strategy

UP, DOWN = "▲", "▼"


class UndefinedCorrelationError(ValueError):
    """Kendall's tau-b is undefined because one side is entirely tied."""


@dataclass(frozen=True)
class TauCounts:
    concordant: int
    discordant: int
    ties_x: int      # tied in x only
    ties_y: int      # tied in y only
    ties_both: int

    @property
    def tau(self):
        p, q = self.concordant, self.discordant
        denom = math.sqrt((p + q + self.ties_x) * (p + q + self.ties_y))
        if denom == 0:
            raise UndefinedCorrelationError("tau-b is undefined: all values tied on one side")
        return (p - q) / denom

    def to_dict(self):
        return {"concordant": self.concordant, "discordant": self.discordant,
                "ties_x": self.ties_x, "ties_y": self.ties_y, "ties_both": self.ties_both}


def kendall_counts(x, y, chunk=2048):
    """Concordant/discordant/tie counts over all pairs of positions."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d sequences of equal length")
    if len(x) < 2:
        raise ValueError("Kendall's tau needs at least two paired values")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("scores must be finite")
    p = q = tx = ty = tb = 0
    n = len(x)
    for lo in range(0, n, chunk):
        rows = np.arange(lo, min(lo + chunk, n))
        dx = np.sign(x[rows, None] - x[None, :])
        dy = np.sign(y[rows, None] - y[None, :])
        upper = np.arange(n)[None, :] > rows[:, None]
        prod = dx * dy
        p += int(np.count_nonzero((prod > 0) & upper))
        q += int(np.count_nonzero((prod < 0) & upper))
        zx, zy = (dx == 0) & upper, (dy == 0) & upper
        tx += int(np.count_nonzero(zx & ~zy))
        ty += int(np.count_nonzero(zy & ~zx))
        tb += int(np.count_nonzero(zx & zy))
    return TauCounts(p, q, tx, ty, tb)


def kendall_tau(x, y):
    """Kendall's tau-b between two paired score lists."""
    return kendall_counts(x, y).tau


@dataclass
class SystemRanking:
    """Models ordered by descending score (ties by model id)."""

    strategy: str
    metric: str
    entries: list

    @classmethod
    def from_scores(cls, strategy, metric, scores):
        for model, s in scores.items():
            if not math.isfinite(s):
                raise DataError(f"{strategy}/{model}: non-finite {metric} score {s!r}")
        entries = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(strategy, metric, entries)

    @property
    def ranks(self):
        """1-based rank of every model."""
        return {m: r for r, (m, _) in enumerate(self.entries, start=1)}

    @property
    def scores(self):
        return dict(self.entries)


@dataclass
class RankComparison:
    """Agreement between the orderings induced by two strategies.

    ``displacements[m]`` is ``rank_a(m) - rank_b(m)``: positive when model
    ``m`` moves up (towards rank 1) under strategy ``b``.
    """

    strategy_a: str
    strategy_b: str
    metric: str
    tau: float
    counts: TauCounts
    displacements: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "strategy_a": self.strategy_a,
            "strategy_b": self.strategy_b,
            "metric": self.metric,
            "tau": self.tau,
            "counts": self.counts.to_dict(),
            "displacements": self.displacements,
        }


def compare_rankings(a, b):
    models = sorted(a.scores)
    if set(models) != set(b.scores):
        diff = sorted(set(a.scores) ^ set(b.scores))
        raise DataError(f"model sets differ between {a.strategy} and {b.strategy}: {diff}")
    counts = kendall_counts([a.scores[m] for m in models], [b.scores[m] for m in models])
    ra, rb = a.ranks, b.ranks
    return RankComparison(a.strategy, b.strategy, a.metric, counts.tau, counts,
                          {m: ra[m] - rb[m] for m in models})


def arrow(displacement):
    """Up/down glyph with the number of places moved, or '' for no move."""
    if displacement > 0:
        return f"{UP}({displacement})"
    if displacement < 0:
        return f"{DOWN}({-displacement})"
    return ""


@dataclass
class RankSwapReport:
    metric: str
    reference: str
    rankings: dict          # strategy -> SystemRanking
    comparisons: list       # RankComparison for every strategy pair

    @property
    def strategies(self):
        return list(self.rankings)

    def displacement(self, strategy):
        """Per-model displacement of ``strategy`` relative to the reference."""
        if strategy == self.reference:
            return {m: 0 for m in self.rankings[strategy].scores}
        for c in self.comparisons:
            if (c.strategy_a, c.strategy_b) == (self.reference, strategy):
                return dict(c.displacements)
            if (c.strategy_b, c.strategy_a) == (self.reference, strategy):
                return {m: -d for m, d in c.displacements.items()}
        raise KeyError(strategy)

    def tau(self, a, b):
        for c in self.comparisons:
            if {c.strategy_a, c.strategy_b} == {a, b}:
                return c.tau
        raise KeyError((a, b))

    def rows(self):
        """One row per model, ordered best-first under the reference strategy."""
        out = []
        disp = {s: self.displacement(s) for s in self.strategies}
        for model, _ in self.rankings[self.reference].entries:
            row = {"model": model}
            for s in self.strategies:
                row[f"{s}:score"] = self.rankings[s].scores[model]
                row[f"{s}:rank"] = self.rankings[s].ranks[model]
                row[f"{s}:move"] = disp[s][model]
            out.append(row)
        return out

    def render_text(self, precision=4):
        header = ["model"] + self.strategies
        body = []
        disp = {s: self.displacement(s) for s in self.strategies}
        for model, _ in self.rankings[self.reference].entries:
            cells = [model]
            for s in self.strategies:
                cell = f"{self.rankings[s].scores[model]:.{precision}f}"
                mark = arrow(disp[s][model])
                cells.append(f"{cell} {mark}" if mark else cell)
            body.append(cells)
        widths = [max(len(r[c]) for r in [header] + body) for c in range(len(header))]
        lines = [f"{self.metric}, sorted by {self.reference}"]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in body]
        lines.append("")
        for c in self.comparisons:
            lines.append(f"tau-b({c.strategy_a}, {c.strategy_b}) = {c.tau:.4f}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {
            "metric": self.metric,
            "reference": self.reference,
            "rankings": {s: [[m, v] for m, v in r.entries] for s, r in self.rankings.items()},
            "rows": self.rows(),
            "comparisons": [c.to_dict() for c in self.comparisons],
        }

    def to_json(self):
        return canonical_json(self.to_dict())

    def to_csv(self):
        rows = self.rows()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()


def _scores_by_strategy(reports, metric):
    by = {}
    datasets = {r.dataset_id for r in reports}
    if len(datasets) > 1:
        raise DataError(f"reports span several datasets: {sorted(datasets)}")
    for r in reports:
        scores = by.setdefault(r.strategy, {})
        if r.model_id in scores:
            raise DataError(f"duplicate report for model {r.model_id!r} under {r.strategy}")
        scores[r.model_id] = r.metric(metric)
    return by


def rank_swap_report(reports, metric="ndcg@10", reference="leave-one-last-item"):
    """Rank models per strategy and compare every strategy pair.

    Parameters
    ----------
    reports : iterable of EvalReport
        One report per (strategy, model), all on the same dataset.
    metric : str
        Report metric name such as ``"ndcg@10"``.
    reference : str
        Strategy whose ordering the table follows and against which
        displacements are annotated.
    """
    reports = list(reports)
    by = _scores_by_strategy(reports, metric)
    reference = normalize_strategy(reference)
    if len(by) < 2:
        raise DataError(f"need reports for at least two strategies, got {sorted(by)}")
    if reference not in by:
        raise DataError(f"reference strategy {reference!r} has no reports")
    ref_models = set(by[reference])
    for s, scores in by.items():
        if set(scores) != ref_models:
            diff = sorted(ref_models ^ set(scores))
            raise DataError(f"model sets differ between {reference} and {s}: {diff}")
    order = [reference] + [s for s in by if s != reference]
    rankings = {s: SystemRanking.from_scores(s, metric, by[s]) for s in order}
    comparisons = [compare_rankings(rankings[a], rankings[b])
                   for a, b in itertools.combinations(order, 2)]
    return RankSwapReport(metric, reference, rankings, comparisons)


def scatter_rows(reports, strategy_a, strategy_b, metric="ndcg@10"):
    """Paired scores ``(x, y, model, hp_digest)`` for models evaluated under both strategies."""
    a, b = normalize_strategy(strategy_a), normalize_strategy(strategy_b)
    index = {(r.strategy, r.model_id): r for r in reports}
    rows = []
    for (s, model_id), r in sorted(index.items()):
        if s != a or (b, model_id) not in index:
            continue
        rows.append((r.metric(metric), index[(b, model_id)].metric(metric), model_id, r.hp_digest))
    return rows


def scatter_csv(rows, strategy_a, strategy_b):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x_score:{strategy_a}", f"y_score:{strategy_b}", "model", "hp_digest"])
    for x, y, m, h in rows:
        w.writerow([repr(x), repr(y), m, h])
    return buf.getvalue()
