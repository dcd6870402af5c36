"""Train/validation/test splitting strategies, manifests and leakage analysis.

Every splitter is a pure function of the dataset and its parameters. Results
index into the interactions of the (already filtered) source dataset; any
interaction not placed in a partition is recorded as dropped together with a
reason.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from ._version import __version__
from .ingest import export_dataset, read_dataset
from .utils import (
    FORMAT_VERSION,
    ConfigError,
    DataError,
    EmptySplitError,
    canonical_json,
    ceil_fraction,
    check_positive,
    check_ratio,
    make_rng,
    normalize_strategy,
    sha256_bytes,
)

PARTITIONS = ("train", "validation", "test")

TOO_FEW_INTERACTIONS = "too-few-interactions"
TOO_FEW_BASKETS = "too-few-baskets"
EMPTY_TRAIN = "empty-train"
COLD_USER = "cold-user"
COLD_ITEM = "cold-item"


@dataclass(frozen=True)
class LeakageReport:
    leakage_fraction: float
    per_user_boundary_spread: int
    boundary_type: str
    earliest_test_timestamp: int
    leaking_interactions: int

    def to_dict(self):
        return {
            "leakage_fraction": self.leakage_fraction,
            "per_user_boundary_spread": self.per_user_boundary_spread,
            "boundary_type": self.boundary_type,
            "earliest_test_timestamp": self.earliest_test_timestamp,
            "leaking_interactions": self.leaking_interactions,
        }


@dataclass
class SplitManifest:
    """Self-describing record of a split: parameters, counts and digests."""

    strategy: str
    params: dict
    dataset_digest: str
    time_granularity: str
    counts: dict
    dropped: dict
    leakage_fraction: float
    digests: dict
    boundary_timestamp: int | None = None
    validation_boundary_timestamp: int | None = None
    validation_is_fold_in: bool = False
    format_version: int = FORMAT_VERSION
    toolkit_version: str = __version__

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "toolkit_version": self.toolkit_version,
            "strategy": self.strategy,
            "params": self.params,
            "dataset_digest": self.dataset_digest,
            "time_granularity": self.time_granularity,
            "counts": self.counts,
            "dropped": self.dropped,
            "boundary_timestamp": self.boundary_timestamp,
            "validation_boundary_timestamp": self.validation_boundary_timestamp,
            "validation_is_fold_in": self.validation_is_fold_in,
            "leakage_fraction": self.leakage_fraction,
            "digests": self.digests,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("manifest_digest", None)
        return cls(**d)

    def table_row(self):
        """Users/items/baskets/interactions as a dataset-statistics row.

        Users and items count the training partition; baskets and
        interactions span all three partitions.
        """
        c = self.counts
        return {
            "users": c["train"]["users"],
            "items": c["train"]["items"],
            "baskets": sum(c[p]["baskets"] for p in PARTITIONS),
            "interactions": tuple(c[p]["interactions"] for p in PARTITIONS),
        }


@dataclass
class SplitResult:
    """Disjoint partitions over a source dataset's interaction indices."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    dropped: dict = field(default_factory=dict)
    manifest: SplitManifest | None = None

    @property
    def strategy(self):
        return self.manifest.strategy

    @property
    def dropped_indices(self):
        if not self.dropped:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(list(self.dropped.values())))

    def partition(self, name):
        if name not in PARTITIONS:
            raise KeyError(name)
        return getattr(self, name)

    def __eq__(self, other):
        if not isinstance(other, SplitResult):
            return NotImplemented
        return (all(np.array_equal(self.partition(p), other.partition(p)) for p in PARTITIONS)
                and self.dropped.keys() == other.dropped.keys()
                and all(np.array_equal(v, other.dropped[k]) for k, v in self.dropped.items())
                and self.manifest.to_dict() == other.manifest.to_dict())


def _index_array(parts):
    parts = [np.asarray(p, dtype=np.int64).ravel() for p in parts]
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(parts))


def partition_bytes(indices):
    """Canonical newline-delimited serialization of a sorted index set."""
    if len(indices) == 0:
        return b""
    return ("\n".join(map(str, np.asarray(indices).tolist())) + "\n").encode()


def dropped_bytes(dropped):
    rows = sorted((int(i), reason) for reason, idx in dropped.items() for i in idx)
    return "".join(f"{i}\t{reason}\n" for i, reason in rows).encode()


def partition_counts(dataset, indices):
    return {
        "users": int(np.unique(dataset.user[indices]).size),
        "items": int(np.unique(dataset.item[indices]).size),
        "baskets": int(np.unique(dataset.basket[indices]).size),
        "interactions": int(len(indices)),
    }


def _boundary_type(tag):
    return "global" if tag == "temporal-global" else "per-user"


def leakage_report(split, dataset):
    """Measure how much training data postdates the start of the test period.

    The leakage fraction is the share of training interactions whose
    timestamp is strictly later than the earliest test timestamp.
    """
    if len(split.test) == 0:
        raise EmptySplitError("leakage is undefined for an empty test partition")
    tag = split.manifest.strategy if split.manifest is not None else None
    return _leakage(dataset, split.train, split.test, _boundary_type(tag))


def _leakage(dataset, train, test, boundary_type):
    ts = dataset.timestamp
    earliest = int(ts[test].min())
    leaking = int(np.count_nonzero(ts[train] > earliest)) if len(train) else 0
    fraction = leaking / len(train) if len(train) else 0.0
    spread = 0
    if boundary_type == "per-user":
        # per-user boundary = that user's first test timestamp
        first = np.full(dataset.n_users, np.iinfo(np.int64).max)
        np.minimum.at(first, dataset.user[test], ts[test])
        bounds = first[first != np.iinfo(np.int64).max]
        spread = int(bounds.max() - bounds.min())
    return LeakageReport(fraction, spread, boundary_type, earliest, leaking)


def _drop_cold(dataset, train, part, *, users=True, items=True):
    """Split ``part`` into (kept, cold-user, cold-item) against the train set."""
    cold_user = np.zeros(len(part), dtype=bool)
    if users:
        seen = np.zeros(dataset.n_users, dtype=bool)
        seen[dataset.user[train]] = True
        cold_user = ~seen[dataset.user[part]]
    cold_item = np.zeros(len(part), dtype=bool)
    if items:
        seen = np.zeros(dataset.n_items, dtype=bool)
        seen[dataset.item[train]] = True
        cold_item = ~seen[dataset.item[part]] & ~cold_user
    keep = ~(cold_user | cold_item)
    return part[keep], part[cold_user], part[cold_item]


def _basket_runs(dataset, indices):
    """Start offsets of consecutive same-basket runs within ``indices``."""
    b = dataset.basket[indices]
    return np.flatnonzero(np.r_[True, b[1:] != b[:-1]])


class BaseSplitter(BaseEstimator):
    """Common machinery: partition assembly, validation and manifest creation.

    Subclasses implement ``_assign(dataset)`` returning ``(train, validation,
    test, dropped, extra)`` where ``dropped`` maps a reason to index arrays.
    """

    tag = None
    #: apply the intersection rule by default
    default_intersection = False

    def _params(self):
        return dict(sorted(self.get_params().items()))

    def split(self, dataset):
        """Partition ``dataset`` and return a :class:`SplitResult`."""
        self._validate()
        if len(dataset) == 0:
            raise EmptySplitError(f"{self.tag}: dataset has no interactions")
        train, valid, test, dropped, extra = self._assign(dataset)
        train, valid, test = (_index_array(p) for p in (train, valid, test))
        dropped = {r: _index_array(v) for r, v in sorted(dropped.items())}
        dropped = {r: v for r, v in dropped.items() if len(v)}
        if len(train) == 0:
            raise EmptySplitError(f"{self.tag}: training partition is empty")
        if len(test) == 0:
            raise EmptySplitError(f"{self.tag}: test partition is empty")
        leak = _leakage(dataset, train, test, _boundary_type(self.tag))
        digests = {p: sha256_bytes(partition_bytes(a))
                   for p, a in zip(PARTITIONS, (train, valid, test))}
        digests["dropped"] = sha256_bytes(dropped_bytes(dropped))
        manifest = SplitManifest(
            strategy=self.tag,
            params=self._params(),
            dataset_digest=dataset.digest,
            time_granularity=dataset.time_granularity,
            counts={p: partition_counts(dataset, a)
                    for p, a in zip(PARTITIONS, (train, valid, test))},
            dropped={"count": int(sum(len(v) for v in dropped.values())),
                     "reasons": {r: int(len(v)) for r, v in dropped.items()}},
            leakage_fraction=leak.leakage_fraction,
            digests=digests,
            **extra,
        )
        return SplitResult(train, valid, test, dropped, manifest)

    def _validate(self):
        pass

    def _intersection(self):
        return self.default_intersection if self.intersection is None else bool(self.intersection)


class LeaveOneLastItemSplitter(BaseSplitter):
    """Hold out each user's last interaction for test and second-last for validation.

    Users with fewer than ``min_interactions`` interactions are dropped. With
    ``min_interactions=2`` two-interaction users contribute train and test
    only.
    """

    tag = "leave-one-last-item"

    def __init__(self, min_interactions=3, intersection=None):
        self.min_interactions = min_interactions
        self.intersection = intersection

    def _validate(self):
        if check_positive("min_interactions", self.min_interactions, integer=True) < 2:
            raise ConfigError("min_interactions: must be at least 2")

    def _assign(self, dataset):
        train, valid, test, short = [], [], [], []
        for _, c in dataset.iter_chronologies():
            n = len(c)
            if n < self.min_interactions:
                short.append(c)
                continue
            test.append(c[-1:])
            if n >= 3:
                valid.append(c[-2:-1])
                train.append(c[:-2])
            else:
                train.append(c[:-1])
        if not test:
            raise EmptySplitError(
                f"{self.tag}: no user has at least {self.min_interactions} interactions")
        return _finish_per_user(self, dataset, train, valid, test, {TOO_FEW_INTERACTIONS: short})


class LeaveOneLastBasketSplitter(BaseSplitter):
    """Hold out each user's last basket for test and second-last basket for validation."""

    tag = "leave-one-last-basket"

    def __init__(self, min_baskets=3, intersection=None):
        self.min_baskets = min_baskets
        self.intersection = intersection

    def _validate(self):
        if check_positive("min_baskets", self.min_baskets, integer=True) < 2:
            raise ConfigError("min_baskets: must be at least 2")

    def _assign(self, dataset):
        train, valid, test, short = [], [], [], []
        for _, c in dataset.iter_chronologies():
            runs = _basket_runs(dataset, c)
            if len(runs) < self.min_baskets:
                short.append(c)
                continue
            test.append(c[runs[-1]:])
            if len(runs) >= 3:
                valid.append(c[runs[-2]:runs[-1]])
                train.append(c[:runs[-2]])
            else:
                train.append(c[:runs[-1]])
        if not test:
            raise EmptySplitError(f"{self.tag}: no user has at least {self.min_baskets} baskets")
        return _finish_per_user(self, dataset, train, valid, test, {TOO_FEW_BASKETS: short})


def _finish_per_user(splitter, dataset, train, valid, test, dropped):
    train, valid, test = (_index_array(p) for p in (train, valid, test))
    if splitter._intersection():
        test, cu_t, ci_t = _drop_cold(dataset, train, test)
        valid, cu_v, ci_v = _drop_cold(dataset, train, valid)
        dropped[COLD_USER] = [cu_t, cu_v]
        dropped[COLD_ITEM] = [ci_t, ci_v]
    return train, valid, test, {r: _index_array(v) for r, v in dropped.items()}, {}


def _ratio_cut(n, test_ratio, valid_ratio):
    """Sizes (train, valid, test) for ``n`` units under ceiling rounding."""
    n_test = ceil_fraction(test_ratio, n)
    m = n - n_test
    n_valid = ceil_fraction(valid_ratio, m)
    return m - n_valid, n_valid, n_test


class TemporalUserSplitter(BaseSplitter):
    """Per-user holdout of the most recent fraction of each history.

    For a user with ``n`` units (interactions, or baskets when
    ``unit="basket"``) the last ``ceil(test_ratio * n)`` go to test and, of
    the ``m`` remaining, the last ``ceil(valid_ratio * m)`` to validation.
    """

    tag = "temporal-user"

    def __init__(self, test_ratio=0.2, valid_ratio=0.2, unit="interaction",
                 min_interactions=3, intersection=None):
        self.test_ratio = test_ratio
        self.valid_ratio = valid_ratio
        self.unit = unit
        self.min_interactions = min_interactions
        self.intersection = intersection

    def _validate(self):
        check_ratio("test_ratio", self.test_ratio)
        check_ratio("valid_ratio", self.valid_ratio)
        check_positive("min_interactions", self.min_interactions, integer=True)
        if self.unit not in ("interaction", "basket"):
            raise ConfigError(f"unit: expected 'interaction' or 'basket', got {self.unit!r}")

    def _assign(self, dataset):
        train, valid, test = [], [], []
        short, empty = [], []
        for _, c in dataset.iter_chronologies():
            if self.unit == "basket":
                starts = np.r_[_basket_runs(dataset, c), len(c)]
            else:
                starts = np.arange(len(c) + 1)
            n = len(starts) - 1
            if n < self.min_interactions:
                short.append(c)
                continue
            n_train, n_valid, _ = _ratio_cut(n, self.test_ratio, self.valid_ratio)
            if n_train < 1:
                empty.append(c)
                continue
            train.append(c[:starts[n_train]])
            valid.append(c[starts[n_train]:starts[n_train + n_valid]])
            test.append(c[starts[n_train + n_valid]:])
        if not train:
            raise EmptySplitError(f"{self.tag}: every user ends up with an empty training set")
        reason = TOO_FEW_BASKETS if self.unit == "basket" else TOO_FEW_INTERACTIONS
        return _finish_per_user(self, dataset, train, valid, test,
                                {reason: short, EMPTY_TRAIN: empty})


class TemporalGlobalSplitter(BaseSplitter):
    """One time boundary shared by all users.

    Baskets are ordered globally by (timestamp, basket index). The last
    ``ceil(test_ratio * N)`` baskets form the test period and the last
    ``ceil(valid_ratio * M)`` of the remaining ``M`` the validation period
    (``unit="interaction"`` sizes both periods by interaction count
    instead). Baskets sharing a boundary timestamp stay on the earlier side,
    so every training timestamp is at most the boundary and every test
    timestamp strictly after it. Validation and test interactions whose
    user or item never occurs in training are dropped when ``intersection``
    is on (the default).
    """

    tag = "temporal-global"
    default_intersection = True

    def __init__(self, test_ratio=0.2, valid_ratio=0.2, unit="basket", intersection=None):
        self.test_ratio = test_ratio
        self.valid_ratio = valid_ratio
        self.unit = unit
        self.intersection = intersection

    def _validate(self):
        check_ratio("test_ratio", self.test_ratio)
        check_ratio("valid_ratio", self.valid_ratio)
        if self.unit not in ("basket", "interaction"):
            raise ConfigError(f"unit: expected 'basket' or 'interaction', got {self.unit!r}")

    def _cut(self, sizes, ratio):
        """Number of leading baskets kept before the trailing ``ratio`` share."""
        if self.unit == "basket":
            return len(sizes) - ceil_fraction(ratio, len(sizes))
        need = ceil_fraction(ratio, int(sizes.sum()))
        tail = np.cumsum(sizes[::-1])
        return len(sizes) - (int(np.searchsorted(tail, need)) + 1)

    def _assign(self, dataset):
        # interactions are sorted by (timestamp, basket), so baskets are contiguous runs
        starts = _basket_runs(dataset, np.arange(len(dataset)))
        bounds = np.r_[starts, len(dataset)]
        sizes = np.diff(bounds)
        bts = dataset.timestamp[starts]

        cut = self._cut(sizes, self.test_ratio)
        if cut <= 0:
            raise EmptySplitError(f"{self.tag}: test_ratio={self.test_ratio} leaves no training baskets")
        boundary = int(bts[cut - 1])
        cut = int(np.searchsorted(bts, boundary, side="right"))
        if cut >= len(bts):
            raise DataError(
                f"{self.tag}: degenerate boundary, all baskets from the cut onward share "
                f"timestamp {boundary}; no basket lies strictly after it")

        vcut = self._cut(sizes[:cut], self.valid_ratio)
        if vcut <= 0:
            raise EmptySplitError(f"{self.tag}: valid_ratio={self.valid_ratio} leaves no training baskets")
        vboundary = int(bts[vcut - 1])
        vcut = int(np.searchsorted(bts[:cut], vboundary, side="right"))

        train = np.arange(bounds[vcut], dtype=np.int64)
        valid = np.arange(bounds[vcut], bounds[cut], dtype=np.int64)
        test = np.arange(bounds[cut], len(dataset), dtype=np.int64)
        dropped = {}
        if self._intersection():
            test, cu_t, ci_t = _drop_cold(dataset, train, test)
            valid, cu_v, ci_v = _drop_cold(dataset, train, valid)
            dropped = {COLD_USER: _index_array([cu_t, cu_v]),
                       COLD_ITEM: _index_array([ci_t, ci_v])}
        extra = {"boundary_timestamp": boundary, "validation_boundary_timestamp": vboundary}
        return train, valid, test, dropped, extra


def _require_seed(splitter):
    if splitter.seed is None:
        raise ConfigError(f"seed: required for the {splitter.tag} strategy")
    if isinstance(splitter.seed, bool) or int(splitter.seed) != splitter.seed:
        raise ConfigError(f"seed: expected an integer, got {splitter.seed!r}")


class RandomSplitter(BaseSplitter):
    """Seeded per-user random holdout.

    ``mode="leave-one"`` puts one uniformly chosen interaction per user in
    test and another in validation; ``mode="ratio"`` samples
    ``ceil(test_ratio * n)`` test and ``ceil(valid_ratio * m)`` validation
    interactions. Each user's draw depends only on (seed, external user ID,
    history length), so unrelated users cannot perturb it.
    """

    def __init__(self, mode="leave-one", test_ratio=0.2, valid_ratio=0.2, seed=None,
                 min_interactions=3, intersection=None):
        self.mode = mode
        self.test_ratio = test_ratio
        self.valid_ratio = valid_ratio
        self.seed = seed
        self.min_interactions = min_interactions
        self.intersection = intersection

    @property
    def tag(self):
        return "random-ratio" if self.mode == "ratio" else "random-leave-one"

    def _validate(self):
        if self.mode not in ("leave-one", "ratio"):
            raise ConfigError(f"mode: expected 'leave-one' or 'ratio', got {self.mode!r}")
        _require_seed(self)
        check_positive("min_interactions", self.min_interactions, integer=True)
        if self.mode == "ratio":
            check_ratio("test_ratio", self.test_ratio)
            check_ratio("valid_ratio", self.valid_ratio)

    def _params(self):
        params = super()._params()
        if self.mode == "leave-one":
            params.pop("test_ratio")
            params.pop("valid_ratio")
        return params

    def _assign(self, dataset):
        train, valid, test, short, empty = [], [], [], [], []
        for u, c in dataset.iter_chronologies():
            n = len(c)
            if n < (max(self.min_interactions, 3) if self.mode == "leave-one" else self.min_interactions):
                short.append(c)
                continue
            if self.mode == "leave-one":
                n_valid, n_test = 1, 1
            else:
                n_train, n_valid, n_test = _ratio_cut(n, self.test_ratio, self.valid_ratio)
                if n_train < 1:
                    empty.append(c)
                    continue
            perm = make_rng(self.seed, "random-split", dataset.user_ids[u], n).permutation(n)
            test.append(c[perm[:n_test]])
            valid.append(c[perm[n_test:n_test + n_valid]])
            train.append(c[perm[n_test + n_valid:]])
        if not test:
            raise EmptySplitError(f"{self.tag}: no user has enough interactions")
        return _finish_per_user(self, dataset, train, valid, test,
                                {TOO_FEW_INTERACTIONS: short, EMPTY_TRAIN: empty})


class UserSplitter(BaseSplitter):
    """Hold out a seeded cohort of users.

    ``ceil(test_user_ratio * |U|)`` users form the test cohort. The
    chronologically first ``fold_in_ratio`` share of each cohort history is
    the fold-in set, stored as the validation partition; the remainder is
    test. All other users train. Test interactions on items absent from
    training are dropped when ``intersection`` is on.
    """

    tag = "user-split"
    default_intersection = True

    def __init__(self, test_user_ratio=0.2, fold_in_ratio=0.5, seed=None, intersection=None):
        self.test_user_ratio = test_user_ratio
        self.fold_in_ratio = fold_in_ratio
        self.seed = seed
        self.intersection = intersection

    def _validate(self):
        check_ratio("test_user_ratio", self.test_user_ratio)
        check_ratio("fold_in_ratio", self.fold_in_ratio, low_inclusive=True)
        _require_seed(self)

    def _assign(self, dataset):
        n_users = dataset.n_users
        if n_users < 2:
            raise EmptySplitError(f"{self.tag}: need at least 2 users, got {n_users}")
        n_test = ceil_fraction(self.test_user_ratio, n_users)
        if n_test >= n_users:
            raise EmptySplitError(f"{self.tag}: test cohort would contain every user")
        cohort = np.zeros(n_users, dtype=bool)
        cohort[make_rng(self.seed, "user-split").choice(n_users, n_test, replace=False)] = True
        train, fold_in, test = [], [], []
        for u, c in dataset.iter_chronologies():
            if not cohort[u]:
                train.append(c)
                continue
            k = min(ceil_fraction(self.fold_in_ratio, len(c)), len(c) - 1) if self.fold_in_ratio else 0
            fold_in.append(c[:k])
            test.append(c[k:])
        train, fold_in, test = (_index_array(p) for p in (train, fold_in, test))
        dropped = {}
        if self._intersection():
            test, _, cold = _drop_cold(dataset, train, test, users=False)
            dropped[COLD_ITEM] = cold
        return train, fold_in, test, dropped, {"validation_is_fold_in": True}


def _random_splitter(mode, params):
    if params.setdefault("mode", mode) != mode:
        raise ConfigError(f"mode: {params['mode']!r} contradicts the random-{mode} strategy")
    return RandomSplitter(**params)


_SPLITTERS = {
    "leave-one-last-item": LeaveOneLastItemSplitter,
    "leave-one-last-basket": LeaveOneLastBasketSplitter,
    "temporal-user": TemporalUserSplitter,
    "temporal-global": TemporalGlobalSplitter,
    "random-leave-one": lambda **kw: _random_splitter("leave-one", kw),
    "random-ratio": lambda **kw: _random_splitter("ratio", kw),
    "user-split": UserSplitter,
}


def make_splitter(strategy, **params):
    """Construct the splitter for a strategy tag (aliases such as ``l1i`` accepted)."""
    tag = normalize_strategy(strategy)
    try:
        return _SPLITTERS[tag](**params)
    except TypeError as exc:
        raise ConfigError(f"{tag}: {exc}") from None


def split_dataset(dataset, strategy, **params):
    return make_splitter(strategy, **params).split(dataset)


def split_leave_one_last_item(dataset, **params):
    return LeaveOneLastItemSplitter(**params).split(dataset)


def split_leave_one_last_basket(dataset, **params):
    return LeaveOneLastBasketSplitter(**params).split(dataset)


def split_temporal_user(dataset, test_ratio=0.2, valid_ratio=0.2, **params):
    return TemporalUserSplitter(test_ratio, valid_ratio, **params).split(dataset)


def split_temporal_global(dataset, test_ratio=0.2, valid_ratio=0.2, **params):
    return TemporalGlobalSplitter(test_ratio, valid_ratio, **params).split(dataset)


def split_random(dataset, strategy="random-leave-one", seed=None, **params):
    mode = "ratio" if normalize_strategy(strategy) == "random-ratio" else "leave-one"
    return RandomSplitter(mode=mode, seed=seed, **params).split(dataset)


def split_user(dataset, test_user_ratio=0.2, fold_in_ratio=0.5, seed=None, **params):
    return UserSplitter(test_user_ratio, fold_in_ratio, seed, **params).split(dataset)


# --- serialization -------------------------------------------------------

def _manifest_digest(body):
    return sha256_bytes(json.dumps(body, sort_keys=True, separators=(",", ":")).encode())


def export_split(split, directory, dataset=None):
    """Write partition index files, the dropped table and ``manifest.json``.

    When ``dataset`` is given it is exported under ``dataset/`` so the split
    directory is self-contained.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in PARTITIONS:
        (directory / f"{name}.idx").write_bytes(partition_bytes(split.partition(name)))
    (directory / "dropped.tsv").write_bytes(dropped_bytes(split.dropped))
    body = split.manifest.to_dict()
    body["manifest_digest"] = _manifest_digest(body)
    (directory / "manifest.json").write_text(canonical_json(body), encoding="utf-8")
    if dataset is not None:
        if dataset.digest != split.manifest.dataset_digest:
            raise DataError("dataset does not match the split's source digest")
        export_dataset(dataset, directory / "dataset")
    return directory


def _read_indices(data):
    if not data:
        return np.empty(0, dtype=np.int64)
    return np.array([int(x) for x in data.decode().split()], dtype=np.int64)


def read_manifest(directory):
    """Load and integrity-check ``manifest.json`` without touching partitions."""
    path = Path(directory) / "manifest.json"
    try:
        body = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable manifest ({exc})") from None
    version = body.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: format_version {version!r} is not supported "
                        f"(expected {FORMAT_VERSION})")
    stored = body.pop("manifest_digest", None)
    if stored != _manifest_digest(body):
        raise DataError(f"{path}: manifest digest mismatch (file edited or corrupted)")
    try:
        return SplitManifest.from_dict(body)
    except TypeError as exc:
        raise DataError(f"{path}: malformed manifest ({exc})") from None


def load_split(directory, dataset=None):
    """Load a split written by :func:`export_split`, verifying every digest.

    Partition files must match the manifest digests. Counts are recomputed
    against the source dataset (``dataset`` or the bundled ``dataset/``
    copy) and must equal the manifest's.
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    parts = {}
    for name in PARTITIONS:
        data = (directory / f"{name}.idx").read_bytes()
        if sha256_bytes(data) != manifest.digests[name]:
            raise DataError(f"{directory}: {name}.idx does not match its manifest digest")
        parts[name] = _read_indices(data)
    data = (directory / "dropped.tsv").read_bytes()
    if sha256_bytes(data) != manifest.digests["dropped"]:
        raise DataError(f"{directory}: dropped.tsv does not match its manifest digest")
    dropped = {}
    for line in data.decode().splitlines():
        idx, reason = line.split("\t")
        dropped.setdefault(reason, []).append(int(idx))
    dropped = {r: np.array(v, dtype=np.int64) for r, v in sorted(dropped.items())}

    if dataset is None and (directory / "dataset").is_dir():
        dataset = read_dataset(directory / "dataset")
    if dataset is not None:
        if dataset.digest != manifest.dataset_digest:
            raise DataError(f"{directory}: source dataset digest differs from the manifest")
        for name in PARTITIONS:
            idx = parts[name]
            if len(idx) and (idx.min() < 0 or idx.max() >= len(dataset)):
                raise DataError(f"{directory}: {name}.idx references missing interactions")
            if partition_counts(dataset, idx) != manifest.counts[name]:
                raise DataError(f"{directory}: {name} counts disagree with the manifest")
    return SplitResult(parts["train"], parts["validation"], parts["test"], dropped, manifest)
