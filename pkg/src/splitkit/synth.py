"""Synthetic basket logs with step-wise popularity drift.

Users are active over overlapping, jittered intervals of a shared horizon;
basket times are uniform within each user's interval and basket contents are
drawn without replacement in proportion to the item weights of the drift
window containing the basket time.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import build_dataset, export_dataset
from .utils import ConfigError, canonical_json, derive_seed


@dataclass(frozen=True)
class DriftWindow:
    start: int
    end: int
    weights: tuple

    def to_dict(self):
        return {"start": self.start, "end": self.end, "weights": list(self.weights)}


@dataclass(frozen=True)
class SynthConfig:
    """Generator parameters.

    ``drift`` is a sequence of :class:`DriftWindow` (or dicts with ``start``,
    ``end``, ``weights``) tiling ``[0, horizon)``; ``None`` means one window
    with uniform weights. ``user_activity_spread`` in ``[0, 1)`` shortens
    each user's active interval to ``(1 - spread) * horizon`` at a random
    offset, so larger values interleave users more.
    """

    n_users: int = 200
    n_items: int = 100
    baskets_per_user: tuple = (3, 8)
    items_per_basket: tuple = (1, 5)
    horizon: int = 1000
    drift: tuple | None = None
    user_activity_spread: float = 0.5
    seed: int = 0

    def windows(self):
        if self.drift is None:
            return (DriftWindow(0, self.horizon, (1.0,) * self.n_items),)
        return tuple(w if isinstance(w, DriftWindow) else
                     DriftWindow(int(w["start"]), int(w["end"]), tuple(w["weights"]))
                     for w in self.drift)

    def validate(self):
        errors = []
        for name in ("n_users", "n_items", "horizon"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                errors.append(f"{name}: expected a positive integer, got {v!r}")
        for name in ("baskets_per_user", "items_per_basket"):
            lo_hi = getattr(self, name)
            if len(lo_hi) != 2 or not 1 <= lo_hi[0] <= lo_hi[1]:
                errors.append(f"{name}: expected (low, high) with 1 <= low <= high, got {lo_hi!r}")
        if not 0 <= self.user_activity_spread < 1:
            errors.append(f"user_activity_spread: must lie in [0, 1), got {self.user_activity_spread!r}")
        if errors:
            raise ConfigError(errors)
        errors = []
        wins = self.windows()
        expect = 0
        for k, w in enumerate(wins):
            where = f"drift[{k}]"
            if w.start != expect or w.end <= w.start:
                errors.append(f"{where}: windows must tile [0, {self.horizon}) contiguously")
            expect = w.end
            weights = np.asarray(w.weights, dtype=float)
            if weights.shape != (self.n_items,):
                errors.append(f"{where}.weights: expected {self.n_items} weights, got {weights.shape[0]}")
                continue
            if np.any(weights < 0) or not np.all(np.isfinite(weights)):
                errors.append(f"{where}.weights: must be finite and non-negative")
            elif np.count_nonzero(weights) < self.items_per_basket[1]:
                errors.append(
                    f"{where}.weights: infeasible, only {np.count_nonzero(weights)} items have "
                    f"positive weight but baskets may hold {self.items_per_basket[1]}")
        if expect != self.horizon:
            errors.append(f"drift: windows end at {expect}, horizon is {self.horizon}")
        if errors:
            raise ConfigError(errors)
        return self

    def to_dict(self):
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "baskets_per_user": list(self.baskets_per_user),
            "items_per_basket": list(self.items_per_basket),
            "horizon": self.horizon,
            "drift": None if self.drift is None else [w.to_dict() for w in self.windows()],
            "user_activity_spread": self.user_activity_spread,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("baskets_per_user", "items_per_basket"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("drift") is not None:
            d["drift"] = tuple(DriftWindow(int(w["start"]), int(w["end"]), tuple(w["weights"]))
                               for w in d["drift"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"synth: {exc}") from None


def generate(config):
    """Generate a :class:`~splitkit.ingest.Dataset` from ``config`` (deterministic per seed)."""
    config.validate()
    rng = np.random.default_rng(derive_seed(config.seed, "synth"))
    wins = config.windows()
    ends = np.array([w.end for w in wins])
    probs = [np.asarray(w.weights, float) / np.sum(w.weights) for w in wins]
    span = max(1, int(round(config.horizon * (1.0 - config.user_activity_spread))))

    users, items, stamps, baskets = [], [], [], []
    n_basket = 0
    b_lo, b_hi = config.baskets_per_user
    k_lo, k_hi = config.items_per_basket
    for u in range(config.n_users):
        start = int(rng.integers(0, config.horizon - span + 1))
        n_b = int(rng.integers(b_lo, b_hi + 1))
        times = np.sort(rng.integers(start, start + span, size=n_b))
        uid = f"u{u:05d}"
        for t in times.tolist():
            w = int(np.searchsorted(ends, t, side="right"))
            size = int(rng.integers(k_lo, k_hi + 1))
            chosen = rng.choice(config.n_items, size=size, replace=False, p=probs[w])
            bid = f"b{n_basket:07d}"
            n_basket += 1
            for i in chosen.tolist():
                users.append(uid)
                items.append(f"i{i:05d}")
                stamps.append(t)
                baskets.append(bid)
    return build_dataset(users, items, stamps, baskets=baskets)


def drift_truth(config):
    """Ground-truth drift schedule, including each item's earliest possible time."""
    wins = config.windows()
    first = {}
    for w in wins:
        for i, weight in enumerate(w.weights):
            if weight > 0 and f"i{i:05d}" not in first:
                first[f"i{i:05d}"] = w.start
    return {
        "config": config.to_dict(),
        "windows": [w.to_dict() for w in wins],
        "first_allowed_time": first,
    }


def write_synth(config, directory, *, compress=False):
    """Generate, export in canonical form, and add a ``drift.json`` sidecar."""
    dataset = generate(config)
    directory = Path(directory)
    export_dataset(dataset, directory, compress=compress)
    (directory / "drift.json").write_text(canonical_json(drift_truth(config)), encoding="utf-8")
    return dataset


def step_drift(n_items, horizon, n_windows=2, *, n_rising=None, base_exponent=1.0,
               rising_weight=None, seed=0):
    """Build a step schedule where a block of items is unavailable until a later window.

    Items get Zipf-like base weights ``1 / rank**base_exponent``. The first
    ``n_rising`` items (default a fifth of the catalogue) have zero weight in
    the first window and become the most popular items once they appear,
    with weight ``rising_weight`` (default the top base weight).
    """
    if n_windows < 2:
        raise ConfigError("n_windows: a drift schedule needs at least two windows")
    rng = np.random.default_rng(derive_seed(seed, "step-drift"))
    n_rising = n_items // 5 if n_rising is None else n_rising
    base = 1.0 / np.arange(1, n_items + 1) ** base_exponent
    base = base[rng.permutation(n_items)]
    peak = float(base.max()) if rising_weight is None else float(rising_weight)
    bounds = np.linspace(0, horizon, n_windows + 1).round().astype(int)
    windows = []
    for k in range(n_windows):
        w = base.copy()
        if k == 0:
            w[:n_rising] = 0.0
        else:
            w[:n_rising] = peak * (k / (n_windows - 1))
        windows.append(DriftWindow(int(bounds[k]), int(bounds[k + 1]), tuple(float(x) for x in w)))
    return tuple(windows)
