"""User/item frequency filters applied before splitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .utils import ConfigError, EmptyResultError, check_count, normalize_strategy

_ORDERS = {
    "items-first": ("items", "users"),
    "users-first": ("users", "items"),
}


@dataclass(frozen=True)
class FilterSpec:
    """Frequency thresholds; an entity is removed when its count is strictly below.

    Users are removed when they have fewer than ``min_user_items``
    interactions *or* fewer than ``min_user_baskets`` baskets. Passes run
    once in ``order`` unless ``iterate_to_fixpoint`` is set.
    """

    min_item_purchases: int = 0
    min_user_items: int = 0
    min_user_baskets: int = 0
    order: str = "items-first"
    iterate_to_fixpoint: bool = False

    def __post_init__(self):
        for name in ("min_item_purchases", "min_user_items", "min_user_baskets"):
            check_count(name, getattr(self, name))
        if self.order not in _ORDERS:
            raise ConfigError(f"order: expected one of {sorted(_ORDERS)}, got {self.order!r}")

    @property
    def is_identity(self):
        return not (self.min_item_purchases or self.min_user_items or self.min_user_baskets)

    def to_dict(self):
        return {
            "min_item_purchases": self.min_item_purchases,
            "min_user_items": self.min_user_items,
            "min_user_baskets": self.min_user_baskets,
            "order": self.order,
            "iterate_to_fixpoint": self.iterate_to_fixpoint,
        }


def builtin_spec(strategy):
    """Default filter for a strategy tag.

    Leave-one-last strategies drop items bought fewer than 10 times. The
    temporal-global split drops users with fewer than 30 interactions or 10
    baskets, then items bought fewer than 20 times. Strategies without a
    published filter reuse the leave-one-last one.
    """
    tag = normalize_strategy(strategy)
    if tag == "temporal-global":
        return FilterSpec(min_user_items=30, min_user_baskets=10, min_item_purchases=20,
                          order="users-first")
    return FilterSpec(min_item_purchases=10, order="items-first")


def _items_pass(dataset, mask, spec):
    if not spec.min_item_purchases:
        return mask
    counts = np.bincount(dataset.item[mask], minlength=dataset.n_items)
    return mask & (counts[dataset.item] >= spec.min_item_purchases)


def _users_pass(dataset, mask, spec):
    if not (spec.min_user_items or spec.min_user_baskets):
        return mask
    keep = mask.copy()
    if spec.min_user_items:
        counts = np.bincount(dataset.user[mask], minlength=dataset.n_users)
        keep &= counts[dataset.user] >= spec.min_user_items
    if spec.min_user_baskets:
        # each basket belongs to exactly one user
        live = np.zeros(dataset.n_baskets, dtype=bool)
        live[dataset.basket[mask]] = True
        owner = np.zeros(dataset.n_baskets, dtype=np.int64)
        owner[dataset.basket] = dataset.user
        per_user = np.bincount(owner[live], minlength=dataset.n_users)
        keep &= per_user[dataset.user] >= spec.min_user_baskets
    return keep


def filter_mask(dataset, spec):
    """Boolean mask of interactions surviving ``spec``."""
    passes = [_items_pass if p == "items" else _users_pass for p in _ORDERS[spec.order]]
    mask = np.ones(len(dataset), dtype=bool)
    while True:
        before = int(mask.sum())
        for step in passes:
            mask = step(dataset, mask, spec)
        if not spec.iterate_to_fixpoint or int(mask.sum()) == before:
            return mask


def apply_filter(dataset, spec):
    """Return a new, compacted Dataset with only the surviving interactions.

    An all-zero spec returns ``dataset`` unchanged.

    Raises
    ------
    EmptyResultError
        If no interaction survives.
    """
    if spec.is_identity:
        return dataset
    mask = filter_mask(dataset, spec)
    if not mask.any():
        raise EmptyResultError(f"filter {spec.to_dict()} removed every interaction")
    return dataset.subset(mask)


class FrequencyFilter(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`apply_filter`.

    >>> FrequencyFilter(min_item_purchases=10).fit_transform(dataset)  # doctest: +SKIP
    """

    def __init__(self, min_item_purchases=0, min_user_items=0, min_user_baskets=0,
                 order="items-first", iterate_to_fixpoint=False):
        self.min_item_purchases = min_item_purchases
        self.min_user_items = min_user_items
        self.min_user_baskets = min_user_baskets
        self.order = order
        self.iterate_to_fixpoint = iterate_to_fixpoint

    @classmethod
    def for_strategy(cls, strategy):
        return cls(**builtin_spec(strategy).to_dict())

    def fit(self, X, y=None):
        self.spec_ = FilterSpec(**self.get_params())
        return self

    def transform(self, X):
        spec = getattr(self, "spec_", None) or FilterSpec(**self.get_params())
        return apply_filter(X, spec)
