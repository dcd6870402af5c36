"""Input validation, seeding and hashing helpers shared across the toolkit."""

from __future__ import annotations

import hashlib
import json
import math
import numbers

import numpy as np
import scipy.sparse as sp
from sklearn.utils import check_array

FORMAT_VERSION = 1

STRATEGY_TAGS = (
    "leave-one-last-item",
    "leave-one-last-basket",
    "temporal-user",
    "temporal-global",
    "random-leave-one",
    "random-ratio",
    "user-split",
)
STRATEGY_ALIASES = {
    "l1i": "leave-one-last-item",
    "l1b": "leave-one-last-basket",
    "tu": "temporal-user",
    "tg": "temporal-global",
    "tem": "temporal-global",
    "rl1": "random-leave-one",
    "rr": "random-ratio",
    "us": "user-split",
}


class SplitkitError(Exception):
    """Base class for toolkit errors."""


class DataError(SplitkitError, ValueError):
    """The input data violates a structural requirement."""


class EmptyResultError(DataError):
    """A filter or split left no usable interactions."""


class EmptySplitError(EmptyResultError):
    """A splitter could not populate its mandatory partitions."""


class ConfigError(SplitkitError, ValueError):
    """One or more configuration values are invalid.

    ``errors`` holds every problem found, each prefixed by its location.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class DivergenceError(SplitkitError, FloatingPointError):
    """Model parameters became non-finite during fitting."""


def normalize_strategy(tag):
    """Map a strategy tag or short alias to its canonical tag."""
    key = str(tag).strip().lower().replace("_", "-")
    key = STRATEGY_ALIASES.get(key, key)
    if key not in STRATEGY_TAGS:
        raise ConfigError(
            f"unknown strategy {tag!r}; valid tags: {', '.join(STRATEGY_TAGS)} "
            f"(aliases: {', '.join(sorted(STRATEGY_ALIASES))})")
    return key


def check_ratio(name, value, *, low_inclusive=False):
    """Validate that ``value`` lies in (0, 1), or [0, 1) when ``low_inclusive``."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    value = float(value)
    lo_ok = value >= 0.0 if low_inclusive else value > 0.0
    if not (lo_ok and value < 1.0 and math.isfinite(value)):
        interval = "[0, 1)" if low_inclusive else "(0, 1)"
        raise ConfigError(f"{name}: must lie in {interval}, got {value!r}")
    return value


def check_positive(name, value, *, integer=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    if not value > 0 or not math.isfinite(value):
        raise ConfigError(f"{name}: must be strictly positive, got {value!r}")
    return int(value) if integer else float(value)


def check_count(name, value):
    """Validate a non-negative integer threshold."""
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 0:
        raise ConfigError(f"{name}: expected a non-negative integer, got {value!r}")
    return int(value)


def ceil_fraction(ratio, n):
    """``ceil(ratio * n)`` without float artefacts such as 0.1 * 30 -> 3.0000000000000004."""
    return int(math.ceil(round(ratio * n, 9)))


def check_interaction_matrix(X):
    """Return ``X`` as a CSR float matrix with non-negative entries."""
    X = check_array(X, accept_sparse="csr", dtype=np.float64, ensure_min_samples=1)
    X = sp.csr_matrix(X)
    if X.nnz and X.data.min() < 0:
        raise DataError("interaction matrix must be non-negative")
    return X


def derive_seed(seed, *keys):
    """Derive an independent 63-bit seed from a parent seed and stage keys.

    The derivation hashes ``"<seed>/<key1>/<key2>..."`` with SHA-256 and keeps
    the top 63 bits, so adding a stage never perturbs the seeds of others.
    """
    text = "/".join([str(int(seed))] + [str(k) for k in keys])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def make_rng(seed, *keys):
    return np.random.default_rng(derive_seed(seed, *keys))


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj):
    """Serialize ``obj`` deterministically (sorted keys, fixed separators)."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def params_digest(params):
    """Short stable digest of a hyperparameter mapping."""
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]
