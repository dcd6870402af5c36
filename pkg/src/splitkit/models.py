"""Classical implicit-feedback recommenders with a shared scoring contract.

All models are fitted on a user-item interaction matrix (CSR, users as
rows) and expose ``score(user, items=None)`` and
``recommend(user, k, exclude=None)``. Recommendation ties are always broken
by ascending item index.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._version import __version__
from .metrics import recall_at_k, top_k
from .utils import (
    FORMAT_VERSION,
    ConfigError,
    DataError,
    DivergenceError,
    check_interaction_matrix,
    check_positive,
    derive_seed,
)


def interaction_matrix(dataset, indices, shape=None):
    """CSR matrix counting interactions per (user, item) over ``indices``."""
    indices = np.asarray(indices, dtype=np.int64)
    shape = shape or (dataset.n_users, dataset.n_items)
    data = np.ones(len(indices), dtype=np.float64)
    X = sp.csr_matrix((data, (dataset.user[indices], dataset.item[indices])), shape=shape)
    X.sum_duplicates()
    return X


class BaseRecommender(BaseEstimator):
    """Fit/score/recommend contract shared by every model."""

    #: short name used by the CLI and checkpoints
    name = None

    def fit(self, X, y=None, validation=None):
        raise NotImplementedError

    def _check_params(self):
        return ()

    def _validate_input(self, X, validation):
        X = check_interaction_matrix(X)
        if X.nnz == 0:
            raise DataError(f"{self.name}: training matrix is empty")
        if validation is not None:
            validation = check_interaction_matrix(validation)
            if validation.shape != X.shape:
                raise DataError("validation matrix shape differs from training matrix")
        self.n_users_, self.n_items_ = X.shape
        return X, validation

    def _check_user(self, user):
        check_is_fitted(self, "n_items_")
        if not 0 <= int(user) < self.n_users_:
            raise DataError(f"unknown user index {user}")

    def score(self, user, items=None):
        """Real-valued scores of ``items`` (default: every item) for ``user``."""
        self._check_user(user)
        scores = self._score_all(int(user))
        return scores if items is None else scores[np.asarray(items, dtype=np.int64)]

    def score_users(self, users):
        """Score matrix of shape ``(len(users), n_items)``."""
        return np.vstack([self.score(u) for u in users]) if len(users) else np.empty((0, self.n_items_))

    def recommend(self, user, k=10, exclude=None, items=None):
        """The ``k`` highest-scoring items not in ``exclude``."""
        scores = self.score(user)
        candidates = np.arange(self.n_items_) if items is None else np.unique(np.asarray(items, dtype=np.int64))
        if exclude is not None and len(exclude):
            candidates = np.setdiff1d(candidates, np.asarray(list(exclude), dtype=np.int64))
        return top_k(scores, k, candidates)

    # checkpoint state: arrays needed to score after fit
    _state_attrs = ()

    def parameter_digest(self):
        check_is_fitted(self, "n_items_")
        h = hashlib.sha256()
        for attr in self._state_attrs:
            value = getattr(self, attr)
            h.update(attr.encode())
            h.update(_state_array(value).tobytes())
        return h.hexdigest()


def _state_array(value):
    if sp.issparse(value):
        value = value.tocsr()
        return np.concatenate([np.asarray(value.shape, dtype=np.float64),
                               value.indptr.astype(np.float64),
                               value.indices.astype(np.float64), value.data])
    return np.ascontiguousarray(value, dtype=np.float64)


class PopularityRecommender(BaseRecommender):
    """Scores every item by its number of training interactions."""

    name = "pop"
    _state_attrs = ("item_counts_",)

    def fit(self, X, y=None, validation=None):
        X, _ = self._validate_input(X, validation)
        self.item_counts_ = np.asarray(X.sum(axis=0)).ravel()
        return self

    def _score_all(self, user):
        return self.item_counts_.astype(np.float64, copy=True)

    def score_users(self, users):
        check_is_fitted(self, "item_counts_")
        return np.tile(self.item_counts_, (len(users), 1))


class ItemKNNRecommender(BaseRecommender):
    """Item-based nearest neighbours over binary co-occurrence.

    Similarity is the cosine between binary user-incidence columns, self
    similarity excluded, and each item keeps only its ``neighborhood_size``
    most similar neighbours. A user's score for item ``i`` is the sum of
    retained similarities between ``i`` and the items in the user's history.
    """

    name = "itemknn"
    _state_attrs = ("similarity_", "history_")

    def __init__(self, neighborhood_size=50):
        self.neighborhood_size = neighborhood_size

    def _check_params(self):
        return (check_positive("neighborhood_size", self.neighborhood_size, integer=True),)

    def fit(self, X, y=None, validation=None):
        X, _ = self._validate_input(X, validation)
        k, = self._check_params()
        B = (X > 0).astype(np.float64).tocsc()
        co = (B.T @ B).tocsr()
        norms = np.sqrt(co.diagonal())
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        sim = sp.diags(inv) @ co @ sp.diags(inv)
        sim = sim.tolil()
        sim.setdiag(0)
        sim = sim.tocsr()
        sim.eliminate_zeros()
        self.similarity_ = _truncate_rows(sim, k)
        self.history_ = B.tocsr()
        return self

    def _score_all(self, user):
        h = self.history_[user]
        # score(i) = sum_j sim[i, j] * h[j]
        return np.asarray((self.similarity_ @ h.T).todense()).ravel()

    def score_users(self, users):
        check_is_fitted(self, "similarity_")
        H = self.history_[np.asarray(users, dtype=np.int64)]
        return np.asarray((H @ self.similarity_.T).todense())


def _truncate_rows(S, k):
    """Keep the ``k`` largest entries per row (ties by ascending column)."""
    S = S.tocsr()
    S.sort_indices()
    keep = np.zeros(S.nnz, dtype=bool)
    for r in range(S.shape[0]):
        lo, hi = S.indptr[r], S.indptr[r + 1]
        if hi - lo <= k:
            keep[lo:hi] = True
            continue
        vals = S.data[lo:hi]
        # columns are sorted, so a stable sort on -value breaks ties by column
        keep[lo + np.argsort(-vals, kind="stable")[:k]] = True
    T = S.copy()
    T.data = np.where(keep, T.data, 0.0)
    T.eliminate_zeros()
    return T


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bpr_triple_loss(u, vi, vj, reg):
    """Regularized negative log-likelihood of preferring ``i`` over ``j``.

    ``-log sigmoid(u . (vi - vj)) + reg / 2 * (|u|^2 + |vi|^2 + |vj|^2)``,
    computed row-wise for stacked triples.
    """
    x = np.sum(u * (vi - vj), axis=-1)
    nll = np.logaddexp(0.0, -x)
    return nll + 0.5 * reg * (np.sum(u * u, -1) + np.sum(vi * vi, -1) + np.sum(vj * vj, -1))


def bpr_triple_grad(u, vi, vj, reg):
    """Analytic gradients of :func:`bpr_triple_loss` w.r.t. ``(u, vi, vj)``."""
    x = np.sum(u * (vi - vj), axis=-1, keepdims=True)
    g = _sigmoid(-x)
    return (-g * (vi - vj) + reg * u,
            -g * u + reg * vi,
            g * u + reg * vj)


class BPRMF(BaseRecommender):
    """Matrix factorization trained with the BPR pairwise ranking loss.

    Each epoch draws, for every positive (user, item) pair, a negative item
    uniformly from the items the user never interacted with in training, and
    applies minibatch SGD on the regularized pairwise loss. When a
    validation matrix is supplied, Recall@``eval_k`` is measured after every
    epoch; training stops after ``patience`` epochs without improvement and
    the best parameters are kept.

    Parameters
    ----------
    embedding_dim : int
    learning_rate : float
    epochs : int
        Maximum number of epochs.
    negatives_per_positive : int
    regularization : float
    batch_size : int
    patience : int
    eval_k : int
    seed : int
    """

    name = "mfbpr"
    _state_attrs = ("user_factors_", "item_factors_")

    def __init__(self, embedding_dim=32, learning_rate=0.05, epochs=50,
                 negatives_per_positive=1, regularization=0.01, batch_size=64,
                 patience=5, eval_k=10, seed=0):
        self.embedding_dim = embedding_dim
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.negatives_per_positive = negatives_per_positive
        self.regularization = regularization
        self.batch_size = batch_size
        self.patience = patience
        self.eval_k = eval_k
        self.seed = seed

    def _check_params(self):
        dim = check_positive("embedding_dim", self.embedding_dim, integer=True)
        lr = check_positive("learning_rate", self.learning_rate)
        epochs = check_positive("epochs", self.epochs, integer=True)
        neg = check_positive("negatives_per_positive", self.negatives_per_positive, integer=True)
        bs = check_positive("batch_size", self.batch_size, integer=True)
        check_positive("patience", self.patience, integer=True)
        check_positive("eval_k", self.eval_k, integer=True)
        if self.regularization < 0:
            raise ConfigError(f"regularization: must be non-negative, got {self.regularization!r}")
        return dim, lr, epochs, neg, bs

    def fit(self, X, y=None, validation=None):
        X, validation = self._validate_input(X, validation)
        dim, lr, epochs, neg, bs = self._check_params()
        reg = float(self.regularization)
        rng = np.random.default_rng(derive_seed(self.seed, "mfbpr"))
        n_users, n_items = X.shape
        scale = 1.0 / np.sqrt(dim)
        U = rng.uniform(-0.01, 0.01, (n_users, dim)) * scale
        V = rng.uniform(-0.01, 0.01, (n_items, dim)) * scale

        B = (X > 0).tocsr()
        B.sort_indices()
        pos_u = np.repeat(np.arange(n_users), np.diff(B.indptr))
        pos_i = B.indices.astype(np.int64)
        keys = pos_u * n_items + pos_i  # sorted, since rows and columns are
        full = np.diff(B.indptr) >= n_items
        sampleable = ~full[pos_u]
        pos_u, pos_i = pos_u[sampleable], pos_i[sampleable]
        if len(pos_u) == 0:
            raise DataError("mfbpr: no user has an unobserved item to sample as negative")

        val_users, val_items = _validation_targets(validation)
        self.loss_history_ = []
        self.validation_history_ = []
        best = (-np.inf, U.copy(), V.copy(), 0)
        stale = 0
        # overflow surfaces as non-finite factors and raises DivergenceError below
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(1, epochs + 1):
                order = np.tile(rng.permutation(len(pos_u)), neg)
                u = pos_u[order]
                i = pos_i[order]
                j = _sample_negatives(rng, u, keys, n_items)
                total = 0.0
                for lo in range(0, len(u), bs):
                    bu, bi, bj = u[lo:lo + bs], i[lo:lo + bs], j[lo:lo + bs]
                    Uu, Vi, Vj = U[bu], V[bi], V[bj]
                    total += float(bpr_triple_loss(Uu, Vi, Vj, reg).sum())
                    gu, gi, gj = bpr_triple_grad(Uu, Vi, Vj, reg)
                    np.add.at(U, bu, -lr * gu)
                    np.add.at(V, bi, -lr * gi)
                    np.add.at(V, bj, -lr * gj)
                if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
                    raise DivergenceError(f"mfbpr: parameters became non-finite in epoch {epoch}")
                self.loss_history_.append(total / len(u))
                if val_users is None:
                    best = (None, U, V, epoch)
                    continue
                recall = _mean_recall(U, V, B, val_users, val_items, self.eval_k)
                self.validation_history_.append(recall)
                if recall > best[0]:
                    best = (recall, U.copy(), V.copy(), epoch)
                    stale = 0
                else:
                    stale += 1
                    if stale >= self.patience:
                        break
        _, self.user_factors_, self.item_factors_, self.best_epoch_ = best
        return self

    def _score_all(self, user):
        return self.item_factors_ @ self.user_factors_[user]

    def score_users(self, users):
        check_is_fitted(self, "user_factors_")
        return self.user_factors_[np.asarray(users, dtype=np.int64)] @ self.item_factors_.T


def _sample_negatives(rng, users, positive_keys, n_items):
    """Uniform negatives excluding each user's training positives."""
    j = rng.integers(0, n_items, size=len(users))
    bad = np.flatnonzero(_is_positive(users, j, positive_keys, n_items))
    while len(bad):
        j[bad] = rng.integers(0, n_items, size=len(bad))
        bad = bad[_is_positive(users[bad], j[bad], positive_keys, n_items)]
    return j


def _is_positive(users, items, keys, n_items):
    q = users * n_items + items
    pos = np.searchsorted(keys, q)
    pos[pos == len(keys)] = 0
    return keys[pos] == q


def _validation_targets(validation):
    if validation is None or validation.nnz == 0:
        return None, None
    validation = validation.tocsr()
    users = np.flatnonzero(np.diff(validation.indptr))
    items = [validation.indices[validation.indptr[u]:validation.indptr[u + 1]] for u in users]
    return users, items


def _mean_recall(U, V, train, users, targets, k):
    scores = U[users] @ V.T
    total = 0.0
    for row, u, rel in zip(scores, users, targets):
        seen = train.indices[train.indptr[u]:train.indptr[u + 1]]
        row[seen] = -np.inf
        total += recall_at_k(top_k(row, k), rel, k)
    return total / len(users)


class NMFRecommender(BaseRecommender):
    """Non-negative factorization ``X ~ W H`` by multiplicative updates.

    Minimizes the squared Frobenius reconstruction error with the classical
    alternating multiplicative rules, recording the objective after every
    epoch in ``objective_history_``. Scores are rows of ``W H``.
    """

    name = "nmf"
    _state_attrs = ("user_factors_", "item_factors_")

    def __init__(self, n_components=16, epochs=200, seed=0, eps=1e-12):
        self.n_components = n_components
        self.epochs = epochs
        self.seed = seed
        self.eps = eps

    def _check_params(self):
        return (check_positive("n_components", self.n_components, integer=True),
                check_positive("epochs", self.epochs, integer=True))

    def fit(self, X, y=None, validation=None):
        X, _ = self._validate_input(X, validation)
        k, epochs = self._check_params()
        rng = np.random.default_rng(derive_seed(self.seed, "nmf"))
        n_users, n_items = X.shape
        avg = np.sqrt(X.sum() / (n_users * n_items) / k)
        W = avg * rng.uniform(0.1, 1.0, (n_users, k))
        H = avg * rng.uniform(0.1, 1.0, (k, n_items))
        Xt = X.T.tocsr()
        x_norm = float(X.multiply(X).sum())
        self.objective_history_ = [_nmf_objective(X, W, H, x_norm)]
        for epoch in range(1, epochs + 1):
            H *= (Xt @ W).T / (W.T @ W @ H + self.eps)
            W *= (X @ H.T) / (W @ (H @ H.T) + self.eps)
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(H))):
                raise DivergenceError(f"nmf: factors became non-finite in epoch {epoch}")
            self.objective_history_.append(_nmf_objective(X, W, H, x_norm))
        self.user_factors_ = W
        self.item_factors_ = H.T.copy()
        return self

    def _score_all(self, user):
        return self.item_factors_ @ self.user_factors_[user]

    def score_users(self, users):
        check_is_fitted(self, "user_factors_")
        return self.user_factors_[np.asarray(users, dtype=np.int64)] @ self.item_factors_.T


def _nmf_objective(X, W, H, x_norm):
    """``||X - W H||_F^2`` without densifying ``X``."""
    coo = X.tocoo()
    cross = float(np.dot(coo.data, np.einsum("ij,ji->i", W[coo.row], H[:, coo.col])))
    gram = float(np.sum((W.T @ W) * (H @ H.T)))
    return max(x_norm - 2.0 * cross + gram, 0.0)


MODELS = {cls.name: cls for cls in (PopularityRecommender, ItemKNNRecommender, BPRMF, NMFRecommender)}


def make_model(name, **params):
    try:
        cls = MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; valid models: {', '.join(MODELS)}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None


# --- checkpoints -----------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _fitted_state(model):
    state = {}
    for attr in model._state_attrs + ("n_users_", "n_items_"):
        value = getattr(model, attr)
        if sp.issparse(value):
            value = value.tocsr()
            state[f"{attr}.data"] = value.data
            state[f"{attr}.indices"] = value.indices
            state[f"{attr}.indptr"] = value.indptr
            state[f"{attr}.shape"] = np.asarray(value.shape)
        else:
            state[attr] = np.asarray(value)
    return state


def save_model(model, path):
    """Write a fitted model as a versioned, byte-deterministic zip checkpoint."""
    check_is_fitted(model, "n_items_")
    meta = {
        "format_version": FORMAT_VERSION,
        "toolkit_version": __version__,
        "model": model.name,
        "params": model.get_params(),
        "parameter_digest": model.parameter_digest(),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", _ZIP_DATE)
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=2))
        for key, value in sorted(_fitted_state(model).items()):
            buf = io.BytesIO()
            np.save(buf, value, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{key}.npy", _ZIP_DATE), buf.getvalue())
    return Path(path)


def load_model(path):
    """Load a checkpoint written by :func:`save_model`."""
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint format {meta.get('format_version')!r}")
        arrays = {n[:-4]: np.load(io.BytesIO(zf.read(n)), allow_pickle=False)
                  for n in zf.namelist() if n.endswith(".npy")}
    model = make_model(meta["model"], **meta["params"])
    for attr in model._state_attrs + ("n_users_", "n_items_"):
        if attr in arrays:
            value = arrays[attr]
            setattr(model, attr, value.item() if value.ndim == 0 else value)
        else:
            shape = tuple(arrays[f"{attr}.shape"])
            setattr(model, attr, sp.csr_matrix(
                (arrays[f"{attr}.data"], arrays[f"{attr}.indices"], arrays[f"{attr}.indptr"]),
                shape=shape))
    if model.parameter_digest() != meta["parameter_digest"]:
        raise DataError(f"{path}: checkpoint parameters do not match their digest")
    return model
