import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from splitkit.models import (
    BPRMF,
    ItemKNNRecommender,
    NMFRecommender,
    PopularityRecommender,
    _sample_negatives,
    bpr_triple_grad,
    bpr_triple_loss,
    interaction_matrix,
    load_model,
    make_model,
    save_model,
)
from splitkit.split import split_leave_one_last_item, split_temporal_global
from splitkit.synth import SynthConfig, generate, step_drift
from splitkit.utils import ConfigError, DataError, DivergenceError

from oracles import ranking_oracle


def csr(rows):
    return sp.csr_matrix(np.asarray(rows, dtype=float))


# --- popularity ------------------------------------------------------------------

def test_popularity_examples():
    X = csr([[1, 1], [1, 0], [1, 1], [1, 0], [1, 0]])  # a:5, b:2
    m = PopularityRecommender().fit(X)
    assert m.recommend(0, 1).tolist() == [0]
    assert m.recommend(0, 1, exclude={0}).tolist() == [1]
    tie = PopularityRecommender().fit(csr([[1, 1], [1, 1], [1, 1]]))
    assert tie.recommend(2, 1).tolist() == [0]
    assert np.array_equal(m.score(0), m.score(4))


def test_empty_training_matrix():
    with pytest.raises(DataError, match="empty"):
        PopularityRecommender().fit(sp.csr_matrix((3, 3)))


# --- itemknn ------------------------------------------------------------------------

def cosine_oracle(X):
    B = (np.asarray(X.todense()) > 0).astype(float)
    n = B.shape[1]
    S = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                denom = np.sqrt(B[:, i].sum() * B[:, j].sum())
                S[i, j] = (B[:, i] @ B[:, j]) / denom if denom else 0.0
    return B, S


def test_itemknn_cosine_extremes():
    X = csr([[1, 1, 0], [1, 1, 0], [0, 0, 1]])
    S = ItemKNNRecommender().fit(X).similarity_.toarray()
    assert S[0, 1] == pytest.approx(1.0)
    assert S[0, 2] == 0.0
    assert np.all(np.diag(S) == 0)


def test_itemknn_matches_brute_force_oracle():
    X = csr([[1, 0, 1, 0, 1, 0],
             [0, 1, 1, 0, 0, 0],
             [1, 1, 0, 1, 0, 0],
             [0, 0, 1, 1, 1, 0],
             [1, 0, 0, 0, 1, 2]])
    m = ItemKNNRecommender(neighborhood_size=50).fit(X)
    B, S = cosine_oracle(X)
    np.testing.assert_allclose(m.similarity_.toarray(), S, atol=1e-12)
    for u in range(5):
        np.testing.assert_allclose(m.score(u), B[u] @ S.T, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_itemknn_truncation_keeps_top_neighbours(seed, k):
    rng = np.random.default_rng(seed)
    X = sp.csr_matrix((rng.random((12, 9)) < 0.35).astype(float))
    if X.nnz == 0:
        return
    _, S = cosine_oracle(X)
    T = ItemKNNRecommender(neighborhood_size=k).fit(X).similarity_.toarray()
    for i in range(S.shape[0]):
        kept = np.flatnonzero(T[i])
        assert len(kept) <= k
        np.testing.assert_allclose(T[i, kept], S[i, kept])
        if len(kept):
            dropped = np.setdiff1d(np.flatnonzero(S[i]), kept)
            assert np.all(S[i, dropped] <= T[i, kept].min() + 1e-12)


# --- BPR --------------------------------------------------------------------------------

def test_bpr_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(100):
        dim = int(rng.integers(2, 16))
        u, vi, vj = (rng.normal(0, 0.5, dim) for _ in range(3))
        reg = float(rng.uniform(0, 0.1))
        analytic = bpr_triple_grad(u[None], vi[None], vj[None], reg)
        for arg, g in enumerate(analytic):
            params = [u.copy(), vi.copy(), vj.copy()]
            numeric = np.empty(dim)
            for d in range(dim):
                up = [p.copy() for p in params]
                dn = [p.copy() for p in params]
                up[arg][d] += h
                dn[arg][d] -= h
                numeric[d] = (bpr_triple_loss(*up, reg) - bpr_triple_loss(*dn, reg)) / (2 * h)
            rel = np.linalg.norm(g[0] - numeric) / max(np.linalg.norm(g[0]) + np.linalg.norm(numeric), 1e-12)
            assert rel < 1e-4


def test_bpr_two_user_toy_is_separated():
    m = BPRMF(embedding_dim=2, learning_rate=0.5, epochs=300, regularization=0.0, seed=1)
    m.fit(csr(np.eye(2)))
    assert m.recommend(0, 1).tolist() == [0]
    assert m.recommend(1, 1).tolist() == [1]


def test_bpr_is_deterministic_per_seed():
    X = sp.csr_matrix((np.random.default_rng(3).random((20, 15)) < 0.3).astype(float))
    a = BPRMF(epochs=5, seed=4).fit(X)
    b = BPRMF(epochs=5, seed=4).fit(X)
    c = BPRMF(epochs=5, seed=5).fit(X)
    assert a.parameter_digest() == b.parameter_digest() != c.parameter_digest()


def test_bpr_loss_decreases_over_first_epoch():
    rng = np.random.default_rng(7)
    X = sp.csr_matrix((rng.random((30, 20)) < 0.25).astype(float))
    B = X.toarray() > 0
    u, i = np.nonzero(B)
    pairs = [(a, b, c) for a, b in zip(u, i) for c in np.flatnonzero(~B[a])]
    uu, ii, jj = map(np.array, zip(*pairs))

    def full_loss(m):
        U, V = m.user_factors_, m.item_factors_
        return float(bpr_triple_loss(U[uu], V[ii], V[jj], 0.0).mean())

    # a vanishing learning rate leaves the seeded initialization in place
    start = BPRMF(epochs=1, learning_rate=1e-300, seed=2).fit(X)
    after = BPRMF(epochs=1, learning_rate=0.5, seed=2).fit(X)
    assert full_loss(after) < full_loss(start)


def test_bpr_negatives_exclude_training_positives():
    rng = np.random.default_rng(0)
    B = rng.random((10, 6)) < 0.5
    B[:, 0] = False
    u, i = np.nonzero(B)
    keys = u * 6 + i
    users = rng.integers(0, 10, 5000)
    j = _sample_negatives(rng, users, keys, 6)
    assert not B[users, j].any()


def test_bpr_early_stopping_keeps_best_epoch():
    rng = np.random.default_rng(1)
    X = sp.csr_matrix((rng.random((40, 30)) < 0.2).astype(float))
    V = sp.csr_matrix((rng.random((40, 30)) < 0.05).astype(float))
    m = BPRMF(epochs=40, patience=2, seed=0).fit(X, validation=V)
    hist = m.validation_history_
    assert m.best_epoch_ == int(np.argmax(hist)) + 1
    if len(hist) < 40:
        assert len(hist) - m.best_epoch_ == 2


def test_bpr_divergence_names_epoch():
    X = csr(np.eye(3))
    with pytest.raises(DivergenceError, match="epoch 1"):
        BPRMF(embedding_dim=2, learning_rate=1e308, regularization=1e10, seed=0).fit(X)


@pytest.mark.parametrize("param", ["embedding_dim", "learning_rate", "epochs",
                                   "negatives_per_positive", "batch_size"])
def test_bpr_rejects_non_positive_hyperparameters(param):
    with pytest.raises(ConfigError, match=param):
        BPRMF(**{param: 0}).fit(csr(np.eye(2)))


# --- NMF ------------------------------------------------------------------------

def test_nmf_rank_one_recovered():
    w = np.array([1.0, 2.0, 0.5, 3.0])
    h = np.array([2.0, 1.0, 4.0])
    X = sp.csr_matrix(np.outer(w, h))
    m = NMFRecommender(n_components=1, epochs=500, seed=0).fit(X)
    assert m.objective_history_[-1] < 1e-6
    assert np.all(m.user_factors_ >= 0) and np.all(m.item_factors_ >= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_nmf_monotone_and_nonnegative(seed, k):
    rng = np.random.default_rng(seed)
    X = sp.csr_matrix(rng.integers(0, 3, (15, 10)) * (rng.random((15, 10)) < 0.4))
    if X.nnz == 0:
        return
    m = NMFRecommender(n_components=k, epochs=30, seed=seed).fit(X)
    obj = np.array(m.objective_history_)
    assert np.all(np.diff(obj) <= 1e-9 * max(obj[0], 1.0))
    assert np.all(m.user_factors_ >= 0) and np.all(m.item_factors_ >= 0)


# --- contract ---------------------------------------------------------------------

@pytest.mark.parametrize("name", ["pop", "itemknn", "mfbpr", "nmf"])
def test_recommend_contract(name):
    rng = np.random.default_rng(2)
    X = sp.csr_matrix((rng.random((25, 18)) < 0.3).astype(float))
    m = make_model(name, **({"epochs": 3} if name in ("mfbpr", "nmf") else {})).fit(X)
    for user in range(25):
        exclude = set(rng.choice(18, 5, replace=False).tolist())
        rec = m.recommend(user, 8, exclude=exclude).tolist()
        assert len(rec) == len(set(rec)) == 8
        assert not exclude & set(rec)
        cands = [i for i in range(18) if i not in exclude]
        assert rec == ranking_oracle(m.score(user), cands)[:8]
        assert np.array_equal(m.score(user), m.score(user))


@pytest.mark.parametrize("name", ["pop", "itemknn", "mfbpr", "nmf"])
def test_checkpoint_round_trip(tmp_path, name):
    rng = np.random.default_rng(5)
    X = sp.csr_matrix((rng.random((12, 10)) < 0.4).astype(float))
    m = make_model(name, **({"epochs": 3} if name in ("mfbpr", "nmf") else {})).fit(X)
    save_model(m, tmp_path / "a.ckpt")
    save_model(m, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    back = load_model(tmp_path / "a.ckpt")
    assert back.get_params() == m.get_params()
    assert back.parameter_digest() == m.parameter_digest()
    np.testing.assert_array_equal(back.score_users(range(12)), m.score_users(range(12)))


def test_unknown_model():
    with pytest.raises(ConfigError, match="valid models"):
        make_model("neumf")


def test_popularity_sees_future_items_only_under_per_user_splits():
    cfg = SynthConfig(n_users=150, n_items=50, baskets_per_user=(4, 8), items_per_basket=(1, 4),
                      horizon=1000, drift=step_drift(50, 1000, 2, seed=0), user_activity_spread=0.6)
    d = generate(cfg)
    rising = {d.item_index[f"i{k:05d}"] for k in range(10) if f"i{k:05d}" in d.item_index}
    first_seen = {i: int(d.timestamp[d.item == i].min()) for i in rising}

    tg = split_temporal_global(d, 0.5, 0.2, intersection=False)
    pop = PopularityRecommender().fit(interaction_matrix(d, tg.train))
    late = [i for i, t in first_seen.items() if t > tg.manifest.boundary_timestamp]
    assert late and all(pop.item_counts_[i] == 0 for i in late)

    loo = split_leave_one_last_item(d)
    pop = PopularityRecommender().fit(interaction_matrix(d, loo.train))
    assert any(pop.item_counts_[i] > 0 for i in late)
