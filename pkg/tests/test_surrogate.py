import numpy as np
import pytest
import scipy.linalg
import scipy.spatial
from hypothesis import given, strategies as st
from sklearn.base import clone

from fastcharge.optimizer import enumerate_layouts
from fastcharge.surrogate import RBFSurrogate, fit_rbf, merit_scores, merit_select


def dense_reference(X, y, Xq):
    """Textbook cubic RBF system with a full [1, x] tail, solved by LU."""
    n, d = X.shape
    Phi = scipy.spatial.distance.cdist(X, X) ** 3
    P = np.hstack([np.ones((n, 1)), X])
    A = np.block([[Phi, P], [P.T, np.zeros((d + 1, d + 1))]])
    sol = scipy.linalg.lu_solve(scipy.linalg.lu_factor(A), np.concatenate([y, np.zeros(d + 1)]))
    lam, c = sol[:n], sol[n:]
    return scipy.spatial.distance.cdist(Xq, X) ** 3 @ lam + c[0] + Xq @ c[1:]



def test_single_point_is_constant():
    m = fit_rbf([[1.0, 2.0, 0.0]], [42.0])
    assert m.predict([[1.0, 2.0, 0.0]])[0] == pytest.approx(42.0)
    assert m.predict([[5.0, 0.0, 1.0]])[0] == pytest.approx(42.0)


@pytest.mark.parametrize("kernel", ["cubic", "gaussian"])
def test_interpolates_layout_points(kernel):
    pts = enumerate_layouts([2, 2, 2, 1, 1], 4)
    rng = np.random.default_rng(0)
    idx = rng.choice(len(pts), 25, replace=False)
    X = pts[idx].astype(float)
    y = rng.uniform(5000, 9000, len(X))
    m = fit_rbf(X, y, kernel=kernel)
    assert np.max(np.abs(m.predict(X) - y)) < 1e-6


def test_matches_independent_dense_solve():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 3, (30, 6))
    y = np.sum((X - 1.2) ** 2, axis=1) + rng.normal(0, 0.1, 30)
    m = fit_rbf(X, y)
    assert np.max(np.abs(m.predict(X) - y)) < 1e-6
    Xq = rng.uniform(0, 3, (5, 6))
    assert m.predict(Xq) == pytest.approx(dense_reference(X, y, Xq), abs=1e-6)


def test_duplicates():
    m = fit_rbf([[1, 0], [1, 0], [0, 1]], [3.0, 3.0, 4.0])
    assert m.centers_.shape == (2, 2)
    with pytest.raises(ValueError, match="duplicate"):
        fit_rbf([[1, 0], [1, 0]], [3.0, 4.0])


def test_sklearn_contract():
    est = RBFSurrogate(kernel="gaussian", gamma=0.3)
    assert clone(est).get_params() == {"kernel": "gaussian", "gamma": 0.3, "ridge": 1e-8}
    with pytest.raises(Exception):
        est.predict([[0.0]])
    with pytest.raises(ValueError):
        fit_rbf([[0.0], [1.0]], [1.0, 2.0], kernel="thin")


def _fixture(seed, n_eval=8, n_cand=20):
    pts = enumerate_layouts([2, 2, 2, 2], 3)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pts))
    Q = pts[order[:n_eval]].astype(float)
    C = pts[order[n_eval:n_eval + n_cand]].astype(float)
    model = fit_rbf(Q, rng.uniform(0, 10, n_eval))
    return C, Q, model


def test_w_one_takes_min_surrogate():
    C, Q, m = _fixture(2)
    s = m.predict(C)
    assert merit_select(C, m, Q, 1.0) == int(np.argmin(s))


def test_w_zero_takes_farthest():
    C, Q, m = _fixture(3)
    dist = scipy.spatial.distance.cdist(C, Q).min(axis=1)
    best = np.flatnonzero(dist == dist.max())
    assert merit_select(C, m, Q, 0.0) == min(best, key=lambda i: tuple(C[i]))


def test_flat_surrogate_uses_distance():
    C, Q, _ = _fixture(4)
    flat = fit_rbf(Q, np.full(len(Q), 7.0))
    A, _, _ = merit_scores(C, flat, Q, 0.5)
    assert np.all(A == 1.0)
    assert merit_select(C, flat, Q, 0.5) == merit_select(C, flat, Q, 0.0)


def test_w_out_of_range():
    C, Q, m = _fixture(5)
    with pytest.raises(ValueError):
        merit_scores(C, m, Q, 1.5)


@given(st.integers(0, 10**6))
def test_merit_scores_bounded_and_monotone(seed):
    C, Q, m = _fixture(seed)
    picks = []
    for w in np.linspace(0, 1, 11):
        A, B, f = merit_scores(C, m, Q, w)
        assert np.all((A >= 0) & (A <= 1)) and np.all((B >= 0) & (B <= 1))
        i = merit_select(C, m, Q, w)
        picks.append((A[i], B[i]))
    # moving weight towards the surrogate never picks a worse surrogate score
    As = [a for a, _ in picks]
    Bs = [b for _, b in picks]
    assert all(x >= y - 1e-12 for x, y in zip(As, As[1:]))
    assert all(x <= y + 1e-12 for x, y in zip(Bs, Bs[1:]))
