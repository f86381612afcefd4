"""Radial basis function interpolant with a linear tail, and the merit score
used to choose the next layout to simulate."""
from __future__ import annotations

import logging

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

LOG = logging.getLogger(__name__)

KERNELS = ("cubic", "gaussian")
RIDGE = 1e-8


def _phi(r: np.ndarray, kernel: str, gamma: float) -> np.ndarray:
    if kernel == "cubic":
        return r**3
    if kernel == "gaussian":
        return np.exp(-gamma * r**2)
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


class RBFSurrogate(RegressorMixin, BaseEstimator):
    """Interpolant ``s(u) = sum_i lambda_i phi(||u - u_i||) + a + b.u``.

    The side conditions ``P^T lambda = 0`` are imposed on a basis of the
    affine hull of the centers. Layouts with a fixed total lie on a
    hyperplane, so the plain ``[1, u]`` tail would make the system
    singular; restricting the tail to the hull avoids that while keeping
    exact interpolation.

    :param kernel: ``"cubic"`` (``r**3``) or ``"gaussian"`` (``exp(-gamma r**2)``)
    :param gamma: Gaussian shape parameter
    :param ridge: diagonal perturbation used only if the system is singular

    ``residual_`` holds the largest interpolation error at the centers. The
    Gaussian kernel becomes numerically singular when centers are packed
    closely relative to ``1/sqrt(gamma)``; a warning is logged then.
    """

    def __init__(self, kernel: str = "cubic", gamma: float = 0.5, ridge: float = RIDGE):
        self.kernel = kernel
        self.gamma = gamma
        self.ridge = ridge

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} rows but y has {len(y)} values")
        if not np.all(np.isfinite(y)):
            raise ValueError("y must be finite")
        X, y = self._dedupe(X, y)
        n, d = X.shape
        shift = X.mean(axis=0)
        Xc = X - shift
        _, sv, vt = np.linalg.svd(Xc, full_matrices=False)
        tol = max(n, d) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
        basis = vt[sv > max(tol, 1e-12)].T  # d x r
        P = np.hstack([np.ones((n, 1)), Xc @ basis])
        m = P.shape[1]
        Phi = _phi(cdist(X, X), self.kernel, self.gamma)
        A = np.zeros((n + m, n + m))
        A[:n, :n] = Phi
        A[:n, n:] = P
        A[n:, :n] = P.T
        rhs = np.concatenate([y, np.zeros(m)])
        self.regularized_ = False
        sol = self._solve(A, rhs, n)
        if sol is None:
            LOG.warning("singular RBF system with %d points; adding ridge %.1e", n, self.ridge)
            A[:n, :n] += self.ridge * np.eye(n)
            sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
            self.regularized_ = True
        self.centers_ = X
        self.lambda_ = sol[:n]
        coef = sol[n:]
        self.b_ = basis @ coef[1:] if basis.size else np.zeros(d)
        self.a_ = float(coef[0] - self.b_ @ shift)
        self.n_features_in_ = d
        self.residual_ = float(np.max(np.abs(self.predict(X) - y)))
        if self.residual_ > 1e-6 * max(1.0, float(np.max(np.abs(y)))):
            LOG.warning("RBF fit is ill-conditioned: max residual %.3g at the centers", self.residual_)
        return self

    @staticmethod
    def _solve(A, rhs, n):
        """Direct LU solve; ``None`` when the system is exactly singular."""
        try:
            sol = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            return None
        return sol if np.all(np.isfinite(sol)) else None

    @staticmethod
    def _dedupe(X, y):
        _, first, inv = np.unique(X, axis=0, return_index=True, return_inverse=True)
        if len(first) == len(X):
            return X, y
        inv = inv.ravel()
        for k, i in enumerate(first):
            if np.ptp(y[inv == k]) > 0:
                raise ValueError(f"duplicate point {X[i].tolist()} with differing values")
        keep = np.sort(first)
        return X[keep], y[keep]

    def predict(self, X):
        check_is_fitted(self, "lambda_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        Phi = _phi(cdist(X, self.centers_), self.kernel, self.gamma)
        return Phi @ self.lambda_ + self.a_ + X @ self.b_


def fit_rbf(points, values, kernel: str = "cubic", gamma: float = 0.5) -> RBFSurrogate:
    """Fit an :class:`RBFSurrogate` to evaluated layouts."""
    return RBFSurrogate(kernel=kernel, gamma=gamma).fit(points, values)


def _flat(lo: float, hi: float) -> bool:
    """Range indistinguishable from rounding noise."""
    return hi - lo <= 1e-10 * max(1.0, abs(lo), abs(hi))


def merit_scores(candidates, model, evaluated, w: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(A, B, merit)`` for each candidate.

    ``A`` rescales the surrogate value to [0, 1] and ``B`` rescales the
    negated distance to the nearest evaluated point to [0, 1]; either is
    1 everywhere when its range over the candidates is degenerate.
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    C = check_array(candidates, dtype=float)
    Q = check_array(evaluated, dtype=float)
    s = model.predict(C)
    lo, hi = s.min(), s.max()
    A = (s - lo) / (hi - lo) if not _flat(lo, hi) else np.ones(len(C))
    dist = cdist(C, Q).min(axis=1)
    dlo, dhi = dist.min(), dist.max()
    B = (dhi - dist) / (dhi - dlo) if not _flat(dlo, dhi) else np.ones(len(C))
    return A, B, w * A + (1.0 - w) * B


def merit_select(candidates, model, evaluated, w: float) -> int:
    """Index of the candidate with the least merit; ties go to the
    lexicographically smallest layout."""
    C = np.asarray(candidates)
    _, _, f = merit_scores(C, model, evaluated, w)
    best = f.min()
    tied = np.flatnonzero(f <= best + 1e-12 * max(1.0, abs(best)))
    return int(min(tied, key=lambda i: tuple(C[i].tolist())))
