"""Fast-charger placement: surrogate-assisted search, k-means baseline and
exhaustive enumeration for small instances.

A layout is an integer vector ``u`` with ``sum(u) == U`` and
``0 <= u[k] <= caps[k]``.
"""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator
from sklearn.cluster import KMeans
from sklearn.utils.validation import check_array

from .model import ChargerLayout, ScenarioError, Site
from .surrogate import RBFSurrogate, merit_select

LOG = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10**6
WEIGHT_CYCLE = (0.3, 0.5, 0.8, 0.95)


def _caps(sites_or_caps) -> np.ndarray:
    items = list(sites_or_caps)
    if items and isinstance(items[0], Site):
        return np.array([s.fast_charger_cap for s in items], dtype=int)
    caps = np.asarray(items, dtype=int).ravel()
    if np.any(caps < 0):
        raise ValueError("caps must be non-negative")
    return caps


def count_layouts(caps: Sequence[int], U: int) -> int:
    """Number of feasible layouts (exact, arbitrary precision)."""
    return _count_table(_caps(caps), U)[0][U]


def _count_table(caps: np.ndarray, U: int) -> list[list[int]]:
    """``table[k][r]``: ways to place ``r`` chargers on sites ``k..K-1``."""
    K = len(caps)
    table = [[0] * (U + 1) for _ in range(K + 1)]
    table[K][0] = 1
    for k in range(K - 1, -1, -1):
        nxt = table[k + 1]
        for r in range(U + 1):
            table[k][r] = sum(nxt[r - x] for x in range(min(int(caps[k]), r) + 1))
    return table


def enumerate_layouts(sites_or_caps, U: int, limit: int = ENUMERATION_LIMIT) -> np.ndarray:
    """All feasible layouts in lexicographic order, one per row.

    :raises ValueError: if there are more than ``limit`` layouts
    """
    caps = _caps(sites_or_caps)
    if U < 0:
        raise ValueError("U must be >= 0")
    table = _count_table(caps, U)
    n = table[0][U]
    if n > limit:
        raise ValueError(f"{n} feasible layouts exceed the enumeration limit of {limit}")
    K = len(caps)
    out = np.zeros((n, K), dtype=int)
    row = [0]
    cur = [0] * K

    def rec(k: int, r: int):
        if k == K:
            if r == 0:
                out[row[0]] = cur
                row[0] += 1
            return
        for x in range(min(int(caps[k]), r) + 1):
            if table[k + 1][r - x]:
                cur[k] = x
                rec(k + 1, r - x)
        cur[k] = 0

    rec(0, U)
    return out


def _randbelow(rng: np.random.Generator, n: int) -> int:
    """Integer in ``[0, n)`` for arbitrarily large ``n``; counts of layouts
    quickly exceed 64 bits. The modulo bias is below ``2**-64``."""
    if n < 2**62:
        return int(rng.integers(0, n))
    chunks = (n.bit_length() + 64) // 62 + 1
    big = 0
    for _ in range(chunks):
        big = (big << 62) | int(rng.integers(0, 2**62))
    return big % n


class LayoutSampler:
    """Draws feasible layouts.

    Global draws are exactly uniform over the feasible set (sequential
    sampling from the count table). Local draws move one charger between
    two sites, a geometric number of times, starting from an incumbent.
    """

    def __init__(self, caps, U: int, rng: np.random.Generator, local_p: float = 0.5):
        self.caps = _caps(caps)
        self.U = int(U)
        if self.U < 0 or self.caps.sum() < self.U:
            raise ScenarioError(f"no feasible layout: total capacity {int(self.caps.sum())} < U={self.U}")
        self.table = _count_table(self.caps, self.U)
        self.rng = rng
        self.local_p = local_p

    @property
    def size(self) -> int:
        return self.table[0][self.U]

    def uniform(self) -> np.ndarray:
        u = np.zeros(len(self.caps), dtype=int)
        r = self.U
        for k in range(len(self.caps)):
            nxt = self.table[k + 1]
            options = range(min(int(self.caps[k]), r) + 1)
            weights = [nxt[r - x] for x in options]
            total = sum(weights)
            pick = _randbelow(self.rng, total)
            acc = 0
            for x, w in zip(options, weights):
                acc += w
                if pick < acc:
                    u[k] = x
                    r -= x
                    break
        return u

    def neighbours(self, u: np.ndarray) -> list[np.ndarray]:
        """All layouts one charger move away from ``u``."""
        out = []
        for a in np.flatnonzero(u > 0):
            for b in np.flatnonzero(u < self.caps):
                if a != b:
                    v = u.copy()
                    v[a] -= 1
                    v[b] += 1
                    out.append(v)
        return out

    def perturb(self, u: np.ndarray) -> np.ndarray:
        v = np.array(u, dtype=int)
        moves = int(self.rng.geometric(self.local_p))
        for _ in range(moves):
            nb = self.neighbours(v)
            if not nb:
                break
            v = nb[int(self.rng.integers(len(nb)))]
        return v


def sample_candidates(sampler: LayoutSampler, n: int, incumbent: np.ndarray | None = None,
                      exclude: set | None = None, local_fraction: float = 0.5) -> np.ndarray:
    """Up to ``n`` distinct feasible layouts not in ``exclude``.

    About ``local_fraction`` of them perturb the incumbent; the rest are
    uniform. Returns an empty array when every layout has been excluded.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    exclude = set() if exclude is None else exclude
    K = len(sampler.caps)
    remaining = sampler.size - len(exclude)
    if remaining <= 0:
        return np.zeros((0, K), dtype=int)
    seen: set[tuple] = set()
    out = []
    n_local = int(round(n * local_fraction)) if incumbent is not None else 0
    attempts = 0
    while len(out) < min(n, remaining) and attempts < 20 * n:
        attempts += 1
        u = sampler.perturb(incumbent) if len(out) < n_local else sampler.uniform()
        key = tuple(int(x) for x in u)
        if key in exclude or key in seen:
            continue
        seen.add(key)
        out.append(u)
    if not out and sampler.size <= ENUMERATION_LIMIT:
        rest = [u for u in enumerate_layouts(sampler.caps, sampler.U) if tuple(u) not in exclude]
        out = rest[:n]
    return np.array(out, dtype=int).reshape(-1, K)


@dataclass
class TraceEntry:
    iteration: int
    layout: tuple[int, ...]
    z: float
    best_so_far: float


@dataclass
class SOResult:
    best_layout: np.ndarray
    best_z: float
    trace: list[TraceEntry]
    failures: list[tuple[tuple[int, ...], str]] = field(default_factory=list)

    def trace_csv(self) -> str:
        lines = ["iter,layout,z_minutes,best_so_far"]
        for t in self.trace:
            lines.append(f"{t.iteration},{'-'.join(map(str, t.layout))},{t.z!r},{t.best_so_far!r}")
        return "\n".join(lines) + "\n"


def _evaluate(blackbox, layouts, n_jobs: int):
    if n_jobs > 1 and len(layouts) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(blackbox, u) for u in layouts]
            results = []
            for f in futures:
                try:
                    results.append((f.result(), None))
                except Exception as exc:  # blackbox failures are data, not crashes
                    results.append((None, exc))
            return results
    results = []
    for u in layouts:
        try:
            results.append((blackbox(u), None))
        except Exception as exc:
            results.append((None, exc))
    return results


def so_optimize(
    blackbox: Callable[[np.ndarray], float],
    sites_or_caps,
    U: int,
    budget: int,
    seed: int = 0,
    kernel: str = "cubic",
    gamma: float = 0.5,
    n0: int | None = None,
    n_candidates: int | None = None,
    weights: Sequence[float] = WEIGHT_CYCLE,
    patience: int | None = 15,
    n_jobs: int = 1,
) -> SOResult:
    """Minimise ``blackbox`` over feasible layouts with an RBF surrogate.

    :param blackbox: maps an integer layout vector to the objective ``Z``
    :param sites_or_caps: candidate sites or their per-site caps
    :param U: number of fast chargers to place
    :param budget: maximum number of blackbox calls (failed calls count)
    :param n0: initial uniform sample size, default ``2 (K + 1)`` capped at ``budget``
    :param n_candidates: candidates per iteration, default ``100 min(K, 10)``
    :param weights: merit weights cycled over iterations
    :param patience: stop after this many evaluations without improvement; ``None`` disables
    """
    caps = _caps(sites_or_caps)
    K = len(caps)
    rng = np.random.default_rng(seed)
    sampler = LayoutSampler(caps, U, rng)
    n0 = min(2 * (K + 1) if n0 is None else n0, budget, sampler.size)
    if budget < n0 or n0 < 1:
        raise ValueError(f"budget {budget} must be >= n0 {n0} >= 1")
    if any(not 0 <= w <= 1 for w in weights):
        raise ValueError("weights must lie in [0, 1]")
    n_candidates = 100 * min(K, 10) if n_candidates is None else n_candidates

    tried: set[tuple] = set()
    X: list[np.ndarray] = []
    y: list[float] = []
    trace: list[TraceEntry] = []
    failures: list[tuple[tuple[int, ...], str]] = []
    best = math.inf
    best_u = None
    since = 0

    def record(u, z, err):
        nonlocal best, best_u, since
        key = tuple(int(x) for x in u)
        tried.add(key)
        if err is not None or z is None or not math.isfinite(z):
            failures.append((key, repr(err) if err is not None else f"non-finite value {z}"))
            LOG.warning("blackbox failed on layout %s: %s", key, failures[-1][1])
            since += 1
            return
        X.append(np.array(key))
        y.append(float(z))
        if z < best:
            best, best_u, since = float(z), np.array(key), 0
        else:
            since += 1
        trace.append(TraceEntry(len(trace) + len(failures), key, float(z), best))

    initial = sample_candidates(sampler, n0, exclude=tried)
    for u, (z, err) in zip(initial, _evaluate(blackbox, list(initial), n_jobs)):
        record(u, z, err)
    since = 0

    j = 0
    while len(tried) < budget:
        if patience is not None and since >= patience:
            LOG.info("no improvement in %d evaluations; stopping", patience)
            break
        cand = sample_candidates(sampler, n_candidates, incumbent=best_u, exclude=tried)
        if len(cand) == 0:
            LOG.info("feasible set exhausted after %d evaluations", len(tried))
            break
        if X:
            model = RBFSurrogate(kernel=kernel, gamma=gamma).fit(np.array(X), np.array(y))
            pick = merit_select(cand, model, np.array(X), weights[j % len(weights)])
        else:
            pick = 0
        u = cand[pick]
        record(u, *_evaluate(blackbox, [u], 1)[0])
        j += 1
    if best_u is None:
        raise RuntimeError("every blackbox evaluation failed")
    return SOResult(best_u, best, trace, failures)


class SurrogateOptimizer(BaseEstimator):
    """Estimator-style wrapper around :func:`so_optimize`.

    ``fit(blackbox, caps, U)`` runs the search and exposes ``best_layout_``,
    ``best_value_`` and ``trace_``.
    """

    def __init__(self, budget: int = 100, kernel: str = "cubic", gamma: float = 0.5, n0: int | None = None,
                 n_candidates: int | None = None, weights: tuple = WEIGHT_CYCLE, patience: int | None = 15,
                 random_state: int = 0, n_jobs: int = 1):
        self.budget = budget
        self.kernel = kernel
        self.gamma = gamma
        self.n0 = n0
        self.n_candidates = n_candidates
        self.weights = weights
        self.patience = patience
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, blackbox, sites_or_caps, U: int):
        res = so_optimize(blackbox, sites_or_caps, U, self.budget, seed=self.random_state, kernel=self.kernel,
                          gamma=self.gamma, n0=self.n0, n_candidates=self.n_candidates, weights=self.weights,
                          patience=self.patience, n_jobs=self.n_jobs)
        self.result_ = res
        self.best_layout_ = res.best_layout
        self.best_value_ = res.best_z
        self.trace_ = res.trace
        return self


def _stable_seed(master: int, u: Sequence[int], rep: int = 0) -> int:
    h = hashlib.sha256(f"{master}|{','.join(map(str, u))}|{rep}".encode()).digest()
    return int.from_bytes(h[:4], "little")


class SimulationBlackbox:
    """Layout vector to ``Z`` through :func:`fastcharge.simulator.run_simulation`.

    With a fixed request list every layout sees the same demand. With a
    :class:`~fastcharge.simulator.DemandSpec` the demand is redrawn per
    layout from a seed derived from ``(master_seed, layout, replication)``,
    so the function stays deterministic in ``u``.
    """

    def __init__(self, scenario, demand, policy: str = "ocp-a", master_seed: int = 0, replications: int = 1):
        self.scenario = scenario
        self.demand = demand
        self.policy = policy
        self.master_seed = master_seed
        self.replications = replications

    def __call__(self, u) -> float:
        from .simulator import run_simulation

        u = [int(x) for x in u]
        layout = ChargerLayout.from_vector(self.scenario.sites, u)
        zs = []
        for rep in range(self.replications):
            seed = _stable_seed(self.master_seed, u, rep)
            zs.append(run_simulation(self.scenario, layout, self.demand, self.policy, seed).Z)
        return float(np.mean(zs))


class KMeansPlacement(BaseEstimator):
    """Place ``n_chargers`` at the candidate sites nearest to k-means centroids
    of drop-off points.

    One charger per centroid; when a site is full the charger goes to the
    next-nearest site with room.
    """

    def __init__(self, n_chargers: int = 10, random_state: int = 0, max_iter: int = 100):
        self.n_chargers = n_chargers
        self.random_state = random_state
        self.max_iter = max_iter

    def fit(self, dropoffs, sites: Sequence[Site]):
        X = check_array(dropoffs, dtype=float)
        U = self.n_chargers
        caps = _caps(sites)
        if caps.sum() < U:
            raise ScenarioError(f"total capacity {int(caps.sum())} < {U} chargers")
        if len(X) < U:
            raise ValueError(f"need at least {U} drop-off points, got {len(X)}")
        counts = np.zeros(len(sites), dtype=int)
        if U == 0:
            self.cluster_centers_ = np.zeros((0, 2))
        else:
            km = KMeans(n_clusters=U, algorithm="lloyd", n_init=1, max_iter=self.max_iter,
                        random_state=self.random_state).fit(X)
            self.cluster_centers_ = km.cluster_centers_
            coords = np.array([s.coord for s in sites], dtype=float)
            D = cdist(self.cluster_centers_, coords)
            for c in range(U):
                for k in sorted(range(len(sites)), key=lambda k: (D[c, k], k)):
                    if counts[k] < caps[k]:
                        counts[k] += 1
                        break
        self.layout_vector_ = counts
        self.layout_ = ChargerLayout.from_vector(sites, counts)
        return self


def kmeans_layout(dropoffs, sites: Sequence[Site], U: int, seed: int = 0) -> ChargerLayout:
    """Functional form of :class:`KMeansPlacement`."""
    return KMeansPlacement(U, random_state=seed).fit(dropoffs, sites).layout_
