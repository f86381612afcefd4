import math
from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fastcharge.model import ChargerLayout, ScenarioError, Site, layout_violations, validate_layout
from fastcharge.optimizer import (
    KMeansPlacement,
    LayoutSampler,
    SurrogateOptimizer,
    count_layouts,
    enumerate_layouts,
    kmeans_layout,
    sample_candidates,
    so_optimize,
)


def quadratic(center):
    c = np.asarray(center, dtype=float)
    return lambda u: float(np.sum((np.asarray(u, dtype=float) - c) ** 2) + 100.0)


def test_enumerate_stars_and_bars():
    lay = enumerate_layouts([2, 2, 2], 2)
    assert len(lay) == comb(4, 2) == 6
    assert len({tuple(u) for u in lay}) == 6
    assert [tuple(u) for u in lay] == sorted(tuple(u) for u in lay)


def test_enumerate_edges():
    assert enumerate_layouts([3, 1], 0).tolist() == [[0, 0]]
    assert len(enumerate_layouts([1, 1], 3)) == 0


def test_enumerate_guard():
    with pytest.raises(ValueError, match="1000"):
        enumerate_layouts([5] * 10, 20, limit=1000)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=5), st.integers(0, 8))
def test_count_matches_brute_force(caps, U):
    import itertools

    brute = sum(1 for u in itertools.product(*[range(c + 1) for c in caps]) if sum(u) == U)
    assert count_layouts(caps, U) == brute == len(enumerate_layouts(caps, U))


def test_sampler_small_space():
    s = LayoutSampler([1, 1], 1, np.random.default_rng(0))
    got = {tuple(s.uniform()) for _ in range(50)}
    assert got <= {(1, 0), (0, 1)} and len(got) == 2
    cands = sample_candidates(s, 10)
    assert {tuple(u) for u in cands} <= {(1, 0), (0, 1)}


def test_sampler_uniformity():
    s = LayoutSampler([2, 2, 2], 3, np.random.default_rng(1))
    from collections import Counter

    counts = Counter(tuple(s.uniform()) for _ in range(7000))
    assert len(counts) == count_layouts([2, 2, 2], 3) == 7
    freq = np.array(list(counts.values())) / 7000
    assert np.all(np.abs(freq - 1 / 7) < 0.02)


def test_sampler_huge_space():
    s = LayoutSampler([2] * 300, 12, np.random.default_rng(2))
    assert s.size > 2**63
    u = s.uniform()
    assert u.sum() == 12 and np.all(u <= 2)


def test_neighbours_of_example():
    s = LayoutSampler([2, 2, 1], 3, np.random.default_rng(0))
    nb = {tuple(v) for v in s.neighbours(np.array([2, 1, 0]))}
    assert nb == {(1, 2, 0), (1, 1, 1), (2, 0, 1)}


def test_infeasible_space():
    with pytest.raises(ScenarioError):
        LayoutSampler([1, 1], 3, np.random.default_rng(0))


@given(st.integers(0, 10**6), st.lists(st.integers(0, 3), min_size=2, max_size=6), st.data())
def test_candidates_feasible_and_fresh(seed, caps, data):
    U = data.draw(st.integers(0, sum(caps)))
    s = LayoutSampler(caps, U, np.random.default_rng(seed))
    sites = [Site(f"s{k}", (float(k), 0.0), 0, c) for k, c in enumerate(caps)]
    first = sample_candidates(s, 5)
    exclude = {tuple(int(x) for x in u) for u in first}
    more = sample_candidates(s, 20, incumbent=first[0], exclude=exclude)
    for u in more:
        assert tuple(u) not in exclude
        assert not layout_violations(ChargerLayout.from_vector(sites, u), sites, U)


def test_so_finds_quadratic_optimum():
    caps = [2] * 5
    all_u = enumerate_layouts(caps, 3)
    for seed in range(3):
        center = np.random.default_rng(100 + seed).uniform(0, 2, 5)
        f = quadratic(center)
        opt = min(f(u) for u in all_u)
        res = so_optimize(f, caps, 3, budget=40, seed=seed, patience=None)
        assert res.best_z == pytest.approx(opt)
        assert len(res.trace) <= 40


def test_budget_equal_n0_returns_initial_best():
    caps = [2] * 4
    f = quadratic([0.3, 1.2, 0.5, 1.0])
    res = so_optimize(f, caps, 3, budget=6, seed=1, n0=6)
    assert len(res.trace) == 6
    assert res.best_z == min(t.z for t in res.trace)


def test_trace_monotone_feasible_and_deterministic():
    caps = [2, 1, 2, 1, 2, 1]
    seen = []

    def box(u):
        seen.append(tuple(int(x) for x in u))
        assert sum(u) == 4 and all(0 <= x <= c for x, c in zip(u, caps))
        return quadratic([1, 0, 1, 0.5, 1, 0.5])(u) + 0.3 * math.sin(sum(i * x for i, x in enumerate(u)))

    a = so_optimize(box, caps, 4, budget=30, seed=7)
    b = so_optimize(box, caps, 4, budget=30, seed=7)
    assert a.trace == b.trace and a.trace_csv() == b.trace_csv()
    best = [t.best_so_far for t in a.trace]
    assert all(x >= y for x, y in zip(best, best[1:]))
    enum_min = min(box(u) for u in enumerate_layouts(caps, 4))
    assert a.best_z >= enum_min
    assert a.trace_csv().splitlines()[0] == "iter,layout,z_minutes,best_so_far"


def test_failures_are_logged_and_skipped():
    caps = [2] * 4

    def box(u):
        if u[0] == 2:
            raise RuntimeError("boom")
        return quadratic([1, 1, 0.5, 0.5])(u)

    res = so_optimize(box, caps, 3, budget=20, seed=3, patience=None)
    assert all(t.layout[0] != 2 for t in res.trace)
    assert len(res.trace) + len(res.failures) <= 20
    assert all("boom" in msg for _, msg in res.failures)


def test_estimator_wrapper():
    est = SurrogateOptimizer(budget=15, random_state=2).fit(quadratic([1, 0, 1, 1]), [2, 2, 2, 2], 3)
    assert est.best_layout_.sum() == 3
    assert est.best_value_ == min(t.z for t in est.trace_)
    assert est.get_params()["budget"] == 15


# -- k-means placement -------------------------------------------------------

def grid_sites(cap=2):
    return [Site(f"g{i}{j}", (10.0 * i, 10.0 * j), 0, cap) for i in range(5) for j in range(5)]


def test_kmeans_single_point():
    sites = grid_sites()
    pts = np.tile([[12.0, 31.0]], (20, 1))
    layout = kmeans_layout(pts, sites, 1, seed=0)
    assert layout.counts.get("g13") == 1 and layout.total == 1


def test_kmeans_two_clusters():
    rng = np.random.default_rng(0)
    a = rng.normal([3, 2], 1.0, (100, 2))
    b = rng.normal([38, 40], 1.0, (100, 2))
    sites = grid_sites()
    km = KMeansPlacement(2, random_state=1).fit(np.vstack([a, b]), sites)
    centers = sorted(map(tuple, km.cluster_centers_))
    for c, cl in zip(centers, (a, b)):
        lo, hi = cl.min(axis=0), cl.max(axis=0)
        assert np.all(lo <= c) and np.all(c <= hi)
    assert {k for k, v in km.layout_.counts.items() if v} == {"g00", "g44"}
    validate_layout(km.layout_, sites, 2)


def test_kmeans_spills_to_next_site():
    sites = grid_sites(cap=1)
    rng = np.random.default_rng(3)
    pts = rng.normal([20, 20], 0.5, (50, 2))
    layout = kmeans_layout(pts, sites, 3, seed=0)
    validate_layout(layout, sites, 3)
    assert layout.counts.get("g22") == 1


def test_kmeans_needs_enough_points():
    with pytest.raises(ValueError):
        kmeans_layout(np.zeros((1, 2)), grid_sites(), 2)
