"""Per-epoch vehicle-to-charger assignment.

With one vehicle per charger, the recharged energy pinned at ``e_max`` and
the waiting time pinned at ``max(0, t_A - t_ij)``, the mixed-integer model
reduces to a rectangular linear assignment over explicit arc totals
(travel + charge + wait). Arcs that would arrive below ``e_min`` are
excluded rather than penalised.

When vehicles outnumber chargers (or feasibility forbids a full matching)
the solver first maximises the number of matched vehicles, then minimises
total cost; the unmatched vehicles are reported as deferred.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import NegativeCycleError, maximum_bipartite_matching, shortest_path

from .model import FleetParams, Point

LOG = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 8


@dataclass(frozen=True)
class VehicleSpec:
    id: Hashable
    soc: float
    location: Point


@dataclass(frozen=True)
class ChargerSpec:
    id: Hashable
    power: float
    available_in: float
    location: Point


@dataclass(frozen=True)
class AssignmentInstance:
    vehicles: tuple[VehicleSpec, ...]
    chargers: tuple[ChargerSpec, ...]
    params: FleetParams = field(default_factory=FleetParams)

    def __post_init__(self):
        object.__setattr__(self, "vehicles", tuple(sorted(self.vehicles, key=lambda v: v.id)))
        object.__setattr__(self, "chargers", tuple(sorted(self.chargers, key=lambda c: c.id)))
        B = self.params.battery_capacity
        for v in self.vehicles:
            if not 0 <= v.soc <= B:
                raise ValueError(f"vehicle {v.id}: soc {v.soc} outside [0, {B}]")
        for c in self.chargers:
            if c.available_in < 0:
                raise ValueError(f"charger {c.id}: available_in must be >= 0")
            if c.power <= 0:
                raise ValueError(f"charger {c.id}: power must be > 0")
        if len({v.id for v in self.vehicles}) != len(self.vehicles):
            raise ValueError("duplicate vehicle ids")
        if len({c.id for c in self.chargers}) != len(self.chargers):
            raise ValueError("duplicate charger ids")


@dataclass(frozen=True)
class ArcCost:
    feasible: bool
    travel: float
    charge: float
    wait: float
    total: float
    energy: float
    distance: float


@dataclass
class AssignmentSolution:
    pairs: dict
    objective: float
    per_pair: dict
    deferred: frozenset
    method: str = "exact"


@dataclass(frozen=True)
class _Arrays:
    travel: np.ndarray
    dist: np.ndarray
    charge: np.ndarray
    wait: np.ndarray
    energy: np.ndarray
    total: np.ndarray
    feasible: np.ndarray


def _arrays(inst: AssignmentInstance) -> _Arrays:
    p = inst.params
    nI, nJ = len(inst.vehicles), len(inst.chargers)
    if nI == 0 or nJ == 0:
        z = np.zeros((nI, nJ))
        return _Arrays(z, z, z, z, z, z, np.zeros((nI, nJ), dtype=bool))
    vl = np.array([v.location for v in inst.vehicles], dtype=float)
    cl = np.array([c.location for c in inst.chargers], dtype=float)
    soc = np.array([v.soc for v in inst.vehicles], dtype=float)
    power = np.array([c.power for c in inst.chargers], dtype=float)
    avail = np.array([c.available_in for c in inst.chargers], dtype=float)
    diff = vl[:, None, :] - cl[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1]) * p.circuity
    travel = dist / p.speed * 60.0
    arrival = soc[:, None] - p.efficiency * dist
    feasible = arrival >= p.e_min
    energy = np.maximum(p.e_max - arrival, 0.0)
    charge = energy / power[None, :]
    wait = np.maximum(avail[None, :] - travel, 0.0)
    total = travel + charge + wait
    return _Arrays(travel, dist, charge, wait, energy, total, feasible)


def build_arc_costs(inst: AssignmentInstance) -> list[list[ArcCost]]:
    """Arc data for every (vehicle, charger) pair, rows and columns in id order."""
    a = _arrays(inst)
    return [
        [
            ArcCost(bool(a.feasible[i, j]), float(a.travel[i, j]), float(a.charge[i, j]),
                    float(a.wait[i, j]), float(a.total[i, j]), float(a.energy[i, j]),
                    float(a.dist[i, j]))
            for j in range(a.total.shape[1])
        ]
        for i in range(a.total.shape[0])
    ]


def _solution(inst: AssignmentInstance, a: _Arrays, cols: Sequence[int], method: str) -> AssignmentSolution:
    """Build a solution from ``cols[i]`` = charger index or -1 for deferred."""
    pairs, per_pair, deferred = {}, {}, []
    objective = 0.0
    for i, j in enumerate(cols):
        vid = inst.vehicles[i].id
        if j < 0:
            deferred.append(vid)
            continue
        pairs[vid] = inst.chargers[j].id
        per_pair[vid] = ArcCost(True, float(a.travel[i, j]), float(a.charge[i, j]), float(a.wait[i, j]),
                                float(a.total[i, j]), float(a.energy[i, j]), float(a.dist[i, j]))
        objective += float(a.total[i, j])
    return AssignmentSolution(pairs, objective, per_pair, frozenset(deferred), method)


def _augmented(a: _Arrays) -> tuple[np.ndarray, float]:
    """Cost matrix with one private deferral column per vehicle.

    Deferral costs ``big``, larger than any possible sum of real arc costs,
    so minimising the total first minimises the number of deferrals.
    """
    nI, nJ = a.total.shape
    real = np.where(a.feasible, a.total, np.inf)
    finite = real[np.isfinite(real)]
    big = 1.0 + (float(finite.max()) * nI if finite.size else 0.0) + 1.0
    defer = np.full((nI, nI), np.inf)
    np.fill_diagonal(defer, big)
    return np.hstack([real, defer]), big


def _score(A: np.ndarray, cols: np.ndarray, nJ: int) -> tuple[int, float]:
    n_def = int(np.sum(cols >= nJ))
    cost = float(sum(A[i, j] for i, j in enumerate(cols) if j < nJ))
    return n_def, cost


def _solve_fixed(A: np.ndarray, fixed: dict[int, int]) -> np.ndarray | None:
    nI, M = A.shape
    cols = np.full(nI, -1)
    for i, j in fixed.items():
        cols[i] = j
    free_rows = [i for i in range(nI) if i not in fixed]
    if free_rows:
        used = set(fixed.values())
        free_cols = [j for j in range(M) if j not in used]
        sub = A[np.ix_(free_rows, free_cols)]
        try:
            r, c = linear_sum_assignment(sub)
        except ValueError:
            return None
        if len(r) < len(free_rows) or not np.all(np.isfinite(sub[r, c])):
            return None
        for rr, cc in zip(r, c):
            cols[free_rows[rr]] = free_cols[cc]
    return cols


def _potentials(A: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Node potentials of the residual graph of an optimal assignment.

    Nodes: rows ``0..I-1``, columns ``I..I+M-1``, a sink collecting free
    columns, and a source joined to everything at zero cost. Shortest-path
    distances from the source are feasible duals, so an unmatched arc with
    positive reduced cost cannot belong to any optimal assignment.
    """
    nI, M = A.shape
    n = nI + M + 2
    sink, src = nI + M, nI + M + 1
    rows, dst, w = [], [], []
    matched_col = set(int(c) for c in cols)
    ii, jj = np.nonzero(np.isfinite(A))
    for i, j in zip(ii.tolist(), jj.tolist()):
        if cols[i] == j:
            rows.append(nI + j); dst.append(i); w.append(-A[i, j])
        else:
            rows.append(i); dst.append(nI + j); w.append(A[i, j])
    for j in range(M):
        if j in matched_col:
            rows.append(sink); dst.append(nI + j); w.append(0.0)
        else:
            rows.append(nI + j); dst.append(sink); w.append(0.0)
    for k in range(n - 1):
        rows.append(src); dst.append(k); w.append(0.0)
    # csgraph treats stored zeros as missing edges
    w = np.array(w, dtype=float)
    w[w == 0.0] = np.finfo(float).tiny
    g = csr_matrix((w, (rows, dst)), shape=(n, n))
    dist = shortest_path(g, method="BF", directed=True, indices=src)
    return dist


def solve_exact(inst: AssignmentInstance, tol: float = 1e-9) -> AssignmentSolution:
    """Minimum-cost maximum-cardinality assignment.

    Among optimal assignments the one whose charger ranks, read in vehicle
    id order (deferral ranking last), are lexicographically smallest is
    returned.
    """
    a = _arrays(inst)
    nI, nJ = a.total.shape
    if nI == 0:
        return AssignmentSolution({}, 0.0, {}, frozenset())
    if nJ == 0:
        return AssignmentSolution({}, 0.0, {}, frozenset(v.id for v in inst.vehicles))
    A, big = _augmented(a)
    r, c = linear_sum_assignment(A)
    cols = np.empty(nI, dtype=int)
    cols[r] = c
    best = _score(A, cols, nJ)
    scale = max(1.0, float(np.max(A[np.isfinite(A)])))
    try:
        pot = _potentials(A, cols)
        rc = A + pot[:nI, None] - pot[None, nI:nI + A.shape[1]]
    except NegativeCycleError:
        # rounding produced a cycle of cost ~ -eps: test every arc instead
        LOG.debug("negative cycle in residual graph; unfiltered tie-break")
        rc = np.zeros_like(A)

    def rank(i, j):
        return j if j < nJ else nJ

    fixed: dict[int, int] = {}
    for i in range(nI):
        cur = rank(i, cols[i])
        used = set(fixed.values())
        cands = [
            j for j in range(nJ)
            if j < cur and j not in used and np.isfinite(A[i, j]) and rc[i, j] <= 1e-7 * scale
        ]
        for j in cands:
            trial = _solve_fixed(A, {**fixed, i: j})
            if trial is None:
                continue
            sc = _score(A, trial, nJ)
            if sc[0] == best[0] and abs(sc[1] - best[1]) <= tol * max(1.0, abs(best[1])):
                cols = trial
                break
        fixed[i] = int(cols[i])
    return _solution(inst, a, [int(j) if j < nJ else -1 for j in cols], "exact")


def brute_force(inst: AssignmentInstance, tol: float = 1e-9) -> AssignmentSolution:
    """Exhaustive enumeration of matchings on feasible arcs (oracle).

    :raises ValueError: when ``min(|I|, |J|)`` exceeds :data:`BRUTE_FORCE_LIMIT`
    """
    a = _arrays(inst)
    nI, nJ = a.total.shape
    if min(nI, nJ) > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force refuses instances with min(|I|,|J|) > {BRUTE_FORCE_LIMIT}")
    cost = a.total.tolist()
    feas = a.feasible.tolist()
    best: list = [None]  # (n_matched, cost, key, cols)
    cols = [-1] * nI
    used = [False] * nJ

    def visit(i, matched, acc):
        if matched + (nI - i) < (best[0][0] if best[0] else 0):
            return
        if i == nI:
            key = tuple(j if j >= 0 else nJ for j in cols)
            cand = (matched, acc, key, list(cols))
            b = best[0]
            if b is None or matched > b[0]:
                best[0] = cand
            elif matched == b[0]:
                if acc < b[1] - tol * max(1.0, abs(b[1])):
                    best[0] = cand
                elif abs(acc - b[1]) <= tol * max(1.0, abs(b[1])) and key < b[2]:
                    best[0] = cand
            return
        for j in range(nJ):
            if not used[j] and feas[i][j]:
                used[j] = True
                cols[i] = j
                visit(i + 1, matched + 1, acc + cost[i][j])
                used[j] = False
        cols[i] = -1
        visit(i + 1, matched, acc)

    visit(0, 0, 0.0)
    # re-sum in row order so objective matches solve_exact's summation
    return _solution(inst, a, best[0][3], "brute_force")


def _max_matched(a: _Arrays) -> int:
    if a.feasible.size == 0:
        return 0
    match = maximum_bipartite_matching(csr_matrix(a.feasible.astype(np.int8)), perm_type="column")
    return int(np.sum(match >= 0))


def _greedy_primal(C: np.ndarray, red: np.ndarray, k: int) -> np.ndarray:
    """Greedy matching on reduced costs, topped up to ``k`` pairs by augmenting paths."""
    nI, nJ = C.shape
    ii, jj = np.nonzero(np.isfinite(C))
    order = np.lexsort((jj, ii, red[ii, jj]))
    cols = np.full(nI, -1)
    owner = np.full(nJ, -1)
    n = 0
    for t in order:
        if n == k:
            break
        i, j = ii[t], jj[t]
        if cols[i] < 0 and owner[j] < 0:
            cols[i], owner[j] = j, i
            n += 1
    if n < k:
        adj = [np.nonzero(np.isfinite(C[i]))[0][np.argsort(red[i, np.isfinite(C[i])], kind="stable")]
               for i in range(nI)]

        def augment(i, seen):
            for j in adj[i]:
                if seen[j]:
                    continue
                seen[j] = True
                if owner[j] < 0 or augment(owner[j], seen):
                    cols[i], owner[j] = j, i
                    return True
            return False

        for i in range(nI):
            if n == k:
                break
            if cols[i] < 0 and augment(i, np.zeros(nJ, dtype=bool)):
                n += 1
    return cols


def _improve(C: np.ndarray, cols: np.ndarray, max_pass: int = 200) -> np.ndarray:
    """Local search keeping the number of pairs fixed.

    Moves: a matched vehicle switches to a free charger, two matched
    vehicles swap chargers, or an unmatched vehicle replaces a matched one.
    """
    nI, nJ = C.shape
    cols = cols.copy()
    for _ in range(max_pass):
        m = np.nonzero(cols >= 0)[0]
        if m.size == 0:
            break
        cur = C[m, cols[m]]
        free = np.ones(nJ, dtype=bool)
        free[cols[m]] = False
        best_gain, move = 1e-12, None
        if free.any():
            sub = C[np.ix_(m, np.nonzero(free)[0])]
            k = np.argmin(sub, axis=1)
            gain = cur - sub[np.arange(m.size), k]
            t = int(np.argmax(gain))
            if gain[t] > best_gain:
                best_gain, move = gain[t], ("free", m[t], np.nonzero(free)[0][k[t]])
        sw = C[np.ix_(m, cols[m])]
        delta = cur[:, None] + cur[None, :] - sw - sw.T
        delta = np.where(np.isfinite(delta), delta, -np.inf)
        t = np.unravel_index(np.argmax(delta), delta.shape)
        if delta[t] > best_gain:
            best_gain, move = delta[t], ("swap", m[t[0]], m[t[1]])
        u = np.nonzero(cols < 0)[0]
        if u.size:
            rep = C[np.ix_(u, cols[m])]
            gain = cur[None, :] - rep
            gain = np.where(np.isfinite(gain), gain, -np.inf)
            t = np.unravel_index(np.argmax(gain), gain.shape)
            if gain[t] > best_gain:
                best_gain, move = gain[t], ("replace", u[t[0]], m[t[1]])
        if move is None:
            break
        kind, x, y = move
        if kind == "free":
            cols[x] = y
        elif kind == "swap":
            cols[x], cols[y] = cols[y], cols[x]
        else:
            cols[x], cols[y] = cols[y], -1
    return cols


def solve_lagrangian(
    inst: AssignmentInstance,
    gap_target: float = 0.005,
    max_iter: int = 5000,
) -> tuple[AssignmentSolution, float]:
    """Subgradient Lagrangian heuristic.

    The charger capacity rows and the cardinality row ``sum x = k`` (``k``
    the maximum number of vehicles that can be matched on feasible arcs)
    are relaxed; each vehicle then independently picks its cheapest
    reduced-cost charger or stays unmatched. A greedy repair plus local
    search turns multipliers into primal solutions.

    Returns the best primal and the certified gap
    ``(primal - best dual bound) / primal``. If the subgradient stalls
    above ``gap_target`` the exact solution is returned instead
    (``method == "exact-fallback"``) with the gap certified by the best
    dual bound that was reached.
    """
    if gap_target <= 0:
        raise ValueError("gap_target must be > 0")
    a = _arrays(inst)
    nI, nJ = a.total.shape
    k = _max_matched(a)
    if k == 0:
        sol = _solution(inst, a, [-1] * nI, "lagrangian")
        return sol, 0.0
    C = np.where(a.feasible, a.total, np.inf)
    rows = np.arange(nI)

    def gap_of(ub, lb):
        return max(0.0, (ub - lb) / ub) if ub > 0 else 0.0

    def primal(red):
        cols = _improve(C, _greedy_primal(C, red, k))
        matched = cols >= 0
        return cols, float(C[rows[matched], cols[matched]].sum())

    lam = np.zeros(nJ)
    # start the cardinality multiplier so every row wants some charger
    mu = -float(np.max(np.min(C, axis=1)[np.isfinite(np.min(C, axis=1))])) - 1.0
    ub_cols, ub = primal(C)
    lb = -np.inf
    theta, stall = 1.0, 0
    for it in range(max_iter):
        red = C + lam[None, :] + mu
        choice = np.argmin(red, axis=1)
        best = red[rows, choice]
        take = best < 0
        L = float(best[take].sum() - lam.sum() - mu * k)
        if L > lb:
            lb, stall = L, 0
        else:
            stall += 1
            if stall >= 30:
                theta *= 0.7
                stall = 0
        g_lam = np.bincount(choice[take], minlength=nJ).astype(float) - 1.0
        g_lam[(lam <= 0) & (g_lam < 0)] = 0.0
        g_mu = float(take.sum() - k)
        norm = float(g_lam @ g_lam) + g_mu * g_mu
        if norm == 0:
            # relaxed solution is feasible and complementary: optimal
            cols = np.where(take, choice, -1)
            ub_cols, ub, lb = cols, float(C[rows[take], choice[take]].sum()), L
            break
        if it % 10 == 0:
            cols, val = primal(C + lam[None, :])
            if val < ub:
                ub_cols, ub = cols, val
        if gap_of(ub, lb) <= gap_target or theta < 1e-5:
            break
        step = theta * (ub - L) / norm
        lam = np.maximum(0.0, lam + step * g_lam)
        mu = mu + step * g_mu
    gap = gap_of(ub, lb)
    if gap > gap_target:
        LOG.info("lagrangian stalled at gap %.4g; falling back to exact solve", gap)
        sol = solve_exact(inst)
        sol.method = "exact-fallback"
        return sol, gap_of(sol.objective, lb)
    return _solution(inst, a, [int(j) for j in ub_cols], "lagrangian"), gap


def solution_csv(inst: AssignmentInstance, sol: AssignmentSolution) -> str:
    """Audit dump with header ``vehicle,charger,travel,charge,wait,total``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["vehicle", "charger", "travel", "charge", "wait", "total"])
    for v in inst.vehicles:
        if v.id in sol.pairs:
            arc = sol.per_pair[v.id]
            w.writerow([v.id, sol.pairs[v.id], f"{arc.travel:.6f}", f"{arc.charge:.6f}",
                        f"{arc.wait:.6f}", f"{arc.total:.6f}"])
        else:
            w.writerow([v.id, "", "", "", "", ""])
    return buf.getvalue()
