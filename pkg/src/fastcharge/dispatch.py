"""Insertion-based dial-a-ride dispatch.

A new request goes to the candidate vehicle and insertion position with
the least marginal cost ``c(v, x_new) - c(v, x)``, where

    c(v, x) = alpha * T + (1 - alpha) * (beta * T**2 + sum_n Ybar_n)

``T`` is the remaining travel time of the tour and ``Ybar_n`` the remaining
wait plus ride time of each passenger assigned to the vehicle, both
measured from the current time. Committed stops are never reordered.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .model import FleetParams, Point, Request

PICKUP, DROPOFF = "pickup", "dropoff"


@dataclass(frozen=True)
class Stop:
    kind: str
    ref: int
    location: Point
    passengers: int = 0
    request_arrival: float = 0.0

    @property
    def load_change(self) -> int:
        if self.kind == PICKUP:
            return self.passengers
        if self.kind == DROPOFF:
            return -self.passengers
        return 0


@dataclass(frozen=True)
class Tour:
    stops: tuple[Stop, ...] = ()

    def __len__(self):
        return len(self.stops)

    def loads(self, onboard: int) -> list[int]:
        """Onboard count after each stop, starting from ``onboard``."""
        out, n = [], onboard
        for s in self.stops:
            n += s.load_change
            out.append(n)
        return out

    def insert(self, request: Request, p: int, q: int) -> "Tour":
        pick = Stop(PICKUP, request.id, request.origin, request.passengers, request.arrival)
        drop = Stop(DROPOFF, request.id, request.destination, request.passengers, request.arrival)
        s = self.stops
        return Tour(s[:p] + (pick,) + s[p:q] + (drop,) + s[q:])


@dataclass(frozen=True)
class VehicleView:
    """Dispatch-relevant snapshot of a vehicle.

    The anchor is where and when the vehicle is next free to change plans:
    its current position when idle, otherwise the end of the leg it is
    driving. ``soc`` and ``onboard`` are the values at the anchor.
    """

    id: int
    anchor: Point
    anchor_time: float
    soc: float
    onboard: int
    tour: Tour
    depot: Point
    available: bool = True


@dataclass(frozen=True)
class DispatchCost:
    travel: float
    passenger_burden: float
    combined: float


@dataclass(frozen=True)
class Schedule:
    times: tuple[float, ...]
    km: float
    end: Point
    travel: float


@dataclass
class DispatchDecision:
    vehicle: int
    tour: Tour
    marginal: float
    position: tuple[int, int]
    cost_before: DispatchCost = field(repr=False, default=None)
    cost_after: DispatchCost = field(repr=False, default=None)


def _dist(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def schedule(v: VehicleView, tour: Tour, now: float, params: FleetParams) -> Schedule:
    """Planned arrival at every stop when leaving the anchor immediately."""
    k = params.circuity
    to_min = 60.0 / params.speed
    t, km, pos = v.anchor_time, 0.0, v.anchor
    times = []
    for s in tour.stops:
        d = _dist(pos, s.location) * k
        km += d
        t += d * to_min
        times.append(t)
        pos = s.location
    return Schedule(tuple(times), km, pos, t - now)


def cost_from_schedule(tour: Tour, sch: Schedule, now: float, alpha: float, beta: float) -> DispatchCost:
    T = sch.travel
    Y = 0.0
    for s, t in zip(tour.stops, sch.times):
        if s.kind == DROPOFF:
            Y += s.passengers * (t - max(now, s.request_arrival))
    return DispatchCost(T, Y, alpha * T + (1 - alpha) * (beta * T * T + Y))


def tour_cost(v: VehicleView, tour: Tour, now: float, alpha: float, beta: float,
              params: FleetParams | None = None) -> DispatchCost:
    """Cost of serving ``tour`` from the vehicle's anchor; empty tours cost 0."""
    params = FleetParams() if params is None else params
    if not tour.stops and v.anchor_time <= now:
        return DispatchCost(0.0, 0.0, 0.0)
    return cost_from_schedule(tour, schedule(v, tour, now, params), now, alpha, beta)


def feasible_insertions(tour: Tour, request: Request, capacity: int, onboard: int = 0) -> list[tuple[int, int]]:
    """Pickup/dropoff positions ``(p, q)``, ``p <= q``, respecting capacity.

    The pickup goes before original stop ``p`` and the dropoff before
    original stop ``q`` (``len(tour)`` meaning the end).
    """
    n = len(tour)
    k = request.passengers
    loads = tour.loads(onboard)
    before = [onboard] + loads  # load on the leg arriving at slot p
    out = []
    for p in range(n + 1):
        if before[p] + k > capacity:
            continue
        out.append((p, p))
        for q in range(p + 1, n + 1):
            # original stop q-1 now sits between pickup and dropoff
            if loads[q - 1] + k > capacity:
                break
            out.append((p, q))
    out.sort()
    return out


class EnergyOracle:
    """Reserve energy needed after a tour ends.

    The vehicle must still reach a depot (its own or the nearest one, per
    ``params.depot_return``) and, so a recharge is always possible, the
    nearest charger.
    """

    def __init__(self, charger_points: Sequence[Point], params: FleetParams,
                 depot_points: Sequence[Point] = ()):
        self.points = list(dict.fromkeys(charger_points))
        self.depots = list(dict.fromkeys(depot_points))
        self.params = params
        self._cache: dict[Point, float] = {}
        self._depot_cache: dict[Point, float] = {}

    def nearest_charger_km(self, p: Point) -> float:
        if p not in self._cache:
            if not self.points:
                self._cache[p] = 0.0
            else:
                self._cache[p] = min(_dist(p, c) for c in self.points) * self.params.circuity
        return self._cache[p]

    def depot_km(self, end: Point, depot: Point) -> float:
        if self.params.depot_return == "own" or not self.depots:
            return _dist(end, depot) * self.params.circuity
        if end not in self._depot_cache:
            self._depot_cache[end] = min(_dist(end, q) for q in self.depots) * self.params.circuity
        return self._depot_cache[end]

    def tail_km(self, end: Point, depot: Point) -> float:
        return max(self.depot_km(end, depot), self.nearest_charger_km(end))


def energy_ok(v: VehicleView, sch: Schedule, energy: EnergyOracle, params: FleetParams) -> bool:
    need = params.efficiency * (sch.km + energy.tail_km(sch.end, v.depot))
    return v.soc - need >= params.e_min


def best_insertion(v: VehicleView, request: Request, now: float, params: FleetParams,
                   energy: EnergyOracle, bound: float = math.inf) -> DispatchDecision | None:
    """Cheapest energy-feasible insertion of ``request`` into ``v``'s tour.

    Each candidate ``(p, q)`` is scored in constant time from the base
    schedule: stops between the pickup and the dropoff shift by the pickup
    detour, stops after the dropoff by both detours.
    """
    stops = v.tour.stops
    n = len(stops)
    k = params.circuity
    to_min = 60.0 / params.speed
    base_sch = schedule(v, v.tour, now, params)
    base = cost_from_schedule(v.tour, base_sch, now, params.alpha, params.beta)
    pts = [v.anchor] + [s.location for s in stops]
    t_at = [v.anchor_time] + list(base_sch.times)
    leg = [_dist(pts[i], pts[i + 1]) * k for i in range(n)]
    o, d = request.origin, request.destination
    do = [_dist(x, o) * k for x in pts]
    dd = [_dist(x, d) * k for x in pts]
    dod = _dist(o, d) * k
    drop_suffix = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        drop_suffix[i] = drop_suffix[i + 1] + (stops[i].passengers if stops[i].kind == DROPOFF else 0)
    ready = max(now, request.arrival)
    pax = request.passengers
    alpha, beta = params.alpha, params.beta
    # the tour ends either where it already did or at the new dropoff
    budget_km = (v.soc - params.e_min) / params.efficiency
    room_mid = budget_km - base_sch.km - energy.tail_km(base_sch.end, v.depot)
    room_end = budget_km - base_sch.km - energy.tail_km(d, v.depot)
    best = None
    for p, q in feasible_insertions(v.tour, request, params.capacity, v.onboard):
        pick_t = t_at[p] + do[p] * to_min
        if p == q:
            shift1 = 0.0
            shift = do[p] + dod + (dd[p + 1] - leg[p] if p < n else 0.0)
            drop_t = pick_t + dod * to_min
        else:
            shift1 = do[p] + do[p + 1] - leg[p]
            shift = shift1 + (dd[q] + dd[q + 1] - leg[q] if q < n else dd[q])
            drop_t = t_at[q] + shift1 * to_min + dd[q] * to_min
        if shift > (room_end if q == n else room_mid):
            continue
        T = base.travel + shift * to_min
        Y = (base.passenger_burden
             + shift1 * to_min * (drop_suffix[p] - drop_suffix[q])
             + shift * to_min * drop_suffix[q]
             + pax * (drop_t - ready))
        m = alpha * T + (1 - alpha) * (beta * T * T + Y) - base.combined
        if m < bound and (best is None or m < best[0]):
            best = (m, p, q, T, Y)
    if best is None:
        return None
    m, p, q, T, Y = best
    after = DispatchCost(T, Y, alpha * T + (1 - alpha) * (beta * T * T + Y))
    return DispatchDecision(v.id, v.tour.insert(request, p, q), m, (p, q), base, after)


def candidate_vehicles(request: Request, fleet: Sequence[VehicleView], params: FleetParams,
                       energy: EnergyOracle, now: float | None = None) -> list[int]:
    """Vehicles that are available and admit an energy-feasible insertion."""
    now = request.arrival if now is None else now
    return [
        v.id for v in fleet
        if v.available and best_insertion(v, request, now, params, energy) is not None
    ]


def _lower_bound(v: VehicleView, request: Request, now: float, params: FleetParams) -> float:
    # the new passenger's own wait + ride cannot beat a straight run
    to_min = 60.0 / params.speed * params.circuity
    reach = (v.anchor_time - now) + (_dist(v.anchor, request.origin) + _dist(request.origin, request.destination)) * to_min
    return (1 - params.alpha) * request.passengers * reach


def dispatch_request(request: Request, fleet: Sequence[VehicleView], params: FleetParams,
                     energy: EnergyOracle, now: float | None = None) -> DispatchDecision | None:
    """Least-marginal-cost insertion over all available vehicles; ``None`` if rejected.

    Ties are broken by vehicle id, then by insertion position.
    """
    now = request.arrival if now is None else now
    order = sorted(
        ((_lower_bound(v, request, now, params), v.id, v) for v in fleet if v.available),
        key=lambda t: (t[0], t[1]),
    )
    best = None
    for lb, vid, v in order:
        if best is not None and lb > best.marginal:
            break
        d = best_insertion(v, request, now, params, energy)
        if d is None:
            continue
        if best is None or d.marginal < best.marginal or (d.marginal == best.marginal and vid < best.vehicle):
            best = d
    return best
