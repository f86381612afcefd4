"""Discrete-event simulation of one service day.

Vehicles start at their depots with ``initial_soc``. Requests are inserted
into tours as they arrive; a vehicle whose SoC drops below the recharge
threshold at a stop is flagged, stops accepting customers, finishes its
committed stops and then charges according to the selected policy.
Energy is booked when a leg is completed.

Every state change is written to an event log with the columns
``time, kind, vehicle, request, charger, soc`` so that the report can be
recomputed independently (see :mod:`fastcharge.audit`).
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .assignment import solution_csv
from .demand import generate_demand
from .dispatch import DROPOFF, PICKUP, EnergyOracle, Stop, Tour, VehicleView, dispatch_request
from .model import (
    ChargerLayout,
    DemandProfile,
    FleetParams,
    Point,
    Request,
    Scenario,
    ValidationError,
    build_chargers,
    travel,
    validate_layout,
)
from .policies import (
    ChargerState,
    EpochClock,
    PendingVehicle,
    Policy,
    StrandedVehicle,
    arrival_soc,
    epoch_assign,
    fcfs_select,
    flag_low_battery,
    ncp_select,
    reroute_select,
)

LOG = logging.getLogger(__name__)

IDLE, SERVING, TO_CHARGER, QUEUED, CHARGING, DEFERRED = (
    "idle", "serving", "to_charger", "queued", "charging", "deferred",
)

# lower value runs first among simultaneous events
_PRIORITY = {"epoch_tick": 0, "charge_done": 1, "stop_reached": 2, "charger_reached": 2, "request_arrival": 3}

EVENT_COLUMNS = ("time", "kind", "vehicle", "request", "charger", "soc")


class SimulationAbort(RuntimeError):
    """A model invariant broke during the run (for example a vehicle ran flat)."""


@dataclass(frozen=True)
class DemandSpec:
    """Demand drawn inside :func:`run_simulation` from the run seed."""

    profile: DemandProfile
    n: int


@dataclass
class Leg:
    origin: Point
    target: Point
    depart: float
    arrive: float
    km: float
    stop: Stop | None = None
    charger: int | None = None


@dataclass
class VehicleState:
    id: int
    location: Point
    soc: float
    depot: str
    depot_point: Point
    status: str = IDLE
    tour: Tour = field(default_factory=Tour)
    leg: Leg | None = None
    onboard: int = 0
    flagged: bool = False
    plan: tuple[int, float] | None = None
    pending_since: float | None = None
    queued_since: float = 0.0
    session_start: float = 0.0
    access: float = 0.0
    charging: float = 0.0
    waiting: float = 0.0
    pending_idle: float = 0.0
    km_driven: float = 0.0
    n_charges: int = 0
    kwh_charged: float = 0.0


@dataclass
class VehicleMetrics:
    id: int
    access: float
    charging: float
    waiting: float
    km_driven: float
    n_charges: int
    kwh_charged: float
    pending_idle: float


@dataclass
class RequestMetrics:
    id: int
    served: bool
    waited: float | None
    journey: float | None


@dataclass
class SessionRecord:
    vehicle: int
    charger: int
    kind: str
    access: float
    wait: float
    charge: float
    kwh: float


@dataclass
class PlanRecord:
    time: float
    vehicle: int
    charger: int
    travel: float
    charge: float
    wait: float


@dataclass
class MetricsReport:
    policy: str
    seed: int
    vehicles: list[VehicleMetrics]
    requests: list[RequestMetrics]
    sessions: list[SessionRecord]
    plans: list[PlanRecord]
    Z: float
    mwt: float
    mjt: float
    served_rate: float
    total_fleet_wait_hours: float
    n_reroutes: int = 0
    n_stranded: int = 0
    unresolved_flags: int = 0
    events: list[tuple] = field(default_factory=list, repr=False, compare=False)
    assignment_dumps: list[tuple[float, str]] = field(default_factory=list, repr=False, compare=False)

    @property
    def n_recharges(self) -> int:
        return len(self.sessions)

    @property
    def kwh_charged(self) -> float:
        return sum(v.kwh_charged for v in self.vehicles)

    @property
    def km_driven(self) -> float:
        return sum(v.km_driven for v in self.vehicles)

    def per_recharge(self, attr: str) -> tuple[float, float]:
        """Mean and standard deviation of a session attribute (0, 0 without sessions)."""
        xs = np.array([getattr(s, attr) if attr != "wait+charge" else s.wait + s.charge for s in self.sessions])
        if xs.size == 0:
            return 0.0, 0.0
        return float(xs.mean()), float(xs.std())

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("events")
        d.pop("assignment_dumps")
        d["n_recharges"] = self.n_recharges
        d["kwh_charged"] = self.kwh_charged
        d["km_driven"] = self.km_driven
        return d

    def to_json(self, extra: dict | None = None) -> str:
        d = self.to_dict()
        if extra:
            d = {"config": extra, **d}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for row in self.events:
            w.writerow(["" if x is None else (repr(x) if isinstance(x, float) else x) for x in row])
        return buf.getvalue()


def objective(report: MetricsReport) -> float:
    """Total fleet charging idle time: access + charging + queueing, in minutes."""
    return float(sum(v.access + v.charging + v.waiting for v in report.vehicles))


def charger_queue_step(state: ChargerState, vehicle: int, soc: float, now: float, e_max: float) -> float | None:
    """Register an arrival at a charger.

    Starts a session right away when the charger is free and returns its
    length in minutes; otherwise appends the vehicle to the FIFO queue and
    returns ``None``.
    """
    duration = max(0.0, e_max - soc) / state.charger.power
    if state.current is None and not state.queue:
        state.current = vehicle
        state.session_end = now + duration
        return duration
    state.queue.append((vehicle, duration))
    return None


def _interp(a: Point, b: Point, f: float) -> Point:
    return (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]))


class Simulation:
    """Mutable world state for one run; use :func:`run_simulation`."""

    def __init__(self, scenario: Scenario, layout: ChargerLayout, requests: Sequence[Request],
                 policy: Policy, seed: int = 0, keep_assignments: bool = False):
        self.params = p = scenario.fleet
        self.keep_assignments = keep_assignments
        self.assignment_dumps: list[tuple[float, str]] = []
        self.policy = Policy(policy)
        self.seed = seed
        self.requests = {r.id: r for r in requests}
        self.chargers = [ChargerState(c) for c in build_chargers(scenario, layout)]
        sites = scenario.site_index
        self.energy = EnergyOracle([c.charger.coord for c in self.chargers], p,
                                   [sites[d.site].coord for d in scenario.depots])
        self.vehicles: list[VehicleState] = []
        for d in scenario.depots:
            pt = sites[d.site].coord
            for _ in range(d.vehicles):
                self.vehicles.append(VehicleState(len(self.vehicles), pt, p.initial_soc, d.site, pt))
        self.clock = EpochClock(p.horizon[0], p.epoch_len)
        self.end = p.horizon[1]
        self.now = p.horizon[0]
        self._heap: list = []
        self._seq = 0
        self.events: list[tuple] = []
        self.pickup: dict[int, float] = {}
        self.dropoff: dict[int, float] = {}
        self.rejected: set[int] = set()
        self.sessions: list[SessionRecord] = []
        self.plans: list[PlanRecord] = []
        self.deferred: list[int] = []
        self.new_flags: list[int] = []
        self.n_reroutes = 0
        self.n_stranded = 0
        self._trip_access: dict[int, float] = {}

    # -- event plumbing -------------------------------------------------
    def _push(self, t: float, kind: str, entity: int, payload=None):
        self._seq += 1
        heapq.heappush(self._heap, (t, _PRIORITY[kind], entity, self._seq, kind, payload))

    def _log(self, kind, vehicle=None, request=None, charger=None, soc=None):
        self.events.append((self.now, kind, vehicle, request, charger, soc))

    def run(self) -> MetricsReport:
        for r in sorted(self.requests.values(), key=lambda r: (r.arrival, r.id)):
            self._push(r.arrival, "request_arrival", r.id)
        if self.policy.batched:
            for h, t in enumerate(self.clock.ticks(self.end), start=1):
                self._push(t, "epoch_tick", h)
        while self._heap:
            t, _, entity, _, kind, payload = heapq.heappop(self._heap)
            self.now = t
            getattr(self, "_on_" + kind)(entity, payload)
        return self._report()

    # -- dispatch -------------------------------------------------------
    def _available(self, v: VehicleState) -> bool:
        return not v.flagged and v.plan is None and v.status in (IDLE, SERVING)

    def _view(self, v: VehicleState) -> VehicleView:
        mu = self.params.efficiency
        if v.leg is not None and v.leg.stop is not None:
            return VehicleView(v.id, v.leg.target, v.leg.arrive, v.soc - mu * v.leg.km,
                               v.onboard + v.leg.stop.load_change, v.tour, v.depot_point)
        return VehicleView(v.id, v.location, self.now, v.soc, v.onboard, v.tour, v.depot_point)

    def _on_request_arrival(self, rid: int, _):
        r = self.requests[rid]
        self._log("request_arrival", request=rid)
        fleet = [self._view(v) for v in self.vehicles if self._available(v)]
        decision = dispatch_request(r, fleet, self.params, self.energy, self.now)
        if decision is None:
            self.rejected.add(rid)
            self._log("rejected", request=rid)
            return
        v = self.vehicles[decision.vehicle]
        v.tour = decision.tour
        self._log("dispatch", vehicle=v.id, request=rid)
        if v.leg is None:
            self._next_leg(v)

    # -- movement -------------------------------------------------------
    def _start_leg(self, v: VehicleState, target: Point, stop=None, charger=None):
        minutes, km = travel(v.location, target, self.params)
        v.leg = Leg(v.location, target, self.now, self.now + minutes, km, stop, charger)
        kind = "stop_reached" if charger is None else "charger_reached"
        self._push(v.leg.arrive, kind, v.id)

    def _next_leg(self, v: VehicleState):
        if v.tour.stops:
            stop = v.tour.stops[0]
            v.tour = Tour(v.tour.stops[1:])
            v.status = SERVING
            self._start_leg(v, stop.location, stop=stop)
        else:
            v.status = IDLE
            self._on_free(v)

    def _complete_leg(self, v: VehicleState) -> Leg:
        leg = v.leg
        v.soc -= self.params.efficiency * leg.km
        v.km_driven += leg.km
        v.location = leg.target
        v.leg = None
        if v.soc <= 0:
            raise SimulationAbort(f"vehicle {v.id} ran flat at t={self.now:.2f} (soc {v.soc:.4f} kWh)")
        return leg

    def _on_stop_reached(self, vid: int, _):
        v = self.vehicles[vid]
        stop = self._complete_leg(v).stop
        v.onboard += stop.load_change
        if stop.kind == PICKUP:
            self.pickup[stop.ref] = self.now
        elif stop.kind == DROPOFF:
            self.dropoff[stop.ref] = self.now
        self._log(stop.kind, vehicle=vid, request=stop.ref, soc=v.soc)
        if flag_low_battery(v, self.params):
            v.flagged = True
            self._log("flag", vehicle=vid, soc=v.soc)
            if self.policy.batched:
                self.new_flags.append(vid)
        self._next_leg(v)

    # -- charging -------------------------------------------------------
    def _on_free(self, v: VehicleState):
        """The vehicle has no stops left; send it charging if it should go."""
        if not v.flagged:
            return
        if v.plan is not None:
            self._depart(v, v.plan[0])
        elif not self.policy.batched:
            if self.now < self.end:
                try:
                    if self.policy is Policy.NCP:
                        cid = ncp_select(v.location, v.soc, self.chargers, self.params)
                    else:
                        cid = fcfs_select(v.location, v.soc, self.chargers, self.now, self.params)
                except StrandedVehicle:
                    cid = self._stranded(v)
                self._depart(v, cid)
        else:
            v.pending_since = self.now
            if v.id in self.deferred:
                v.status = DEFERRED

    def _stranded(self, v: VehicleState) -> int:
        self.n_stranded += 1
        self._log("stranded", vehicle=v.id, soc=v.soc)
        LOG.warning("vehicle %d stranded at t=%.1f with soc %.3f", v.id, self.now, v.soc)
        return min(self.chargers, key=lambda c: (travel(v.location, c.charger.coord, self.params)[0], c.id)).id

    def _depart(self, v: VehicleState, cid: int):
        p = self.params
        if arrival_soc(v.soc, v.location, self.chargers[cid].charger.coord, p) < p.e_min:
            try:
                new = reroute_select(v.location, v.soc, self.chargers, self.now, p)
            except StrandedVehicle:
                new = self._stranded(v)
            if new != cid:
                self.n_reroutes += 1
                self._log("reroute", vehicle=v.id, charger=new, soc=v.soc)
            self.chargers[cid].reserved.discard(v.id)
            cid = new
        state = self.chargers[cid]
        state.reserved.discard(v.id)
        if v.pending_since is not None:
            v.pending_idle += self.now - v.pending_since
            v.pending_since = None
        if v.id in self.deferred:
            self.deferred.remove(v.id)
        e_arr = arrival_soc(v.soc, v.location, state.charger.coord, p)
        state.en_route[v.id] = max(0.0, p.e_max - e_arr) / state.charger.power
        v.status = TO_CHARGER
        v.plan = (cid, self.now)
        self._log("depart_charger", vehicle=v.id, charger=cid, soc=v.soc)
        self._start_leg(v, state.charger.coord, charger=cid)

    def _on_charger_reached(self, vid: int, _):
        v = self.vehicles[vid]
        leg = self._complete_leg(v)
        cid = leg.charger
        state = self.chargers[cid]
        state.en_route.pop(vid, None)
        access = self.now - leg.depart
        v.access += access
        self._trip_access[vid] = access
        self._log("arrive_charger", vehicle=vid, charger=cid, soc=v.soc)
        v.queued_since = self.now
        duration = charger_queue_step(state, vid, v.soc, self.now, self.params.e_max)
        if duration is None:
            v.status = QUEUED
        else:
            self._begin_session(v, state, duration)

    def _begin_session(self, v: VehicleState, state: ChargerState, duration: float):
        v.waiting += self.now - v.queued_since
        v.status = CHARGING
        v.session_start = self.now
        state.current = v.id
        state.session_end = self.now + duration
        self._log("charge_start", vehicle=v.id, charger=state.id, soc=v.soc)
        self._push(state.session_end, "charge_done", v.id, state.id)

    def _on_charge_done(self, vid: int, cid: int):
        v = self.vehicles[vid]
        state = self.chargers[cid]
        p = self.params
        duration = self.now - v.session_start
        kwh = max(0.0, p.e_max - v.soc)
        v.charging += duration
        v.kwh_charged += kwh
        v.n_charges += 1
        self.sessions.append(SessionRecord(
            vid, cid, state.charger.kind, self._trip_access.pop(vid, 0.0),
            v.session_start - v.queued_since, duration, kwh,
        ))
        v.soc = p.e_max
        v.flagged = False
        v.plan = None
        v.status = IDLE
        state.current = None
        self._log("charge_done", vehicle=vid, charger=cid, soc=v.soc)
        if state.queue:
            nxt, dur = state.queue.popleft()
            self._begin_session(self.vehicles[nxt], state, dur)

    # -- epochs ---------------------------------------------------------
    def _pending_view(self, v: VehicleState) -> PendingVehicle:
        """Position at the epoch boundary and the SoC expected once the tour is done."""
        mu = self.params.efficiency
        if v.leg is None:
            return PendingVehicle(v.id, v.location, v.soc, self.now)
        leg = v.leg
        span = leg.arrive - leg.depart
        f = 1.0 if span <= 0 else min(1.0, max(0.0, (self.now - leg.depart) / span))
        pos = _interp(leg.origin, leg.target, f)
        km, t, at = leg.km, leg.arrive, leg.target
        for s in v.tour.stops:
            m, d = travel(at, s.location, self.params)
            km, t, at = km + d, t + m, s.location
        return PendingVehicle(v.id, pos, max(0.0, v.soc - mu * km), t)

    def _on_epoch_tick(self, h: int, _):
        self._log("epoch_tick")
        pending = [self.vehicles[i] for i in self.deferred] + [self.vehicles[i] for i in self.new_flags]
        self.new_flags = []
        if not pending:
            return
        plan = epoch_assign([self._pending_view(v) for v in pending], self.chargers, self.policy,
                            self.now, self.params)
        if self.keep_assignments:
            self.assignment_dumps.append((self.now, solution_csv(plan.instance, plan.solution)))
        for vid in sorted(plan.plan):
            cid, dep = plan.plan[vid]
            arc = plan.solution.per_pair[vid]
            self.plans.append(PlanRecord(self.now, vid, cid, arc.travel, arc.charge, arc.wait))
            v = self.vehicles[vid]
            v.plan = (cid, dep)
            self.chargers[cid].reserved.add(vid)
            self._log("plan", vehicle=vid, charger=cid, soc=v.soc)
        self.deferred = list(plan.deferred)
        for vid in self.deferred:
            v = self.vehicles[vid]
            self._log("defer", vehicle=vid, soc=v.soc)
            if v.leg is None and v.status == IDLE:
                v.status = DEFERRED
        for vid in sorted(plan.plan):
            v = self.vehicles[vid]
            if v.leg is None and not v.tour.stops:
                self._depart(v, v.plan[0])

    # -- results --------------------------------------------------------
    def _report(self) -> MetricsReport:
        for v in self.vehicles:
            if v.pending_since is not None:
                v.pending_idle += max(self.now, self.end) - v.pending_since
                v.pending_since = None
        vehicles = [
            VehicleMetrics(v.id, v.access, v.charging, v.waiting, v.km_driven, v.n_charges, v.kwh_charged,
                           v.pending_idle)
            for v in self.vehicles
        ]
        reqs = []
        for rid in sorted(self.requests):
            r = self.requests[rid]
            if rid in self.dropoff:
                reqs.append(RequestMetrics(rid, True, self.pickup[rid] - r.arrival, self.dropoff[rid] - r.arrival))
            else:
                reqs.append(RequestMetrics(rid, False, None, None))
        served = [r for r in reqs if r.served]
        unresolved = sum(1 for v in self.vehicles if v.flagged)
        report = MetricsReport(
            policy=self.policy.value,
            seed=self.seed,
            vehicles=vehicles,
            requests=reqs,
            sessions=self.sessions,
            plans=self.plans,
            Z=0.0,
            mwt=float(np.mean([r.waited for r in served])) if served else 0.0,
            mjt=float(np.mean([r.journey for r in served])) if served else 0.0,
            served_rate=len(served) / len(reqs) if reqs else 1.0,
            total_fleet_wait_hours=sum(v.waiting for v in vehicles) / 60.0,
            n_reroutes=self.n_reroutes,
            n_stranded=self.n_stranded,
            unresolved_flags=unresolved,
            events=self.events,
            assignment_dumps=self.assignment_dumps,
        )
        report.Z = objective(report)
        return report


def _check_requests(requests: Sequence[Request], params: FleetParams) -> None:
    start, end = params.horizon
    problems = []
    seen = set()
    for r in requests:
        if r.id in seen:
            problems.append(f"request {r.id}: duplicate id")
        seen.add(r.id)
        if not start <= r.arrival < end:
            problems.append(f"request {r.id}: arrival {r.arrival} outside horizon [{start}, {end})")
        if r.passengers < 1 or r.passengers > params.capacity:
            problems.append(f"request {r.id}: passengers must lie in [1, {params.capacity}]")
        if r.origin == r.destination:
            problems.append(f"request {r.id}: origin equals destination")
    if problems:
        raise ValidationError(problems)


def run_simulation(scenario: Scenario, layout: ChargerLayout | None, demand, policy: Policy | str,
                   seed: int = 0, keep_assignments: bool = False) -> MetricsReport:
    """Simulate one service day.

    :param scenario: sites, depots and fleet parameters
    :param layout: fast-charger layout; ``None`` uses ``scenario.layout``
    :param demand: a request sequence, or a :class:`DemandSpec` drawn with ``seed``
    :param policy: ``ncp``, ``fcfs``, ``ocp`` or ``ocp-a``
    :param seed: recorded in the report and used to draw demand from a spec
    :param keep_assignments: keep a CSV dump of every epoch's assignment
    :raises ValidationError: for an infeasible layout or malformed requests
    :raises SimulationAbort: if a vehicle runs out of energy
    """
    layout = scenario.layout if layout is None else layout
    validate_layout(layout, scenario.sites, scenario.total_fast if scenario.fast_total is not None else layout.total)
    if isinstance(demand, DemandSpec):
        demand = generate_demand(demand.profile, demand.n, seed, scenario.fleet)
    requests = list(demand)
    _check_requests(requests, scenario.fleet)
    return Simulation(scenario, layout, requests, Policy(policy), seed, keep_assignments).run()
