"""Charging-management policies.

``ncp`` and ``fcfs`` decide per vehicle as soon as a flagged vehicle is free
to leave; ``ocp`` and ``ocp-a`` batch flagged vehicles and solve one
assignment problem at every epoch boundary.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .assignment import AssignmentInstance, AssignmentSolution, ChargerSpec, VehicleSpec, solve_exact
from .model import Charger, FleetParams, Point, travel


class Policy(str, Enum):
    NCP = "ncp"
    FCFS = "fcfs"
    OCP = "ocp"
    OCP_A = "ocp-a"

    @property
    def batched(self) -> bool:
        return self in (Policy.OCP, Policy.OCP_A)


class StrandedVehicle(RuntimeError):
    """No charger can be reached with at least ``e_min`` left."""


@dataclass(frozen=True)
class EpochClock:
    t0: float
    delta: float
    index: int = 0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("epoch length must be > 0")

    def start(self, h: int) -> float:
        return self.t0 + h * self.delta

    def epoch_of(self, t: float) -> int:
        return int(math.floor((t - self.t0) / self.delta))

    def ticks(self, end: float) -> list[float]:
        """Epoch boundaries strictly after ``t0`` and strictly before ``end``."""
        out, h = [], 1
        while self.start(h) < end:
            out.append(self.start(h))
            h += 1
        return out


@dataclass
class ChargerState:
    """Mutable occupancy of one charger.

    ``queue`` and ``en_route`` hold ``(vehicle, planned session minutes)``;
    ``reserved`` holds vehicles with a plan that have not departed yet.
    """

    charger: Charger
    current: int | None = None
    session_end: float = 0.0
    queue: deque = field(default_factory=deque)
    en_route: dict = field(default_factory=dict)
    reserved: set = field(default_factory=set)

    @property
    def id(self) -> int:
        return self.charger.id

    @property
    def occupied(self) -> bool:
        """Physically in use: a session running or vehicles queued."""
        return self.current is not None or bool(self.queue)


def charger_availability(state: ChargerState, now: float) -> float:
    """Minutes until the charger is expected to be free (``t_A``).

    Counts the running session, vehicles queued on site and vehicles
    already driving there. Vehicles holding a plan but not yet departed
    are ignored, which can underestimate the true availability.
    """
    t = max(0.0, state.session_end - now) if state.current is not None else 0.0
    t += sum(d for _, d in state.queue)
    t += sum(state.en_route.values())
    return t


def flag_low_battery(vehicle, params: FleetParams) -> bool:
    """True iff SoC is strictly below the recharge threshold and the vehicle
    is not already flagged or charging."""
    if getattr(vehicle, "flagged", False):
        return False
    if getattr(vehicle, "status", "idle") in ("to_charger", "queued", "charging"):
        return False
    return vehicle.soc < params.recharge_threshold


def arrival_soc(soc: float, a: Point, b: Point, params: FleetParams) -> float:
    return soc - params.efficiency * travel(a, b, params)[1]


def _feasible(location: Point, soc: float, chargers: Iterable[ChargerState], params: FleetParams):
    for c in chargers:
        if arrival_soc(soc, location, c.charger.coord, params) >= params.e_min:
            yield c


def ncp_select(location: Point, soc: float, chargers: Sequence[ChargerState], params: FleetParams) -> int:
    """Nearest unoccupied reachable charger; nearest reachable one if all are busy.

    :raises StrandedVehicle: if no charger is reachable above ``e_min``
    """
    feas = list(_feasible(location, soc, chargers, params))
    if not feas:
        raise StrandedVehicle(f"no reachable charger from {location} with soc {soc:.3f}")
    key = lambda c: (travel(location, c.charger.coord, params)[0], c.id)  # noqa: E731
    free = [c for c in feas if not c.occupied]
    return min(free or feas, key=key).id


def fcfs_estimate(location: Point, soc: float, state: ChargerState, now: float, params: FleetParams) -> float:
    t, _ = travel(location, state.charger.coord, params)
    e_arr = arrival_soc(soc, location, state.charger.coord, params)
    wait = max(0.0, charger_availability(state, now) - t)
    return t + max(0.0, params.e_max - e_arr) / state.charger.power + wait


def fcfs_select(location: Point, soc: float, chargers: Sequence[ChargerState], now: float,
                params: FleetParams) -> int:
    """Charger with the lowest estimated travel + charge + wait time.

    :raises StrandedVehicle: if no charger is reachable above ``e_min``
    """
    feas = list(_feasible(location, soc, chargers, params))
    if not feas:
        raise StrandedVehicle(f"no reachable charger from {location} with soc {soc:.3f}")
    return min(feas, key=lambda c: (fcfs_estimate(location, soc, c, now, params), c.id)).id


def reroute_select(location: Point, soc: float, chargers: Sequence[ChargerState], now: float,
                   params: FleetParams) -> int:
    """Replacement for a planned charger that has become unreachable.

    Prefers the nearest reachable charger that is idle with nobody queued,
    driving there or holding a plan; otherwise falls back to :func:`fcfs_select`.
    """
    feas = list(_feasible(location, soc, chargers, params))
    if not feas:
        raise StrandedVehicle(f"no reachable charger from {location} with soc {soc:.3f}")
    free = [c for c in feas if not c.occupied and not c.en_route and not c.reserved]
    if free:
        return min(free, key=lambda c: (travel(location, c.charger.coord, params)[0], c.id)).id
    return fcfs_select(location, soc, feas, now, params)


@dataclass(frozen=True)
class PendingVehicle:
    id: int
    location: Point
    soc: float
    ready_at: float


@dataclass
class EpochPlan:
    plan: dict  # vehicle id -> (charger id, planned departure)
    deferred: list
    instance: AssignmentInstance
    solution: AssignmentSolution


def epoch_assign(pending: Sequence[PendingVehicle], chargers: Sequence[ChargerState], mode: Policy,
                 now: float, params: FleetParams) -> EpochPlan:
    """Solve one epoch's vehicle-charger assignment.

    ``ocp`` offers every charger with its expected availability; ``ocp-a``
    offers only chargers that are idle, have no queue, nobody driving to
    them and no outstanding plan, all with zero availability.
    """
    if mode not in (Policy.OCP, Policy.OCP_A):
        raise ValueError(f"epoch assignment needs ocp or ocp-a, got {mode}")
    specs = []
    for c in chargers:
        avail = charger_availability(c, now)
        if mode is Policy.OCP_A:
            if avail > 0 or c.reserved or c.occupied:
                continue
            avail = 0.0
        specs.append(ChargerSpec(c.id, c.charger.power, avail, c.charger.coord))
    inst = AssignmentInstance(
        tuple(VehicleSpec(v.id, min(max(v.soc, 0.0), params.battery_capacity), v.location) for v in pending),
        tuple(specs),
        params,
    )
    sol = solve_exact(inst)
    ready = {v.id: v.ready_at for v in pending}
    plan = {vid: (cid, max(now, ready[vid])) for vid, cid in sol.pairs.items()}
    order = [v.id for v in pending]
    deferred = [vid for vid in order if vid in sol.deferred]
    return EpochPlan(plan, deferred, inst, sol)
