"""Scenario data model: sites, chargers, fleet parameters and layouts.

Units are fixed across the package: minutes, kilometres and kWh. Charger
power is stored in kWh per minute (a 50 kW charger is ``50 / 60``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

Point = tuple[float, float]

SLOW_POWER = 22 / 60
FAST_POWER = 50 / 60


class ScenarioError(ValueError):
    """Structural problem in scenario data (unknown ids, malformed fields)."""


class ValidationError(ValueError):
    """One or more model invariants are violated.

    :ivar violations: human readable list of the violated constraints
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Site:
    id: str
    coord: Point
    existing_slow_chargers: int = 0
    fast_charger_cap: int = 0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.coord):
            raise ValidationError([f"site {self.id}: coordinates must be finite"])
        if self.existing_slow_chargers < 0:
            raise ValidationError([f"site {self.id}: slow_chargers must be >= 0"])
        if self.fast_charger_cap < 0:
            raise ValidationError([f"site {self.id}: fast_cap must be >= 0"])


@dataclass(frozen=True)
class Charger:
    id: int
    site: str
    power: float
    kind: str
    coord: Point

    def __post_init__(self):
        if self.power <= 0:
            raise ValidationError([f"charger {self.id}: power must be > 0"])
        if self.kind not in ("slow", "fast"):
            raise ValidationError([f"charger {self.id}: kind must be slow|fast"])


@dataclass(frozen=True)
class ChargerLayout:
    """Number of fast chargers installed at each candidate site."""

    counts: Mapping[str, int] = field(default_factory=dict)

    @classmethod
    def from_vector(cls, sites: Sequence[Site], u: Iterable[int]) -> "ChargerLayout":
        u = list(u)
        if len(u) != len(sites):
            raise ScenarioError(f"layout vector has {len(u)} entries for {len(sites)} sites")
        return cls({s.id: int(k) for s, k in zip(sites, u) if int(k) != 0})

    def vector(self, sites: Sequence[Site]) -> np.ndarray:
        known = {s.id for s in sites}
        unknown = sorted(set(self.counts) - known)
        if unknown:
            raise ScenarioError(f"layout references unknown site ids: {unknown}")
        return np.array([self.counts.get(s.id, 0) for s in sites], dtype=int)

    @property
    def total(self) -> int:
        return int(sum(self.counts.values()))


@dataclass(frozen=True)
class FleetParams:
    """Fleet and charging parameters; defaults follow the Flexibus case study.

    Energy levels left as ``None`` are derived from the battery capacity
    (``e_max = 0.8B``, ``e_min = 0.1B``, recharge threshold ``0.2B``).
    ``depot_return`` selects which depot the dispatch energy check must be
    able to reach after a tour: the vehicle's ``"own"`` depot or the
    ``"nearest"`` one.
    """

    battery_capacity: float = 35.8
    efficiency: float = 35.8 / 150
    e_min: float | None = None
    e_max: float | None = None
    recharge_threshold: float | None = None
    capacity: int = 8
    speed: float = 50.0
    alpha: float = 0.5
    beta: float = 0.025
    epoch_len: float = 30.0
    horizon: tuple[float, float] = (390.0, 1320.0)
    circuity: float = 1.0
    slow_power: float = SLOW_POWER
    fast_power: float = FAST_POWER
    initial_soc: float | None = None
    rbf_gamma: float = 0.5
    depot_return: str = "nearest"

    def __post_init__(self):
        B = self.battery_capacity
        for name, frac in (("e_min", 0.1), ("e_max", 0.8), ("recharge_threshold", 0.2)):
            if getattr(self, name) is None:
                object.__setattr__(self, name, frac * B)
        if self.initial_soc is None:
            object.__setattr__(self, "initial_soc", self.e_max)
        object.__setattr__(self, "horizon", (float(self.horizon[0]), float(self.horizon[1])))
        problems = self.violations()
        if problems:
            raise ValidationError(problems)

    def violations(self) -> list[str]:
        out = []
        if not 0 <= self.e_min < self.recharge_threshold < self.e_max <= self.battery_capacity:
            out.append(
                "energy levels must satisfy 0 <= e_min < recharge_threshold < e_max <= battery_capacity "
                f"(got e_min={self.e_min}, threshold={self.recharge_threshold}, e_max={self.e_max}, "
                f"B={self.battery_capacity})"
            )
        if self.efficiency <= 0:
            out.append("efficiency must be > 0")
        if self.speed <= 0:
            out.append("speed must be > 0")
        if self.capacity < 1:
            out.append("capacity must be >= 1")
        if not 0 <= self.alpha <= 1:
            out.append("alpha must lie in [0, 1]")
        if not 0 <= self.beta <= 1:
            out.append("beta must lie in [0, 1]")
        if self.epoch_len <= 0:
            out.append("epoch_len must be > 0")
        if self.horizon[1] <= self.horizon[0]:
            out.append("horizon end must be after start")
        if self.circuity <= 0:
            out.append("circuity must be > 0")
        if self.slow_power <= 0 or self.fast_power <= 0:
            out.append("charger power must be > 0")
        if self.depot_return not in ("own", "nearest"):
            out.append("depot_return must be 'own' or 'nearest'")
        if not self.e_min <= self.initial_soc <= self.battery_capacity:
            out.append("initial_soc must lie in [e_min, battery_capacity]")
        return out


@dataclass(frozen=True)
class Request:
    id: int
    arrival: float
    origin: Point
    destination: Point
    passengers: int = 1


@dataclass(frozen=True)
class DemandProfile:
    """Temporal and spatial shape of synthetic demand.

    :param hourly_weights: 24 relative intensities indexed by clock hour
    :param trip_len_mean: mean trip length in km
    :param trip_len_var: trip length variance in km^2
    :param region: bounding box ``(xmin, ymin, xmax, ymax)`` in km
    """

    hourly_weights: tuple[float, ...]
    trip_len_mean: float = 11.9
    trip_len_var: float = 23.5
    region: tuple[float, float, float, float] = (0.0, 0.0, 57.0, 82.0)
    passengers: int = 1

    def __post_init__(self):
        w = tuple(float(x) for x in self.hourly_weights)
        object.__setattr__(self, "hourly_weights", w)
        problems = []
        if len(w) != 24:
            problems.append("hourly_weights needs 24 entries")
        if any(x < 0 for x in w) or sum(w) <= 0:
            problems.append("hourly_weights must be non-negative with a positive sum")
        if self.trip_len_mean <= 0:
            problems.append("trip_len_mean must be > 0")
        if self.trip_len_var < 0:
            problems.append("trip_len_var must be >= 0")
        x0, y0, x1, y1 = self.region
        if not (x1 > x0 and y1 > y0):
            problems.append("region must have positive extent")
        if problems:
            raise ValidationError(problems)


@dataclass(frozen=True)
class Depot:
    site: str
    vehicles: int


@dataclass(frozen=True)
class Scenario:
    sites: tuple[Site, ...]
    depots: tuple[Depot, ...]
    fleet: FleetParams = field(default_factory=FleetParams)
    layout: ChargerLayout = field(default_factory=ChargerLayout)
    fast_total: int | None = None

    @property
    def site_index(self) -> dict[str, Site]:
        return {s.id: s for s in self.sites}

    @property
    def caps(self) -> np.ndarray:
        return np.array([s.fast_charger_cap for s in self.sites], dtype=int)

    @property
    def n_vehicles(self) -> int:
        return sum(d.vehicles for d in self.depots)

    @property
    def total_fast(self) -> int:
        return self.layout.total if self.fast_total is None else self.fast_total


def travel(a: Point, b: Point, params: FleetParams) -> tuple[float, float]:
    """Return ``(minutes, km)`` between two planar points."""
    km = math.hypot(a[0] - b[0], a[1] - b[1]) * params.circuity
    return km / params.speed * 60.0, km


def layout_violations(layout: ChargerLayout, sites: Sequence[Site], total: int) -> list[str]:
    """List every constraint the layout breaks; empty when feasible.

    Unknown site ids are a structural problem and raise :class:`ScenarioError`.
    """
    index = {s.id: s for s in sites}
    unknown = sorted(set(layout.counts) - set(index))
    if unknown:
        raise ScenarioError(f"layout references unknown site ids: {unknown}")
    out = []
    for sid, k in sorted(layout.counts.items()):
        if k != int(k):
            out.append(f"integrality: site {sid} has non-integer count {k}")
        elif k < 0:
            out.append(f"non-negativity: site {sid} has {k} chargers")
        elif k > index[sid].fast_charger_cap:
            out.append(f"site cap: site {sid} has {k} > cap {index[sid].fast_charger_cap}")
    s = sum(layout.counts.values())
    if s != total:
        out.append(f"total: layout installs {s} chargers, expected {total}")
    return out


def validate_layout(layout: ChargerLayout, sites: Sequence[Site], total: int) -> None:
    """Raise :class:`ValidationError` unless the layout is feasible."""
    problems = layout_violations(layout, sites, total)
    if problems:
        raise ValidationError(problems)


def build_chargers(scenario: Scenario, layout: ChargerLayout | None = None) -> list[Charger]:
    """Expand sites and a fast-charger layout into individual chargers.

    Slow chargers come first within each site, then fast ones; ids follow
    site order, so sorting by id is deterministic.
    """
    layout = scenario.layout if layout is None else layout
    counts = layout.vector(scenario.sites)
    p = scenario.fleet
    chargers = []
    for site, n_fast in zip(scenario.sites, counts):
        for _ in range(site.existing_slow_chargers):
            chargers.append(Charger(len(chargers), site.id, p.slow_power, "slow", site.coord))
        for _ in range(int(n_fast)):
            chargers.append(Charger(len(chargers), site.id, p.fast_power, "fast", site.coord))
    return chargers
