"""Scenario (JSON) and demand (CSV) files."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .model import (
    ChargerLayout,
    Depot,
    FleetParams,
    Request,
    Scenario,
    ScenarioError,
    Site,
    ValidationError,
    layout_violations,
)

DEMAND_HEADER = ["id", "arrival_min", "ox_km", "oy_km", "dx_km", "dy_km", "passengers"]
FLEET_FIELDS = {f.name for f in dataclasses.fields(FleetParams)}


def _field(obj: dict, key: str, where: str, kind=float, default: Any = ...):
    if key not in obj:
        if default is ...:
            raise ScenarioError(f"{where}.{key}: missing field")
        return default
    try:
        return kind(obj[key])
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}.{key}: {exc}") from None


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario: top level must be an object")
    raw_sites = data.get("sites")
    if not isinstance(raw_sites, list) or not raw_sites:
        raise ScenarioError("sites: expected a non-empty list")
    sites = []
    for i, s in enumerate(raw_sites):
        where = f"sites[{i}]"
        sites.append(
            Site(
                id=_field(s, "id", where, str),
                coord=(_field(s, "x_km", where), _field(s, "y_km", where)),
                existing_slow_chargers=_field(s, "slow_chargers", where, int, 0),
                fast_charger_cap=_field(s, "fast_cap", where, int, 0),
            )
        )
    ids = [s.id for s in sites]
    if len(set(ids)) != len(ids):
        raise ScenarioError("sites: duplicate site ids")
    known = set(ids)
    depots = []
    for i, d in enumerate(data.get("depots", [])):
        where = f"depots[{i}]"
        sid = _field(d, "site", where, str)
        if sid not in known:
            raise ScenarioError(f"{where}.site: unknown site id {sid!r}")
        n = _field(d, "vehicles", where, int)
        if n < 0:
            raise ValidationError([f"{where}.vehicles must be >= 0"])
        depots.append(Depot(sid, n))

    fleet_raw = dict(data.get("fleet", {}))
    unknown = sorted(set(fleet_raw) - FLEET_FIELDS)
    if unknown:
        raise ScenarioError(f"fleet: unknown fields {unknown}")
    if "horizon" in fleet_raw:
        fleet_raw["horizon"] = tuple(fleet_raw["horizon"])
    fleet = FleetParams(**fleet_raw)

    layout_raw = data.get("layout", {})
    if not isinstance(layout_raw, dict):
        raise ScenarioError("layout: expected an object mapping site id to count")
    layout = ChargerLayout({str(k): v for k, v in layout_raw.items()})
    total = data.get("fast_total")
    scenario = Scenario(tuple(sites), tuple(depots), fleet, layout, None if total is None else int(total))
    # an empty layout with a positive fast_total means "to be placed"
    problems = layout_violations(layout, sites, scenario.total_fast) if layout.counts else []
    if problems:
        raise ValidationError(problems)
    return scenario


def scenario_to_dict(scenario: Scenario) -> dict:
    fleet = dataclasses.asdict(scenario.fleet)
    fleet["horizon"] = list(fleet["horizon"])
    out: dict[str, Any] = {
        "sites": [
            {
                "id": s.id,
                "x_km": s.coord[0],
                "y_km": s.coord[1],
                "slow_chargers": s.existing_slow_chargers,
                "fast_cap": s.fast_charger_cap,
            }
            for s in scenario.sites
        ],
        "depots": [{"site": d.site, "vehicles": d.vehicles} for d in scenario.depots],
        "fleet": fleet,
        "layout": dict(sorted(scenario.layout.counts.items())),
    }
    if scenario.fast_total is not None:
        out["fast_total"] = scenario.fast_total
    return out


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file.

    :raises ScenarioError: on unparsable JSON (with line and column) or bad fields
    :raises ValidationError: when parameters or the layout violate invariants
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


def load_demand(path: str | Path) -> list[Request]:
    """Read a demand CSV; lines starting with ``#`` are ignored."""
    path = Path(path)
    with path.open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    missing = set(DEMAND_HEADER) - set(reader.fieldnames or [])
    if missing:
        raise ScenarioError(f"{path}: missing columns {sorted(missing)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            out.append(
                Request(
                    int(row["id"]),
                    float(row["arrival_min"]),
                    (float(row["ox_km"]), float(row["oy_km"])),
                    (float(row["dx_km"]), float(row["dy_km"])),
                    int(row["passengers"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{path}: data row {lineno}: {exc}") from None
    for r in out:
        if r.origin == r.destination:
            raise ValidationError([f"request {r.id}: origin equals destination"])
        if r.passengers < 1:
            raise ValidationError([f"request {r.id}: passengers must be >= 1"])
    out.sort(key=lambda r: (r.arrival, r.id))
    return out


def demand_to_csv(requests: Iterable[Request], header_lines: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DEMAND_HEADER)
    for r in requests:
        w.writerow([r.id, repr(r.arrival), repr(r.origin[0]), repr(r.origin[1]),
                    repr(r.destination[0]), repr(r.destination[1]), r.passengers])
    return buf.getvalue()


def synthetic_scenario(
    n_sites: int = 30,
    n_depots: int = 13,
    n_vehicles: int = 50,
    slow_per_site: int = 2,
    fast_cap: int = 2,
    fast_total: int = 10,
    region: tuple[float, float, float, float] = (0.0, 0.0, 57.0, 82.0),
    seed: int = 0,
    fleet: FleetParams | None = None,
) -> Scenario:
    """Random candidate sites in ``region`` with depots on the first sites.

    The layout is left empty; the total number of fast chargers to place is
    recorded as ``fast_total``.
    """
    if n_depots > n_sites:
        raise ValueError("need at least as many sites as depots")
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = region
    xs = rng.uniform(x0, x1, n_sites)
    ys = rng.uniform(y0, y1, n_sites)
    sites = tuple(
        Site(f"S{i:03d}", (float(x), float(y)), slow_per_site, fast_cap)
        for i, (x, y) in enumerate(zip(xs, ys))
    )
    per, extra = divmod(n_vehicles, n_depots) if n_depots else (0, 0)
    depots = tuple(Depot(sites[i].id, per + (1 if i < extra else 0)) for i in range(n_depots))
    return Scenario(sites, depots, fleet or FleetParams(), ChargerLayout(), fast_total)
