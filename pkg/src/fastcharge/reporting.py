"""CO2 arithmetic and policy comparison tables."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

GRAMS_PER_TONNE = 1e6
DEFAULT_GASOLINE_G_PER_KM = 147.0
DEFAULT_OP_DAYS = 6 * 52


@dataclass(frozen=True)
class EmissionsInput:
    """Inputs of the annual CO2 estimate.

    :param km_per_vehicle_day: distance driven per vehicle per operating day
    :param gasoline_rate: tailpipe emissions of the replaced vehicle, g CO2/km
    :param kwh_per_day: fleet charging energy per day
    :param grid_intensity: g CO2eq per kWh of generation
    """

    km_per_vehicle_day: float = 0.0
    fleet_size: int = 0
    op_days_per_year: int = DEFAULT_OP_DAYS
    gasoline_rate: float = DEFAULT_GASOLINE_G_PER_KM
    kwh_per_day: float = 0.0
    grid_intensity: float = 500.0

    def __post_init__(self):
        bad = [k for k, v in asdict(self).items() if v < 0]
        if bad:
            raise ValueError(f"emissions inputs must be non-negative: {bad}")


def annual_co2_savings(inp: EmissionsInput) -> float:
    """Tailpipe CO2 avoided per year by electrifying the fleet, in tonnes."""
    return inp.km_per_vehicle_day * inp.fleet_size * inp.op_days_per_year * inp.gasoline_rate / GRAMS_PER_TONNE


def generation_emissions(kwh_per_day: float, grid_intensity: float, op_days: int = DEFAULT_OP_DAYS) -> float:
    """CO2 from producing the charged electricity per year, in tonnes."""
    if min(kwh_per_day, grid_intensity, op_days) < 0:
        raise ValueError("inputs must be non-negative")
    return kwh_per_day * op_days * grid_intensity / GRAMS_PER_TONNE


def emissions_report(inp: EmissionsInput) -> dict:
    return {
        "inputs": asdict(inp),
        "annual_savings_t": annual_co2_savings(inp),
        "generation_t": generation_emissions(inp.kwh_per_day, inp.grid_intensity, inp.op_days_per_year),
    }


COLUMNS = (
    "policy",
    "charge_wait_min",
    "charge_wait_sd",
    "charge_time_min",
    "charge_time_sd",
    "wait_plus_charge_min",
    "wait_plus_charge_sd",
    "fleet_wait_hours",
    "mwt",
    "mjt",
    "served_rate",
    "n_runs",
)


class ComparisonError(ValueError):
    """Reports that cannot be compared (different scenarios or demand)."""


def _row(policy: str, reports: Sequence) -> dict:
    waits = np.array([s.wait for r in reports for s in r.sessions])
    charges = np.array([s.charge for r in reports for s in r.sessions])

    def ms(x):
        return (float(x.mean()), float(x.std())) if x.size else (0.0, 0.0)

    w, c, wc = ms(waits), ms(charges), ms(waits + charges)
    return {
        "policy": policy,
        "charge_wait_min": w[0],
        "charge_wait_sd": w[1],
        "charge_time_min": c[0],
        "charge_time_sd": c[1],
        "wait_plus_charge_min": wc[0],
        "wait_plus_charge_sd": wc[1],
        "fleet_wait_hours": float(np.mean([r.total_fleet_wait_hours for r in reports])),
        "mwt": float(np.mean([r.mwt for r in reports])),
        "mjt": float(np.mean([r.mjt for r in reports])),
        "served_rate": float(np.mean([r.served_rate for r in reports])),
        "n_runs": len(reports),
    }


def _fingerprint(report) -> tuple:
    return (report.seed, len(report.requests), len(report.vehicles))


def compare_policies(reports: Mapping[str, object]) -> list[dict]:
    """One row per policy in the layout of a policy comparison table.

    Values may be a single report or a list of reports (one per seed);
    per-recharge means and SDs pool all sessions, the other columns
    average over runs.

    :raises ComparisonError: if the policies were run on different seeds,
        demand sizes or fleets
    """
    rows = []
    ref = None
    for policy, reps in reports.items():
        reps = list(reps) if isinstance(reps, (list, tuple)) else [reps]
        fp = [_fingerprint(r) for r in reps]
        if ref is None:
            ref = fp
        elif fp != ref:
            raise ComparisonError(f"policy {policy!r} was run on different inputs: {fp} vs {ref}")
        rows.append(_row(policy, reps))
    return rows


def format_table(rows: Sequence[dict], columns: Sequence[str] = COLUMNS) -> str:
    """Aligned text table; floats rounded to one decimal (rates to three)."""

    def fmt(col, v):
        if isinstance(v, float):
            return f"{v:.3f}" if col == "served_rate" else f"{v:.1f}"
        return str(v)

    cells = [list(columns)] + [[fmt(c, r[c]) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    return "\n".join("  ".join(x.rjust(w) for x, w in zip(row, widths)) for row in cells) + "\n"


def format_csv(rows: Sequence[dict], columns: Sequence[str] = COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def format_rows(rows: Sequence[dict], fmt: str) -> str:
    if fmt == "table":
        return format_table(rows)
    if fmt == "csv":
        return format_csv(rows)
    if fmt == "json":
        return json.dumps(list(rows), indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown format {fmt!r}")
