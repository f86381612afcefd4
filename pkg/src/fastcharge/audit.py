"""Replay a simulation event log and check it against the report.

The checks here do not reuse any simulator state: everything is rebuilt
from the ``(time, kind, vehicle, request, charger, soc)`` rows.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Sequence

from .model import FleetParams, Request


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def recompute_idle_time(events: Sequence[tuple]) -> dict[int, dict[str, float]]:
    """Per-vehicle access, waiting and charging minutes from the log alone."""
    out: dict[int, dict[str, float]] = defaultdict(lambda: {"access": 0.0, "waiting": 0.0, "charging": 0.0})
    last: dict[int, tuple[str, float]] = {}
    for t, kind, v, _r, _c, _soc in events:
        if kind == "depart_charger":
            last[v] = (kind, t)
        elif kind == "arrive_charger":
            out[v]["access"] += t - last[v][1]
            last[v] = (kind, t)
        elif kind == "charge_start":
            out[v]["waiting"] += t - last[v][1]
            last[v] = (kind, t)
        elif kind == "charge_done":
            out[v]["charging"] += t - last[v][1]
            last.pop(v)
    return dict(out)


def audit_run(report, requests: Sequence[Request], params: FleetParams, tol: float = 1e-9) -> list[str]:
    """Return every invariant violation found in a finished run (empty if clean).

    Checked: request conservation and precedence, vehicle capacity, SoC
    bounds and post-charge level, charger-bound legs arriving above
    ``e_min``, non-overlapping sessions per charger, and per-vehicle idle
    time against the report.
    """
    problems: list[str] = []
    events = report.events
    by_id = {r.id: r for r in requests}

    # time order
    for a, b in zip(events, events[1:]):
        if b[0] < a[0] - tol:
            problems.append(f"events out of order at t={b[0]}")
            break

    # conservation and precedence
    picked, dropped, rejected, dispatched = {}, {}, set(), set()
    for t, kind, v, r, _c, _s in events:
        if kind == "pickup":
            if r in picked:
                problems.append(f"request {r}: picked up twice")
            picked[r] = t
        elif kind == "dropoff":
            if r in dropped:
                problems.append(f"request {r}: dropped off twice")
            if r not in picked:
                problems.append(f"request {r}: dropoff before pickup")
            dropped[r] = t
        elif kind == "rejected":
            rejected.add(r)
        elif kind == "dispatch":
            dispatched.add(r)
    if dispatched & rejected:
        problems.append(f"requests both dispatched and rejected: {sorted(dispatched & rejected)[:5]}")
    if set(dropped) != dispatched or set(picked) != dispatched:
        problems.append("dispatched requests without exactly one pickup and dropoff")
    if len(dispatched) + len(rejected) != len(requests):
        problems.append(f"served {len(dispatched)} + rejected {len(rejected)} != {len(requests)} requests")
    n_served = sum(1 for r in report.requests if r.served)
    if n_served != len(dropped):
        problems.append(f"report counts {n_served} served, log has {len(dropped)}")

    # capacity
    load: dict[int, int] = defaultdict(int)
    for _t, kind, v, r, _c, _s in events:
        if kind in ("pickup", "dropoff"):
            k = by_id[r].passengers
            load[v] += k if kind == "pickup" else -k
            if load[v] > params.capacity or load[v] < 0:
                problems.append(f"vehicle {v}: onboard {load[v]} outside [0, {params.capacity}]")

    # energy
    B = params.battery_capacity
    stranded = {v for _t, kind, v, *_ in events if kind == "stranded"}
    for t, kind, v, _r, c, soc in events:
        if soc is None:
            continue
        if not -tol <= soc <= B + tol:
            problems.append(f"vehicle {v}: soc {soc} outside [0, B] at t={t}")
        if kind == "charge_done" and not _close(soc, params.e_max, tol):
            problems.append(f"vehicle {v}: soc {soc} after charging, expected e_max")
        if kind == "arrive_charger" and soc < params.e_min - 1e-9 and v not in stranded:
            problems.append(f"vehicle {v}: reached charger {c} with soc {soc} < e_min")

    # exclusivity
    busy: dict[int, list[tuple[float, float]]] = defaultdict(list)
    start: dict[tuple[int, int], float] = {}
    for t, kind, v, _r, c, _s in events:
        if kind == "charge_start":
            start[(v, c)] = t
        elif kind == "charge_done":
            busy[c].append((start.pop((v, c)), t))
    if start:
        problems.append(f"{len(start)} charging sessions never finished")
    for c, spans in busy.items():
        spans.sort()
        for (s0, e0), (s1, _e1) in zip(spans, spans[1:]):
            if s1 < e0 - 1e-9:
                problems.append(f"charger {c}: sessions overlap ({s0}, {e0}) and starting {s1}")

    # time accounting
    idle = recompute_idle_time(events)
    Z = 0.0
    for vm in report.vehicles:
        rec = idle.get(vm.id, {"access": 0.0, "waiting": 0.0, "charging": 0.0})
        for name in ("access", "waiting", "charging"):
            if not _close(rec[name], getattr(vm, name), 1e-7):
                problems.append(f"vehicle {vm.id}: {name} {getattr(vm, name)} but log gives {rec[name]}")
        Z += rec["access"] + rec["waiting"] + rec["charging"]
    if not _close(Z, report.Z, 1e-7):
        problems.append(f"Z {report.Z} but log gives {Z}")
    for rm in report.requests:
        if rm.served and rm.journey < rm.waited - tol:
            problems.append(f"request {rm.id}: journey shorter than wait")
    return problems
