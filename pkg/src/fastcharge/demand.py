"""Synthetic customer demand with morning/afternoon peaks."""
from __future__ import annotations

import math

import numpy as np

from .model import DemandProfile, FleetParams, Request

# relative hourly intensity; peaks at 7-8h and 17-18h
DEFAULT_HOURLY_WEIGHTS = (
    0.1, 0.1, 0.1, 0.1, 0.2, 0.6,
    1.5, 3.0, 2.2, 1.6, 1.4, 1.5,
    1.7, 1.6, 1.5, 1.7, 2.2, 3.0,
    2.1, 1.4, 1.0, 0.7, 0.4, 0.2,
)

MAX_BEARING_TRIES = 100


def default_profile(**overrides) -> DemandProfile:
    kw = dict(hourly_weights=DEFAULT_HOURLY_WEIGHTS)
    kw.update(overrides)
    return DemandProfile(**kw)


def lognormal_params(mean: float, var: float) -> tuple[float, float]:
    """Return ``(mu, sigma)`` of the lognormal with the given moments."""
    sigma2 = math.log1p(var / mean**2)
    return math.log(mean) - sigma2 / 2, math.sqrt(sigma2)


def _arrival_segments(weights, horizon):
    start, end = horizon
    segs = []
    for h, w in enumerate(weights):
        lo, hi = max(h * 60.0, start), min((h + 1) * 60.0, end)
        if hi > lo and w > 0:
            segs.append((lo, hi, w * (hi - lo)))
    return segs


def _inside(p, region):
    x0, y0, x1, y1 = region
    return x0 <= p[0] <= x1 and y0 <= p[1] <= y1


def _destination(rng, origin, length, region):
    for _ in range(MAX_BEARING_TRIES):
        theta = rng.uniform(0.0, 2 * math.pi)
        d = (origin[0] + length * math.cos(theta), origin[1] + length * math.sin(theta))
        if _inside(d, region):
            return d
    # keep the last bearing and shorten to the box boundary
    x0, y0, x1, y1 = region
    dx, dy = math.cos(theta), math.sin(theta)
    t = length
    if dx > 0:
        t = min(t, (x1 - origin[0]) / dx)
    elif dx < 0:
        t = min(t, (x0 - origin[0]) / dx)
    if dy > 0:
        t = min(t, (y1 - origin[1]) / dy)
    elif dy < 0:
        t = min(t, (y0 - origin[1]) / dy)
    return (origin[0] + t * dx, origin[1] + t * dy)


def generate_demand(
    profile: DemandProfile,
    n: int,
    seed: int | None = 0,
    params: FleetParams | None = None,
) -> list[Request]:
    """Draw ``n`` requests sorted by arrival time.

    Given ``n``, arrivals of a non-homogeneous Poisson process with
    piecewise-constant hourly intensity are i.i.d. from the normalised
    intensity, which is what is sampled here. Trip lengths are lognormal
    with the profile's mean and variance.

    :param profile: demand shape
    :param n: number of requests
    :param seed: RNG seed; identical seeds give identical output
    :param params: fleet parameters supplying the horizon and capacity
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    params = FleetParams() if params is None else params
    if profile.passengers > params.capacity:
        raise ValueError("passengers per request exceed vehicle capacity")
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    segs = _arrival_segments(profile.hourly_weights, params.horizon)
    if not segs:
        raise ValueError("hourly weights are zero over the whole horizon")
    mass = np.array([s[2] for s in segs])
    which = rng.choice(len(segs), size=n, p=mass / mass.sum())
    arrivals = np.array([rng.uniform(segs[k][0], segs[k][1]) for k in which])
    arrivals.sort()

    mu, sigma = lognormal_params(profile.trip_len_mean, profile.trip_len_var)
    x0, y0, x1, y1 = profile.region
    out = []
    for i, t in enumerate(arrivals):
        origin = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
        length = float(rng.lognormal(mu, sigma))
        dest = _destination(rng, origin, length, profile.region)
        if dest == origin:
            dest = (origin[0] + 1e-3 * (1 if origin[0] < x1 else -1), origin[1])
        out.append(Request(i, float(t), origin, (float(dest[0]), float(dest[1])), profile.passengers))
    return out
