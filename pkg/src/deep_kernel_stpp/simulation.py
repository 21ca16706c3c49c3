"""Thinning simulator and time-rescaling goodness of fit.

Random numbers come from ``numpy.random.Philox`` (a counter-based generator
with a fixed, documented algorithm) so sequences are reproducible across
platforms for a given seed.

The simulator only needs two things from a model: pointwise intensities and
intensity tables over a (time x point) product. :class:`SttpModel` is
supported directly; other models (e.g. graph processes) provide
``intensity_points(history, t, points)``, ``intensity_table(history, times,
points)`` and ``compensator(seq, times)`` methods.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .core import EventSequence, SpatialDomain, TimeWindow
from .errors import BoundViolationLoop, TooFewEvents
from .intensity import SttpModel, intensity_at, intensity_table
from .objectives import precompute_integrals
from .core import GridSpec


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class NodeSet:
    """Finite set of graph nodes ``0..n-1`` with counting measure."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one node")


class _Space:
    """Proposal space: rectangle, graph nodes, or nothing (temporal)."""

    def __init__(self, domain, bound_grid):
        self.domain = domain
        if isinstance(domain, SpatialDomain):
            self.volume = domain.area
            self.points, _ = domain.midpoints(*bound_grid)
        elif isinstance(domain, NodeSet):
            self.volume = float(domain.n)
            self.points = np.arange(domain.n)
        else:
            self.volume = 1.0
            self.points = None

    def propose(self, rng):
        d = self.domain
        if isinstance(d, SpatialDomain):
            return np.array([rng.uniform(d.x_lo, d.x_hi), rng.uniform(d.y_lo, d.y_hi)])
        if isinstance(d, NodeSet):
            return int(rng.integers(d.n))
        return None


def _points_intensity(model, hist, t, point):
    if hasattr(model, "intensity_points"):
        return float(model.intensity_points(hist, np.array([t]), [point])[0])
    return float(intensity_at(model, hist, [t], None if point is None else [point])[0])


def _table(model, hist, times, points):
    if hasattr(model, "intensity_table"):
        return model.intensity_table(hist, times, points)
    return intensity_table(model, hist, times, points)


def _make_sequence(times, marks, domain, T):
    window = TimeWindow(T)
    times = np.array(times, dtype=float)
    if isinstance(domain, SpatialDomain):
        locs = np.array(marks, dtype=float).reshape(-1, 2)
        return EventSequence(times, window, locations=locs)
    if isinstance(domain, NodeSet):
        return EventSequence(times, window, nodes=np.array(marks, dtype=np.int64))
    return EventSequence(times, window)


def simulate(model, T: Optional[float] = None, domain=None, seed: int = 0,
             lambda_bound_factor: float = 1.5, max_raises: int = 50,
             lookahead: Optional[float] = None, n_bound_times: int = 12,
             bound_grid=(16, 16)) -> EventSequence:
    """One trajectory on ``[0, T]`` by thinning.

    The bound is ``lambda_bound_factor`` times the maximum intensity on a
    grid over ``[t, t + lookahead] x domain`` given the current history. A
    proposal whose intensity exceeds the bound raises the bound and is
    redrawn; more than ``max_raises`` raises for one event gives
    :class:`BoundViolationLoop`. Negative intensities (inhibitory kernels)
    are accepted with probability zero.
    """
    if lambda_bound_factor < 1:
        raise ValueError("lambda_bound_factor must be >= 1")
    T = model.T if T is None else float(T)
    if domain is None:
        domain = getattr(model, "domain", None)
        if domain is None and hasattr(model, "n_nodes"):
            domain = NodeSet(model.n_nodes)
    space = _Space(domain, bound_grid)
    tau_max = getattr(getattr(model, "kernel", model), "tau_max", T)
    if lookahead is None:
        lookahead = max(tau_max / 4, 1e-6)
    rng = philox(seed)
    times, marks = [], []
    # only events within tau_max of the current time can influence it
    hist = _make_sequence(times, marks, domain, T)
    first = 0
    t = 0.0
    while t < T:
        while first < len(times) and times[first] < t - tau_max:
            first += 1
            hist = _make_sequence(times[first:], marks[first:], domain, T)
        hi = min(t + lookahead, T)
        nodes = t + (hi - t) * np.linspace(1e-9, 1.0, n_bound_times)
        lam_bar = lambda_bound_factor * max(float(_table(model, hist, nodes, space.points).max()), 0.0)
        raises = 0
        while True:
            if lam_bar <= 0:
                t = hi
                break
            cand = t + rng.exponential(1.0 / (lam_bar * space.volume))
            if cand > hi:
                t = hi
                break
            point = space.propose(rng)
            lam = _points_intensity(model, hist, cand, point)
            if lam > lam_bar:
                raises += 1
                if raises > max_raises:
                    raise BoundViolationLoop(
                        f"bound raised {raises} times at t={t:.6g} (intensity {lam:.6g})")
                lam_bar = lambda_bound_factor * lam
                continue
            t = cand
            p = max(lam, 0.0) / lam_bar
            assert 0.0 <= p <= 1.0
            if rng.uniform() < p:
                times.append(cand)
                marks.append(point)
                hist = _make_sequence(times[first:], marks[first:], domain, T)
                break
    return _make_sequence(times, marks, domain, T)


def simulate_many(model, M: int, T: Optional[float] = None, domain=None, seed: int = 0, **kw) -> list:
    """``M`` trajectories; trajectory ``j`` uses seed ``seed + j``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    out = []
    for j in range(M):
        try:
            out.append(simulate(model, T, domain, seed + j, **kw))
        except BoundViolationLoop as exc:
            raise BoundViolationLoop(f"trajectory {j}: {exc}") from exc
    return out


def compensator(model, seq: EventSequence, times=None, grid: Optional[GridSpec] = None) -> np.ndarray:
    """``Lambda(t) = int_0^t int_S lambda`` at ``times`` (default: the event times)."""
    times = seq.times if times is None else np.asarray(times, dtype=float)
    if hasattr(model, "compensator"):
        return model.compensator(seq, times)
    k = model.kernel
    out = model.mu * model.area * times
    if len(seq) == 0:
        return out
    spatial = precompute_integrals(model, seq, grid or GridSpec()).spatial
    Psi, U = k.source_factors(seq.times, seq.locations if k.spatial else None)
    X = (U * spatial) @ k.alpha
    for i, t in enumerate(times):
        past = seq.times < t
        if past.any():
            mass = k.temporal_mass(t - seq.times[past])
            out[i] += np.sum(X[past] * Psi[past] * mass)
    return out


def time_rescaling_check(model, seq: EventSequence, grid: Optional[GridSpec] = None):
    """KS test of rescaled interarrivals against Exp(1); returns ``(statistic, p-value)``."""
    if len(seq) < 20:
        raise TooFewEvents(f"need at least 20 events, got {len(seq)}")
    lam = compensator(model, seq, grid=grid)
    gaps = np.diff(np.concatenate([[0.0], lam]))
    res = stats.kstest(gaps, "expon")
    return float(res.statistic), float(res.pvalue)
