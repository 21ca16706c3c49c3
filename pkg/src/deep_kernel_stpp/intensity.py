"""Conditional intensity of a low-rank kernel point process."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .core import EventSequence, GridSpec, SpatialDomain, TimeWindow
from .errors import OutOfDomain
from .kernel import LowRankKernel, MarkedKernel

_MU_FLOOR = 1e-12


def inv_softplus(y: float) -> float:
    y = max(float(y), _MU_FLOOR)
    return y + np.log(-np.expm1(-y))


class SttpModel:
    """Baseline ``mu`` plus a self-exciting kernel on a window and domain.

    ``domain=None`` gives a purely temporal process (unit spatial measure).
    A learnable ``mu`` is stored as softplus of an unconstrained scalar.
    """

    def __init__(self, mu: float, kernel, window: TimeWindow,
                 domain: Optional[SpatialDomain] = None, learn_mu: bool = True):
        if mu < 0:
            raise ValueError("baseline must be nonnegative")
        self.kernel = kernel
        self.window = window
        self.domain = domain
        self.learn_mu = learn_mu
        self._raw_mu = inv_softplus(mu) if learn_mu else None
        self._mu = float(mu)
        if learn_mu:
            self._mu = float(np.logaddexp(0.0, self._raw_mu))
        if domain is not None and not kernel.spatial:
            raise ValueError("temporal kernel used with a spatial domain")

    @property
    def mu(self) -> float:
        return self._mu

    @property
    def T(self) -> float:
        return self.window.T

    @property
    def spatial(self) -> bool:
        return self.domain is not None

    @property
    def area(self) -> float:
        return self.domain.area if self.domain is not None else 1.0

    @property
    def n_params(self) -> int:
        return int(self.learn_mu) + self.kernel.n_params

    def get_vector(self) -> np.ndarray:
        head = [np.array([self._raw_mu])] if self.learn_mu else []
        return np.concatenate(head + [self.kernel.get_vector()])

    def with_vector(self, vec) -> "SttpModel":
        vec = np.asarray(vec, dtype=float)
        new = SttpModel.__new__(SttpModel)
        new.__dict__.update(self.__dict__)
        if self.learn_mu:
            new._raw_mu = float(vec[0])
            new._mu = float(np.logaddexp(0.0, vec[0]))
            vec = vec[1:]
        new.kernel = self.kernel.with_vector(vec)
        return new

    def with_kernel(self, kernel) -> "SttpModel":
        new = SttpModel.__new__(SttpModel)
        new.__dict__.update(self.__dict__)
        new.kernel = kernel
        return new

    def with_mu(self, mu: float) -> "SttpModel":
        return SttpModel(mu, self.kernel, self.window, self.domain, self.learn_mu)

    def mu_slope(self) -> float:
        """d mu / d raw parameter."""
        return float(1.0 / (1.0 + np.exp(-self._raw_mu))) if self.learn_mu else 0.0

    def grid_nodes(self, grid: GridSpec, t0: float = 0.0, t1: Optional[float] = None):
        """Midpoint nodes ``(times, locations, cell volume)`` of the space-time grid."""
        t1 = self.T if t1 is None else t1
        times, ht = grid.time_midpoints(t1, t0)
        if self.domain is None:
            return times, None, ht
        locs, area = self.domain.midpoints(grid.n_x, grid.n_y)
        return times, locs, ht * area


def _pairs(hist_times, query_times, tau_max):
    """Index pairs ``(query q, history j)`` with ``0 < t_q - t_j <= tau_max``."""
    lo = np.searchsorted(hist_times, query_times - tau_max, side="left")
    hi = np.searchsorted(hist_times, query_times, side="left")
    counts = hi - lo
    q = np.repeat(np.arange(len(query_times)), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    j = np.repeat(lo, counts) + offs
    return q, j


def intensity_at(model: SttpModel, history: EventSequence, t, s=None, m=None,
                 chunk: int = 200_000) -> np.ndarray:
    """Intensity at many query points; only history events strictly before each query count."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = model.kernel
    out = np.full(len(t), model.mu)
    if len(history) == 0:
        return out
    q, j = _pairs(history.times, t, k.tau_max)
    if model.spatial:
        s = np.asarray(s, dtype=float).reshape(len(t), 2)
    if isinstance(k, MarkedKernel):
        m = np.asarray(m, dtype=float).reshape(len(t), -1)
    for a in range(0, len(q), chunk):
        qq, jj = q[a:a + chunk], j[a:a + chunk]
        args = (history.times[jj], t[qq])
        if model.spatial:
            args += (history.locations[jj], s[qq])
        else:
            args += (None, None)
        if isinstance(k, MarkedKernel):
            args += (history.marks[jj], m[qq])
        out += np.bincount(qq, weights=k.evaluate(*args), minlength=len(t))
    return out


def conditional_intensity(model: SttpModel, history: EventSequence, t: float, s=None, m=None) -> float:
    """``mu + sum_{t_j < t} k(t_j, t, s_j, s)``; may be negative for an inhibitory kernel."""
    if model.spatial:
        if s is None or not model.domain.contains(s)[0]:
            raise OutOfDomain(f"location {s} outside the spatial domain")
    if not 0 <= t <= model.T:
        raise OutOfDomain(f"time {t} outside [0, {model.T}]")
    return float(intensity_at(model, history, [t], None if s is None else [s],
                              None if m is None else [m])[0])


def intensity_on_grid(model: SttpModel, history: EventSequence, grid: GridSpec,
                      t0: float = 0.0, t1: Optional[float] = None) -> np.ndarray:
    """Intensity at grid midpoints, shape ``(n_time, n_x * n_y)`` (x-major space)."""
    times, locs, _ = model.grid_nodes(grid, t0, t1)
    if locs is None:
        return intensity_at(model, history, times)[:, None]
    T = np.repeat(times, len(locs))
    S = np.tile(locs, (len(times), 1))
    return intensity_at(model, history, T, S).reshape(len(times), len(locs))


def min_intensity(model: SttpModel, sequences: Sequence[EventSequence], grid: GridSpec):
    """Smallest grid-node intensity over all sequences.

    Returns ``(value, (sequence index, time, location))``.
    """
    times, locs, _ = model.grid_nodes(grid)
    first = (0, float(times[0]), None if locs is None else tuple(locs[0]))
    best, arg = np.inf, None
    for q, seq in enumerate(sequences):
        tab = intensity_on_grid(model, seq, grid)
        i = int(np.argmin(tab))
        if tab.flat[i] < best:
            ti, si = divmod(i, tab.shape[1])
            best = float(tab.flat[i])
            arg = (q, float(times[ti]), None if locs is None else tuple(locs[si]))
    if arg is None:
        return model.mu, first
    return best, arg


def intensity_table(model: SttpModel, history: EventSequence, times, locations=None) -> np.ndarray:
    """Intensity on the product of ``times`` and ``locations``, shape ``(n_t, n_s)``.

    Uses the low-rank structure: per-rank time and space factor matrices are
    multiplied, so the cost is ``O(n_t n_s n_hist)`` flops with no per-pair
    basis evaluations.
    """
    k = model.kernel
    times = np.asarray(times, dtype=float).reshape(-1)
    n_s = 1 if locations is None else len(locations)
    out = np.full((len(times), n_s), model.mu)
    if len(history) == 0 or isinstance(k, MarkedKernel):
        if len(history) and isinstance(k, MarkedKernel):
            raise NotImplementedError("tables for marked kernels need per-query marks")
        return out
    q, j = _pairs(history.times, times, k.tau_max)
    if len(q) == 0:
        return out
    Psi, U = k.source_factors(history.times, history.locations if k.spatial else None)
    Phi = k.lag_factors(times[q] - history.times[j])
    A = np.zeros((k.L, len(times), len(history)))
    for l in range(k.L):
        A[l, q, j] = Psi[j, l] * Phi[:, l]
    if k.spatial:
        d = np.asarray(locations, float)[:, None, :] - history.locations[None, :, :]
        gs, js = np.nonzero(np.hypot(d[..., 0], d[..., 1]) <= k.a_max)
        V = k.disp_factors(d[gs, js])
        B = np.zeros((k.R, n_s, len(history)))
        for r in range(k.R):
            B[r, gs, js] = U[js, r] * V[:, r]
    else:
        B = np.ones((1, 1, len(history)))
    for r in range(k.R):
        for l in range(k.L):
            if k.alpha[r, l] != 0.0:
                out += k.alpha[r, l] * (A[l] @ B[r].T)
    return out
