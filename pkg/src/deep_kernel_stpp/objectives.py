"""Training objectives: log-likelihood, least squares and log-barrier.

All objectives share one evaluation pass over a :class:`Layout`, the
parameter-independent geometry of a data set (event pairs inside the kernel
support, quadrature weights, grid/event pairs). Basis networks are evaluated
once per pass on every input they need, and gradients are propagated back by
hand, so the returned gradient is exact for the discretized objective.

The integral of the intensity uses the basis decomposition

    int int lambda = mu |S| T
        + sum_i sum_r u_r(s_i) (int_S v_r(s - s_i) ds)
                * sum_l alpha[r, l] psi_l(t_i) int_0^{min(T - t_i, tau_max)} phi_l

with ``phi_l`` tabulated on a midpoint lag grid and ``v_r`` on a midpoint
displacement grid clipped to ``S`` (fractional cell overlap) and to the
truncation ball.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import EventSequence, GridSpec
from .errors import GridMismatch, NonPositiveIntensityAtEvent
from .intensity import SttpModel, _pairs, intensity_at
from .kernel import LowRankKernel

DEFAULT_GUARD = 1e-6


@dataclass
class ObjectiveValue:
    value: float
    grad: np.ndarray
    breakdown: dict = field(default_factory=dict)


def guarded_log(x, b):
    """log(x) above ``b``; quadratic continuation below so x <= 0 stays finite."""
    x = np.asarray(x, dtype=float)
    safe = np.maximum(x, b)
    d = x - b
    return np.where(x > b, np.log(safe), np.log(b) + d / b - d * d / (2 * b * b))


def guarded_log_slope(x, b):
    x = np.asarray(x, dtype=float)
    return np.where(x > b, 1.0 / np.maximum(x, b), 1.0 / b - (x - b) / (b * b))


def _overlap_fraction(centers, h, lo, hi):
    """Fraction of each cell ``[c - h/2, c + h/2]`` lying inside ``[lo, hi]``."""
    a = np.maximum(centers - h / 2, lo)
    b = np.minimum(centers + h / 2, hi)
    return np.clip(b - a, 0.0, None) / h


def ball_fraction(X, Y, h, radius, sub: int = 8):
    """Fraction of each ``h x h`` cell centred at ``(X, Y)`` inside the disc of ``radius``.

    Estimated by a ``sub x sub`` midpoint sub-grid, so the disc edge costs
    O(h^2) rather than the O(h) of a 0/1 mask at the cell centre.
    """
    off = h * ((np.arange(sub) + 0.5) / sub - 0.5)
    ox, oy = np.meshgrid(off, off, indexing="ij")
    inside = np.hypot(X[..., None, None] + ox, Y[..., None, None] + oy) <= radius
    return inside.mean(axis=(-2, -1))


def temporal_weights(limits, lag_h, n_lag):
    """Rows give ``int_0^x f`` as a linear form in the lag-midpoint values of f."""
    limits = np.asarray(limits, dtype=float)
    edges = lag_h * np.arange(n_lag)
    return np.clip(limits[:, None] - edges[None, :], 0.0, lag_h)


class Layout:
    """Geometry of ``sequences`` under ``model``'s truncation and ``grid``.

    ``space_time`` enables the uniform space-time grid used for barrier
    collocation and, with ``ls_quadrature`` (default: same as
    ``space_time``), a per-sequence time partition with breakpoints at the
    events and at ``t_j + tau_max`` used for the least-squares quadrature of
    ``lambda^2``, which jumps at every event.
    """

    def __init__(self, model: SttpModel, sequences: Sequence[EventSequence], grid: GridSpec,
                 space_time: bool = False, ls_quadrature: Optional[bool] = None):
        k = model.kernel
        if not isinstance(k, LowRankKernel):
            raise NotImplementedError("objectives are implemented for unmarked LowRankKernel models")
        self.grid = grid
        self.M = len(sequences)
        self.spatial = model.spatial
        self.tau_max, self.a_max = k.tau_max, k.a_max
        self.T = model.T
        self.area = model.area
        self.L, self.R = k.L, k.R
        self.lengths = np.array([len(s) for s in sequences], dtype=int)
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)])
        N = int(self.offsets[-1])
        self.N = N
        self.ev_seq = np.repeat(np.arange(self.M), self.lengths)
        self.ev_t = np.concatenate([s.times for s in sequences]) if N else np.zeros(0)
        if self.spatial:
            self.ev_s = (np.concatenate([s.locations for s in sequences]) if N
                         else np.zeros((0, 2)))
        else:
            self.ev_s = None

        # event pairs (target, source) inside the kernel support
        tgt, src = [], []
        for q, seq in enumerate(sequences):
            a, b = _pairs(seq.times, seq.times, self.tau_max)
            tgt.append(a + self.offsets[q])
            src.append(b + self.offsets[q])
        tgt = np.concatenate(tgt) if tgt else np.zeros(0, int)
        src = np.concatenate(src) if src else np.zeros(0, int)
        lag = self.ev_t[tgt] - self.ev_t[src]
        if self.spatial:
            disp = self.ev_s[tgt] - self.ev_s[src]
            keep = np.hypot(disp[:, 0], disp[:, 1]) <= self.a_max
            tgt, src, lag, disp = tgt[keep], src[keep], lag[keep], disp[keep]
        else:
            disp = np.zeros((len(lag), 2))
        self.p_tgt, self.p_src, self.p_lag, self.p_disp = tgt, src, lag, disp

        # integral-term quadrature
        self.lag_mid, self.lag_h = grid.lag_midpoints(self.tau_max)
        self.Wt = temporal_weights(np.minimum(self.T - self.ev_t, self.tau_max), self.lag_h, grid.n_lag)
        if self.spatial:
            ax, h = grid.disp_axis(self.a_max)
            X, Y = np.meshgrid(ax, ax, indexing="ij")
            self.disp_mid = np.column_stack([X.ravel(), Y.ravel()])
            self.ball_w = ball_fraction(X, Y, h, self.a_max) * h * h
            dom = model.domain
            self.Mx = _overlap_fraction(self.ev_s[:, :1] + ax[None, :], h, dom.x_lo, dom.x_hi)
            self.My = _overlap_fraction(self.ev_s[:, 1:] + ax[None, :], h, dom.y_lo, dom.y_hi)
        else:
            self.disp_mid = np.zeros((0, 2))

        # space-time grid
        self.space_time = space_time
        self.ls_quadrature = space_time if ls_quadrature is None else bool(ls_quadrature and space_time)
        self.st = []
        if space_time:
            times, locs, vol = model.grid_nodes(grid)
            self.grid_times, self.grid_locs, self.vol = times, locs, vol
            self.cell = model.area / grid.n_x / grid.n_y if self.spatial else 1.0
            self.n_gt = len(times)
            self.n_gs = 1 if locs is None else len(locs)
            gt_lag, gs_disp = [], []
            n_phi = len(self.p_lag) + grid.n_lag
            n_v = len(self.p_disp) + len(self.disp_mid)
            for q, seq in enumerate(sequences):
                g, j = _pairs(seq.times, times, self.tau_max)
                entry = {"gt": (g, j, slice(n_phi, n_phi + len(g)))}
                n_phi += len(g)
                gt_lag.append(times[g] - seq.times[j])
                if self.ls_quadrature:
                    tm, tw = _time_partition(seq, self.T, self.tau_max, grid.n_time)
                    g2, j2 = _pairs(seq.times, tm, self.tau_max)
                    entry["lt"] = (g2, j2, slice(n_phi, n_phi + len(g2)), tw)
                    n_phi += len(g2)
                    gt_lag.append(tm[g2] - seq.times[j2])
                if self.spatial:
                    d = locs[:, None, :] - seq.locations[None, :, :]
                    gs, js = np.nonzero(np.hypot(d[..., 0], d[..., 1]) <= self.a_max)
                    entry["gs"] = (gs, js, slice(n_v, n_v + len(gs)))
                    n_v += len(gs)
                    gs_disp.append(d[gs, js])
                self.st.append(entry)
            self.gt_lag = np.concatenate(gt_lag) if gt_lag else np.zeros(0)
            self.gs_disp = np.concatenate(gs_disp) if gs_disp else np.zeros((0, 2))
        else:
            self.gt_lag = np.zeros(0)
            self.gs_disp = np.zeros((0, 2))

        self.phi_inputs = np.concatenate([self.p_lag, self.lag_mid, self.gt_lag])[:, None]
        self.v_inputs = np.concatenate([self.p_disp, self.disp_mid, self.gs_disp])
        P = len(self.p_lag)
        self.sl_pair = slice(0, P)
        self.sl_lag = slice(P, P + grid.n_lag)
        self.sl_disp = slice(P, P + len(self.disp_mid))

    def check(self, model: SttpModel):
        k = model.kernel
        if (k.tau_max, k.a_max, k.L, k.R, model.spatial) != (
                self.tau_max, self.a_max, self.L, self.R, self.spatial):
            raise GridMismatch("layout was built for a different model geometry")


def _eval_bases(bases, X, need_cache):
    vals, caches = [], []
    for f in bases:
        if need_cache and f.trainable:
            y, c = f.forward(X)
        else:
            y, c = f(X), None
        vals.append(y)
        caches.append(c)
    return np.column_stack(vals) if vals else np.zeros((len(X), 0)), caches


def _col_bincount(idx, W, n):
    return np.column_stack([np.bincount(idx, weights=W[:, c], minlength=n) for c in range(W.shape[1])])


def evaluate_terms(model: SttpModel, layout: Layout, *, loglik=0.0, integral=0.0, ls=0.0,
                   barrier=None, guard=None, strict=False, want_grad=True):
    """Weighted sum of objective terms, averaged over sequences.

    ``loglik`` weights ``sum_i log lambda_i``; ``integral`` weights the
    compensator; ``ls`` weights the least-squares loss; ``barrier=(w, b)``
    adds ``-w sum log lambda`` over grid nodes and events. Event logs use
    :func:`guarded_log` with threshold ``guard`` unless ``strict`` (which
    raises on nonpositive intensities).
    """
    layout.check(model)
    k = model.kernel
    L, R, M = k.L, k.R, max(layout.M, 1)
    alpha, mu = k.alpha, model.mu
    need = want_grad
    Psi, c_psi = _eval_bases(k.psi, layout.ev_t[:, None], need)
    Phi, c_phi = _eval_bases(k.phi, layout.phi_inputs, need)
    if layout.spatial:
        U, c_u = _eval_bases(k.u, layout.ev_s, need)
        V, c_v = _eval_bases(k.v, layout.v_inputs, need)
    else:
        U = np.ones((layout.N, 1))
        V = np.ones((len(layout.v_inputs), 1))
        c_u = c_v = []

    dPsi = np.zeros_like(Psi)
    dU = np.zeros_like(U)
    dPhi = np.zeros_like(Phi)
    dV = np.zeros_like(V)
    dalpha = np.zeros_like(alpha)
    dmu = 0.0
    value = 0.0
    breakdown = {}
    per_seq = {}

    # intensity at events
    src, tgt = layout.p_src, layout.p_tgt
    A = Psi[src] * Phi[layout.sl_pair]
    B = U[src] * V[layout.sl_pair]
    c = np.einsum("pr,rl,pl->p", B, alpha, A)
    lam = mu + np.bincount(tgt, weights=c, minlength=layout.N)
    breakdown["min_event_intensity"] = float(lam.min()) if layout.N else np.inf
    g_lam = np.zeros(layout.N)

    if loglik:
        if strict:
            bad = np.flatnonzero(lam <= 0)
            if len(bad):
                i = bad[0]
                q = int(layout.ev_seq[i])
                raise NonPositiveIntensityAtEvent(q, int(i - layout.offsets[q]), float(lam[i]))
            logs = np.log(lam)
            slope = 1.0 / lam
        else:
            logs = guarded_log(lam, guard or DEFAULT_GUARD)
            slope = guarded_log_slope(lam, guard or DEFAULT_GUARD)
        per_seq["event"] = np.bincount(layout.ev_seq, weights=logs, minlength=layout.M)
        term = loglik * logs.sum() / M
        breakdown["event"] = term
        value += term
        g_lam += loglik * slope / M

    if ls:
        term = -2.0 * ls * lam.sum() / M
        breakdown["ls_event"] = term
        value += term
        g_lam += -2.0 * ls / M

    if barrier is not None:
        w, b = barrier
        term = -w * guarded_log(lam, b).sum() / M
        breakdown["barrier_event"] = term
        value += term
        g_lam += -w * guarded_log_slope(lam, b) / M

    if want_grad and len(tgt):
        gc = g_lam[tgt]
        dA = gc[:, None] * (B @ alpha)
        dB = gc[:, None] * (A @ alpha.T)
        dalpha += B.T @ (gc[:, None] * A)
        dPsi += _col_bincount(src, dA * Phi[layout.sl_pair], layout.N)
        dPhi[layout.sl_pair] += dA * Psi[src]
        if layout.spatial:
            dU += _col_bincount(src, dB * V[layout.sl_pair], layout.N)
            dV[layout.sl_pair] += dB * U[src]
    dmu += g_lam.sum()

    # compensator via basis decomposition
    if integral:
        Phint = layout.Wt @ Phi[layout.sl_lag]
        if layout.spatial:
            nd = layout.grid.n_disp
            Vd = V[layout.sl_disp]
            Vint = np.column_stack([
                np.sum((layout.Mx @ (Vd[:, r].reshape(nd, nd) * layout.ball_w)) * layout.My, axis=1)
                for r in range(R)
            ])
        else:
            Vint = np.ones((layout.N, 1))
        X = U * Vint
        Y = Psi * Phint
        mass = np.sum((X @ alpha) * Y, axis=1)
        base = mu * layout.area * layout.T
        per_seq["integral"] = base + np.bincount(layout.ev_seq, weights=mass, minlength=layout.M)
        total = (layout.M * base + mass.sum()) / M
        term = -integral * total
        breakdown["integral"] = term
        value += term
        if want_grad:
            cI = -integral / M
            dmu += cI * layout.M * layout.area * layout.T
            dX = cI * (Y @ alpha.T)
            dY = cI * (X @ alpha)
            dalpha += cI * (X.T @ Y)
            dPsi += dY * Phint
            dPhi[layout.sl_lag] += layout.Wt.T @ (dY * Psi)
            if layout.spatial:
                dU += dX * Vint
                dVint = dX * U
                for r in range(R):
                    dW = layout.Mx.T @ (dVint[:, r:r + 1] * layout.My)
                    dV[layout.sl_disp, r] += (dW * layout.ball_w).ravel()

    # space-time grids: uniform nodes for barrier collocation, an
    # event-adapted time partition for the least-squares quadrature
    if layout.space_time and (ls or barrier is not None):
        if ls and not layout.ls_quadrature:
            raise GridMismatch("layout was built without the least-squares partition")
        ls_total, bar_total, min_grid = 0.0, 0.0, np.inf
        for q, entry in enumerate(layout.st):
            n_q = layout.lengths[q]
            off = layout.offsets[q]
            Bs = np.zeros((R, layout.n_gs, n_q))
            if layout.spatial:
                gs, js, slv = entry["gs"]
                for r in range(R):
                    Bs[r, gs, js] = U[off + js, r] * V[slv, r]
            else:
                Bs[0, 0, :] = 1.0
            dBs = np.zeros_like(Bs) if want_grad else None

            def block(g, j, sl, n_t):
                At = np.zeros((L, n_t, n_q))
                for l in range(L):
                    At[l, g, j] = Psi[off + j, l] * Phi[sl, l]
                lam_g = np.full((n_t, layout.n_gs), mu)
                for r in range(R):
                    for l in range(L):
                        if alpha[r, l] != 0.0:
                            lam_g += alpha[r, l] * (At[l] @ Bs[r].T)
                return At, lam_g

            def backprop(G, At, g, j, sl):
                nonlocal dmu
                dmu += G.sum()
                C = [G @ Bs[r] for r in range(R)]
                for l in range(L):
                    dAt = sum(alpha[r, l] * C[r] for r in range(R))
                    for r in range(R):
                        dalpha[r, l] += np.sum(At[l] * C[r])
                    dvals = dAt[g, j]
                    dPhi[sl, l] += dvals * Psi[off + j, l]
                    dPsi[:, l] += np.bincount(off + j, weights=dvals * Phi[sl, l], minlength=layout.N)
                    D = G.T @ At[l]
                    for r in range(R):
                        dBs[r] += alpha[r, l] * D

            if barrier is not None:
                w, b = barrier
                g, j, sl = entry["gt"]
                At, lam_g = block(g, j, sl, layout.n_gt)
                min_grid = min(min_grid, float(lam_g.min()))
                bar_total += -w * guarded_log(lam_g, b).sum()
                if want_grad:
                    backprop(-w * guarded_log_slope(lam_g, b) / M, At, g, j, sl)
            if ls:
                g, j, sl, tw = entry["lt"]
                At, lam_g = block(g, j, sl, len(tw))
                wts = tw[:, None] * layout.cell
                ls_total += np.sum(lam_g ** 2 * wts)
                if want_grad:
                    backprop(ls * 2.0 * lam_g * wts / M, At, g, j, sl)
            if want_grad and layout.spatial:
                for r in range(R):
                    dvals = dBs[r][gs, js]
                    dV[slv, r] += dvals * U[off + js, r]
                    dU[:, r] += np.bincount(off + js, weights=dvals * V[slv, r], minlength=layout.N)
        if barrier is not None:
            breakdown["min_grid_intensity"] = min_grid
        if ls:
            term = ls * ls_total / M
            breakdown["ls_square"] = term
            value += term
        if barrier is not None:
            term = bar_total / M
            breakdown["barrier_grid"] = term
            value += term

    breakdown["per_sequence"] = per_seq
    if not want_grad:
        return ObjectiveValue(float(value), np.zeros(0), breakdown)

    grads = []
    if model.learn_mu:
        grads.append(np.array([dmu * model.mu_slope()]))
    if k.learn_alpha:
        grads.append(dalpha.ravel())
    for l, f in enumerate(k.psi):
        grads.append(f.backward(c_psi[l], dPsi[:, l]) if f.trainable else np.zeros(0))
    for l, f in enumerate(k.phi):
        grads.append(f.backward(c_phi[l], dPhi[:, l]) if f.trainable else np.zeros(0))
    if layout.spatial:
        for r, f in enumerate(k.u):
            grads.append(f.backward(c_u[r], dU[:, r]) if f.trainable else np.zeros(0))
        for r, f in enumerate(k.v):
            grads.append(f.backward(c_v[r], dV[:, r]) if f.trainable else np.zeros(0))
    return ObjectiveValue(float(value), np.concatenate(grads), breakdown)


def _layout(model, sequences, grid, layout, space_time):
    if layout is None or (space_time and not layout.space_time):
        layout = Layout(model, sequences, grid or GridSpec(), space_time=space_time)
    return layout


def log_likelihood(model: SttpModel, sequences, grid: Optional[GridSpec] = None,
                   layout: Optional[Layout] = None, want_grad: bool = True) -> ObjectiveValue:
    """Average over sequences of ``sum_i log lambda_i - int int lambda``.

    Raises :class:`NonPositiveIntensityAtEvent` if any event intensity is <= 0.
    """
    layout = _layout(model, sequences, grid, layout, False)
    return evaluate_terms(model, layout, loglik=1.0, integral=1.0, strict=True, want_grad=want_grad)


def ls_loss(model: SttpModel, sequences, grid: Optional[GridSpec] = None,
            layout: Optional[Layout] = None, want_grad: bool = True) -> ObjectiveValue:
    """Average over sequences of ``int int lambda^2 - 2 sum_i lambda_i`` (grid quadrature)."""
    layout = _layout(model, sequences, grid, layout, True)
    return evaluate_terms(model, layout, ls=1.0, want_grad=want_grad)


def barrier_penalty(model: SttpModel, sequences, grid: Optional[GridSpec] = None, w: float = 0.1,
                    b: float = DEFAULT_GUARD, layout: Optional[Layout] = None,
                    want_grad: bool = True) -> ObjectiveValue:
    """``-w sum log lambda`` over grid nodes and observed events, averaged over sequences.

    Nodes with ``lambda <= b`` use the quadratic continuation of the log, so
    an infeasible model gets a large finite penalty whose gradient raises
    the intensity.
    """
    if not (w > 0 and b > 0):
        raise ValueError("need w > 0 and b > 0")
    layout = _layout(model, sequences, grid, layout, True)
    return evaluate_terms(model, layout, barrier=(w, b), want_grad=want_grad)


# ---------------------------------------------------------------------------
# explicit precomputation and brute-force oracle

@dataclass
class PrecomputedIntegrals:
    """Cumulative lag integrals of each phi_l and per-event spatial masses of each v_r."""

    lag_edges: np.ndarray
    phi_cum: np.ndarray        # (n_lag + 1, L)
    phi_mid: np.ndarray        # (n_lag, L)
    spatial: np.ndarray        # (n_events, R)
    grid: GridSpec
    tau_max: float
    a_max: float
    n_events: int

    def temporal_mass(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float).reshape(-1), 0.0, self.tau_max)
        h = self.lag_edges[1] - self.lag_edges[0]
        n = len(self.phi_mid)
        i = np.minimum((x / h).astype(int), n - 1)
        return self.phi_cum[i] + (x - i * h)[:, None] * self.phi_mid[i]


def precompute_integrals(model: SttpModel, sequence: EventSequence,
                         grid: Optional[GridSpec] = None) -> PrecomputedIntegrals:
    grid = grid or GridSpec()
    k = model.kernel
    mids, h = grid.lag_midpoints(k.tau_max)
    phi_mid = k.lag_factors(mids)
    phi_cum = np.vstack([np.zeros((1, k.L)), np.cumsum(phi_mid, axis=0) * h])
    if model.spatial and len(sequence):
        ax, hd = grid.disp_axis(k.a_max)
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        disp = np.column_stack([X.ravel(), Y.ravel()])
        ball = ball_fraction(X, Y, hd, k.a_max) * hd * hd
        Vd = k.disp_factors(disp)
        dom = model.domain
        Mx = _overlap_fraction(sequence.locations[:, :1] + ax[None, :], hd, dom.x_lo, dom.x_hi)
        My = _overlap_fraction(sequence.locations[:, 1:] + ax[None, :], hd, dom.y_lo, dom.y_hi)
        spatial = np.column_stack([
            np.einsum("ia,ab,ib->i", Mx, Vd[:, r].reshape(len(ax), len(ax)) * ball, My)
            for r in range(k.R)
        ])
    else:
        spatial = np.ones((len(sequence), k.R))
    return PrecomputedIntegrals(h * np.arange(grid.n_lag + 1), phi_cum, phi_mid, spatial, grid,
                                k.tau_max, k.a_max, len(sequence))


def integral_term(model: SttpModel, sequence: EventSequence, precomp: PrecomputedIntegrals) -> float:
    """``int_0^T int_S lambda`` from precomputed basis integrals."""
    k = model.kernel
    if (precomp.n_events != len(sequence) or precomp.tau_max != k.tau_max
            or precomp.a_max != k.a_max or precomp.phi_mid.shape[1] != k.L
            or precomp.spatial.shape[1] != k.R):
        raise GridMismatch("precomputed integrals do not match this model and sequence")
    total = model.mu * model.area * model.T
    if len(sequence) == 0:
        return total
    Psi, U = k.source_factors(sequence.times, sequence.locations)
    Phint = precomp.temporal_mass(np.minimum(model.T - sequence.times, k.tau_max))
    return float(total + np.einsum("ir,rl,il->", U * precomp.spatial, k.alpha, Psi * Phint))


def _time_partition(seq: EventSequence, T, tau_max, n_cells):
    """Midpoints/widths of a partition of [0, T] refined between kernel breakpoints."""
    bps = np.concatenate([[0.0, T], seq.times, seq.times + tau_max])
    bps = np.unique(bps[(bps >= 0) & (bps <= T)])
    mids, widths = [], []
    for a, b in zip(bps[:-1], bps[1:]):
        if b <= a:
            continue
        n = max(1, int(round((b - a) / T * n_cells)))
        h = (b - a) / n
        mids.append(a + h * (np.arange(n) + 0.5))
        widths.append(np.full(n, h))
    return np.concatenate(mids), np.concatenate(widths)


def brute_force_integral(model: SttpModel, sequence: EventSequence, fine_grid: GridSpec) -> float:
    """Tensor-product midpoint quadrature of the intensity, event by event."""
    k = model.kernel
    T = model.T
    total = model.mu * model.area * T
    if len(sequence) == 0:
        return total
    tm, tw = _time_partition(sequence, T, k.tau_max, fine_grid.n_time)
    if model.spatial:
        locs, cell = model.domain.midpoints(fine_grid.n_x, fine_grid.n_y)
    for j in range(len(sequence)):
        tj = sequence.times[j]
        sel = (tm > tj) & (tm - tj <= k.tau_max)
        if not sel.any():
            continue
        ts, ws = tm[sel], tw[sel]
        if model.spatial:
            tt = np.broadcast_to(ts[:, None], (len(ts), len(locs)))
            vals = k.evaluate(tj, tt, sequence.locations[j], locs[None, :, :])
            total += float(ws @ vals.sum(axis=1)) * cell
        else:
            total += float(ws @ k.evaluate(tj, ts))
    return total


def brute_force_log_likelihood(model: SttpModel, sequence: EventSequence,
                               fine_grid: Optional[GridSpec] = None) -> float:
    """Log-likelihood with the compensator from direct quadrature (test oracle)."""
    fine_grid = fine_grid or GridSpec(400, 96, 96)
    lam = intensity_at(model, sequence, sequence.times,
                       sequence.locations if model.spatial else None)
    if len(lam) and lam.min() <= 0:
        i = int(np.argmin(lam))
        raise NonPositiveIntensityAtEvent(0, i, float(lam[i]))
    return float(np.log(lam).sum() - brute_force_integral(model, sequence, fine_grid))


# ---------------------------------------------------------------------------
# identifiability diagnostic

@dataclass
class PerturbationGap:
    mean: float
    stderr: float
    gaps: np.ndarray
    intensity_range: tuple

    def __iter__(self):
        return iter((self.mean, self.stderr))


def per_sequence_loglik(model: SttpModel, sequences, grid: Optional[GridSpec] = None,
                        layout: Optional[Layout] = None) -> np.ndarray:
    layout = _layout(model, sequences, grid, layout, False)
    ov = evaluate_terms(model, layout, loglik=1.0, integral=1.0, strict=True, want_grad=False)
    ps = ov.breakdown["per_sequence"]
    return ps["event"] - ps["integral"]


def perturbation_gap(true_model: SttpModel, perturbed_model: SttpModel, sequences,
                     grid: Optional[GridSpec] = None) -> PerturbationGap:
    """Monte-Carlo mean and standard error of ``l[k*] - l[k~]`` over trajectories.

    ``intensity_range`` reports the empirical min/max of the true intensity
    at events as proxies for the bounding constants of the positivity
    assumption.
    """
    layout = Layout(true_model, sequences, grid or GridSpec())
    l_true = per_sequence_loglik(true_model, sequences, layout=layout)
    l_pert = per_sequence_loglik(perturbed_model, sequences, layout=layout)
    gaps = l_true - l_pert
    M = len(gaps)
    se = float(gaps.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    ov = evaluate_terms(true_model, layout, want_grad=False)
    lo = ov.breakdown["min_event_intensity"]
    lam = [intensity_at(true_model, s, s.times, s.locations if true_model.spatial else None)
           for s in sequences if len(s)]
    hi = float(max(x.max() for x in lam)) if lam else true_model.mu
    return PerturbationGap(float(gaps.mean()), se, gaps, (float(lo), hi))
