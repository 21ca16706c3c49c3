"""Self-exciting point processes on graph nodes.

The kernel is ``k(t', t, v', v) = sum_{r,l} alpha[r, l] psi_l(t') phi_l(t - t')
B_r[v', v]`` where ``B_r[v', v]`` is the influence of node ``v'`` on node
``v``. Filters are free ``N x N`` matrices or polynomials ``sum_j h_j S^j`` in
a shift matrix ``S`` (adjacency or Laplacian).
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import EventSequence, GridSpec, TimeWindow
from .errors import DimensionMismatch, NodeOutOfRange, NonCausalPair, NonPositiveIntensityAtEvent, NonSquare
from .intensity import _pairs, inv_softplus
from .neural_basis import MlpBasis
from .objectives import ObjectiveValue, _time_partition, guarded_log, guarded_log_slope, temporal_weights
from .optimizer import FitOptions, FitReport, adam_minimize


class Graph:
    """Weighted directed graph from a nonnegative adjacency matrix."""

    def __init__(self, A, allow_self_loops: bool = False):
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise NonSquare(f"adjacency must be square, got {A.shape}")
        if np.any(A < 0):
            raise ValueError("adjacency entries must be nonnegative")
        if not allow_self_loops and np.any(np.diag(A) != 0):
            raise ValueError("self-loops present; pass allow_self_loops=True")
        self.A = A

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def degree(self) -> np.ndarray:
        return np.diag(self.A.sum(axis=1))

    @property
    def laplacian(self) -> np.ndarray:
        return self.degree - self.A

    def shift(self, kind: str = "adjacency") -> np.ndarray:
        if kind == "adjacency":
            return self.A
        if kind == "laplacian":
            return self.laplacian
        raise ValueError("shift must be 'adjacency' or 'laplacian'")


def _check_square(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NonSquare(f"matrix must be square, got {S.shape}")
    return S


def matrix_powers(S, J: int) -> np.ndarray:
    """``[S, S^2, ..., S^J]`` stacked, by repeated multiplication."""
    S = _check_square(S)
    out = [S]
    for _ in range(J - 1):
        out.append(out[-1] @ S)
    return np.stack(out)


def graph_filter_poly(S, h) -> np.ndarray:
    """``B = sum_{j=1..J} h_j S^j``."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if len(h) < 1:
        raise ValueError("need at least one coefficient")
    return np.tensordot(h, matrix_powers(S, len(h)), axes=1)


class GraphFilterKernel:
    """Low-rank temporal-graph kernel.

    Exactly one of ``filters`` (R matrices) or ``(shift, coeffs)`` (an
    ``R x J`` coefficient array) defines the graph part.
    """

    def __init__(self, alpha, psi, phi, filters=None, shift=None, coeffs=None,
                 tau_max: float = 3.0, learn_alpha: bool = True):
        self.alpha = np.array(alpha, dtype=float, ndmin=2)
        self.R, self.L = self.alpha.shape
        self.psi, self.phi = list(psi), list(phi)
        if len(self.psi) != self.L or len(self.phi) != self.L:
            raise DimensionMismatch("need L temporal bases psi and phi")
        if (filters is None) == (coeffs is None):
            raise ValueError("give either free filters or polynomial coefficients")
        if filters is not None:
            self.mode = "free"
            self.filters = np.array([_check_square(B) for B in filters])
            if len(self.filters) != self.R:
                raise DimensionMismatch("need R filters")
            self.powers = None
            self.coeffs = None
        else:
            self.mode = "poly"
            self.coeffs = np.array(coeffs, dtype=float, ndmin=2)
            if self.coeffs.shape[0] != self.R or self.coeffs.shape[1] < 1:
                raise DimensionMismatch("coefficients must be R x J with J >= 1")
            self.shift = _check_square(shift)
            self.powers = matrix_powers(self.shift, self.coeffs.shape[1])
            self.filters = np.tensordot(self.coeffs, self.powers, axes=1)
        self.tau_max = float(tau_max)
        self.learn_alpha = learn_alpha

    @property
    def n_nodes(self) -> int:
        return self.filters.shape[1]

    @property
    def _filter_params(self) -> np.ndarray:
        return self.filters if self.mode == "free" else self.coeffs

    @property
    def n_params(self) -> int:
        return ((self.alpha.size if self.learn_alpha else 0)
                + sum(b.size for b in self.psi + self.phi) + self._filter_params.size)

    def get_vector(self) -> np.ndarray:
        parts = [self.alpha.ravel()] if self.learn_alpha else []
        parts += [b.get_vector() for b in self.psi + self.phi]
        parts.append(self._filter_params.ravel())
        return np.concatenate(parts)

    def with_vector(self, vec) -> "GraphFilterKernel":
        vec = np.asarray(vec, dtype=float)
        if len(vec) != self.n_params:
            raise DimensionMismatch(f"expected {self.n_params} parameters, got {len(vec)}")
        k = 0
        alpha = self.alpha
        if self.learn_alpha:
            alpha = vec[:self.alpha.size].reshape(self.alpha.shape)
            k = self.alpha.size
        bases = []
        for b in self.psi + self.phi:
            bases.append(b.with_vector(vec[k:k + b.size]))
            k += b.size
        fp = vec[k:].reshape(self._filter_params.shape)
        L = self.L
        if self.mode == "free":
            return GraphFilterKernel(alpha, bases[:L], bases[L:], filters=fp,
                                     tau_max=self.tau_max, learn_alpha=self.learn_alpha)
        return GraphFilterKernel(alpha, bases[:L], bases[L:], shift=self.shift, coeffs=fp,
                                 tau_max=self.tau_max, learn_alpha=self.learn_alpha)

    def evaluate(self, t_src, t, v_src, v) -> np.ndarray:
        """Vectorized kernel values; 0 outside ``0 < t - t' <= tau_max``."""
        t_src, t, v_src, v = np.broadcast_arrays(
            np.asarray(t_src, float), np.asarray(t, float), np.asarray(v_src), np.asarray(v))
        shape = t.shape
        t_src, t = t_src.reshape(-1), t.reshape(-1)
        v_src, v = v_src.reshape(-1).astype(int), v.reshape(-1).astype(int)
        tau = t - t_src
        ok = (tau > 0) & (tau <= self.tau_max)
        out = np.zeros(len(t))
        if ok.any():
            Psi = np.column_stack([f(t_src[ok]) for f in self.psi])
            Phi = np.column_stack([f(tau[ok]) for f in self.phi])
            Bv = self.filters[:, v_src[ok], v[ok]].T
            out[ok] = np.einsum("nr,rl,nl->n", Bv, self.alpha, Psi * Phi)
        return out.reshape(shape)

    def influence(self, t_src, tau) -> np.ndarray:
        """``N x N`` matrix ``k(t', t' + tau, ., .)`` (signs kept)."""
        if not (0 < tau <= self.tau_max):
            return np.zeros((self.n_nodes, self.n_nodes))
        psi = np.array([f(np.array([t_src]))[0] for f in self.psi])
        phi = np.array([f(np.array([tau]))[0] for f in self.phi])
        w = self.alpha @ (psi * phi)
        return np.tensordot(w, self.filters, axes=1)


def eval_graph_kernel(k: GraphFilterKernel, t_prime, t, v_prime, v) -> float:
    if not t > t_prime:
        raise NonCausalPair(f"need t > t', got t={t}, t'={t_prime}")
    for node in (v_prime, v):
        if not 0 <= int(node) < k.n_nodes:
            raise NodeOutOfRange(f"node {node} outside 0..{k.n_nodes - 1}")
    return float(k.evaluate(t_prime, t, v_prime, v))


def deep_graph_kernel(n_nodes: int, L: int = 1, R: int = 1, hidden=(16, 16), tau_max: float = 3.0,
                      seed: int = 0, filter_scale: float = 0.1, shift=None, degree: int = 2) -> GraphFilterKernel:
    """MLP temporal bases with random small filters (free, or polynomial when ``shift`` is given)."""
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(2 * L + 1)]
    psi = [MlpBasis.create(1, hidden, "softplus", seeds[i]) for i in range(L)]
    phi = [MlpBasis.create(1, hidden, "linear", seeds[L + i]) for i in range(L)]
    rng = np.random.Generator(np.random.Philox(seeds[-1]))
    alpha = np.ones((R, L))
    if shift is None:
        filters = filter_scale * rng.uniform(0.0, 1.0, size=(R, n_nodes, n_nodes))
        return GraphFilterKernel(alpha, psi, phi, filters=filters, tau_max=tau_max)
    coeffs = filter_scale * rng.uniform(0.0, 1.0, size=(R, degree))
    return GraphFilterKernel(alpha, psi, phi, shift=shift, coeffs=coeffs, tau_max=tau_max)


class GraphModel:
    """Per-node baselines plus a graph filter kernel on ``[0, T]``."""

    def __init__(self, mu, kernel: GraphFilterKernel, window: TimeWindow, learn_mu: bool = True):
        mu = np.broadcast_to(np.asarray(mu, dtype=float), (kernel.n_nodes,)).copy()
        if np.any(mu < 0):
            raise ValueError("baselines must be nonnegative")
        self.kernel = kernel
        self.window = window
        self.learn_mu = learn_mu
        if learn_mu:
            self._raw_mu = np.array([inv_softplus(m) for m in mu])
            mu = np.logaddexp(0.0, self._raw_mu)
        self.mu = mu

    @property
    def n_nodes(self) -> int:
        return self.kernel.n_nodes

    @property
    def T(self) -> float:
        return self.window.T

    @property
    def n_params(self) -> int:
        return (self.n_nodes if self.learn_mu else 0) + self.kernel.n_params

    def get_vector(self) -> np.ndarray:
        head = [self._raw_mu] if self.learn_mu else []
        return np.concatenate(head + [self.kernel.get_vector()])

    def with_vector(self, vec) -> "GraphModel":
        vec = np.asarray(vec, dtype=float)
        new = GraphModel.__new__(GraphModel)
        new.__dict__.update(self.__dict__)
        if self.learn_mu:
            new._raw_mu = vec[:self.n_nodes].copy()
            new.mu = np.logaddexp(0.0, new._raw_mu)
            vec = vec[self.n_nodes:]
        new.kernel = self.kernel.with_vector(vec)
        return new

    # simulation protocol ------------------------------------------------
    def intensity_points(self, history: EventSequence, t, nodes) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        nodes = np.atleast_1d(np.asarray(nodes)).astype(int)
        out = self.mu[nodes].copy()
        if len(history):
            q, j = _pairs(history.times, t, self.kernel.tau_max)
            vals = self.kernel.evaluate(history.times[j], t[q], history.nodes[j], nodes[q])
            out += np.bincount(q, weights=vals, minlength=len(t))
        return out

    def intensity_table(self, history: EventSequence, times, nodes=None) -> np.ndarray:
        """Intensity at every (time, node), shape ``(n_times, N)``."""
        times = np.asarray(times, dtype=float).reshape(-1)
        k = self.kernel
        out = np.tile(self.mu, (len(times), 1))
        if len(history):
            q, j = _pairs(history.times, times, k.tau_max)
            if len(q):
                Psi = np.column_stack([f(history.times) for f in k.psi])
                Phi = np.column_stack([f(times[q] - history.times[j]) for f in k.phi])
                W = (Psi[j] * Phi) @ k.alpha.T            # (pairs, R)
                rows = np.einsum("pr,rpn->pn", W, k.filters[:, history.nodes[j], :])
                np.add.at(out, q, rows)
        if nodes is not None:
            out = out[:, np.asarray(nodes, dtype=int)]
        return out

    def compensator(self, seq: EventSequence, times) -> np.ndarray:
        """``sum_v int_0^t lambda(s, v) ds`` at ``times`` (lag integrals by fine quadrature)."""
        k = self.kernel
        times = np.asarray(times, dtype=float)
        out = self.mu.sum() * times
        if len(seq) == 0:
            return out
        grid = GridSpec(n_lag=2000)
        mids, h = grid.lag_midpoints(k.tau_max)
        phi_mid = np.column_stack([f(mids) for f in k.phi])
        Psi = np.column_stack([f(seq.times) for f in k.psi])
        rowsum = k.filters.sum(axis=2)[:, seq.nodes].T     # (n, R)
        X = rowsum @ k.alpha
        for i, t in enumerate(times):
            past = seq.times < t
            if past.any():
                W = temporal_weights(np.minimum(t - seq.times[past], k.tau_max), h, grid.n_lag)
                out[i] += np.sum(X[past] * Psi[past] * (W @ phi_mid))
        return out


def graph_intensity(model: GraphModel, history: EventSequence, t: float, v: int) -> float:
    if not 0 <= int(v) < model.n_nodes:
        raise NodeOutOfRange(f"node {v} outside 0..{model.n_nodes - 1}")
    if t > model.T:
        raise ValueError(f"time {t} beyond the horizon {model.T}")
    return float(model.intensity_points(history, [t], [v])[0])


def influence_snapshots(model, t: float, lags) -> list:
    """Matrices ``k(t - lag, t, v', v)`` for each lag."""
    k = model.kernel if isinstance(model, GraphModel) else model
    out = []
    for lag in lags:
        if not lag > 0 or t - lag < 0:
            raise ValueError("lags must be positive with t - lag >= 0")
        out.append(k.influence(t - lag, lag))
    return out


def effective_influence(k: GraphFilterKernel, T: float, n: int = 400) -> np.ndarray:
    """Time-averaged, lag-integrated influence ``sum_rl alpha psi_bar_l Phi_l B_r``.

    ``psi_bar_l`` averages ``psi_l`` over ``[0, T]`` and ``Phi_l`` integrates
    ``phi_l`` over ``[0, tau_max]``; this is invariant to the scale trade-offs
    between alpha, the temporal bases and the filters.
    """
    tm = T * (np.arange(n) + 0.5) / n
    lm = k.tau_max * (np.arange(n) + 0.5) / n
    psi_bar = np.array([f(tm).mean() for f in k.psi])
    Phi = np.array([f(lm).sum() * k.tau_max / n for f in k.phi])
    w = k.alpha @ (psi_bar * Phi)
    return np.tensordot(w, k.filters, axes=1)


def offdiag_correlation(A, B) -> float:
    mask = ~np.eye(A.shape[0], dtype=bool)
    return float(np.corrcoef(A[mask], B[mask])[0, 1])


# ---------------------------------------------------------------------------
# objectives

class GraphLayout:
    """Parameter-independent geometry of graph event data."""

    def __init__(self, model: GraphModel, sequences: Sequence[EventSequence], grid: GridSpec):
        k = model.kernel
        self.grid = grid
        self.M = len(sequences)
        self.T = model.T
        self.n_nodes = model.n_nodes
        self.tau_max = k.tau_max
        for s in sequences:
            if len(s) and (s.nodes is None or s.nodes.min() < 0 or s.nodes.max() >= model.n_nodes):
                raise NodeOutOfRange("sequence nodes outside the graph")
        self.lengths = np.array([len(s) for s in sequences], dtype=int)
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)])
        self.N = int(self.offsets[-1])
        self.ev_seq = np.repeat(np.arange(self.M), self.lengths)
        self.ev_t = np.concatenate([s.times for s in sequences]) if self.N else np.zeros(0)
        self.ev_v = (np.concatenate([s.nodes for s in sequences]).astype(int) if self.N
                     else np.zeros(0, int))
        tgt, src = [], []
        for q, seq in enumerate(sequences):
            a, b = _pairs(seq.times, seq.times, k.tau_max)
            tgt.append(a + self.offsets[q])
            src.append(b + self.offsets[q])
        self.p_tgt = np.concatenate(tgt) if tgt else np.zeros(0, int)
        self.p_src = np.concatenate(src) if src else np.zeros(0, int)
        self.p_lag = self.ev_t[self.p_tgt] - self.ev_t[self.p_src]
        self.lag_mid, self.lag_h = grid.lag_midpoints(k.tau_max)
        self.Wt = temporal_weights(np.minimum(self.T - self.ev_t, k.tau_max), self.lag_h, grid.n_lag)
        self.grid_times, self.ht = grid.time_midpoints(self.T)
        self.st = []
        gt_lag = []
        start = len(self.p_lag) + grid.n_lag
        # time nodes for the LS quadrature and barrier collocation, with
        # breakpoints at events and truncation lags where lambda jumps
        for q, seq in enumerate(sequences):
            tm, tw = _time_partition(seq, self.T, k.tau_max, grid.n_time)
            g, j = _pairs(seq.times, tm, k.tau_max)
            self.st.append((g, j, slice(start, start + len(g)), tw))
            start += len(g)
            gt_lag.append(tm[g] - seq.times[j])
        gt = np.concatenate(gt_lag) if gt_lag else np.zeros(0)
        self.phi_inputs = np.concatenate([self.p_lag, self.lag_mid, gt])[:, None]
        P = len(self.p_lag)
        self.sl_pair = slice(0, P)
        self.sl_lag = slice(P, P + grid.n_lag)


def graph_terms(model: GraphModel, layout: GraphLayout, *, loglik=0.0, integral=0.0, ls=0.0,
                barrier=None, guard=None, strict=False, want_grad=True) -> ObjectiveValue:
    """Graph analogue of :func:`objectives.evaluate_terms` (same weighting conventions)."""
    k = model.kernel
    L, R, M, Nn = k.L, k.R, max(layout.M, 1), layout.n_nodes
    alpha, mu, B = k.alpha, model.mu, k.filters
    Psi_c = [f.forward(layout.ev_t[:, None]) if want_grad and f.trainable else (f(layout.ev_t), None)
             for f in k.psi]
    Phi_c = [f.forward(layout.phi_inputs) if want_grad and f.trainable else (f(layout.phi_inputs), None)
             for f in k.phi]
    Psi = np.column_stack([c[0] for c in Psi_c]) if L else np.zeros((layout.N, 0))
    Phi = np.column_stack([c[0] for c in Phi_c])
    dPsi = np.zeros_like(Psi)
    dPhi = np.zeros_like(Phi)
    dalpha = np.zeros_like(alpha)
    dB = np.zeros_like(B)
    dmu = np.zeros(Nn)
    value = 0.0
    breakdown = {}

    src, tgt = layout.p_src, layout.p_tgt
    vs, vt = layout.ev_v[src], layout.ev_v[tgt]
    A = Psi[src] * Phi[layout.sl_pair]
    Bp = B[:, vs, vt].T
    c = np.einsum("pr,rl,pl->p", Bp, alpha, A)
    lam = mu[layout.ev_v] + np.bincount(tgt, weights=c, minlength=layout.N)
    breakdown["min_event_intensity"] = float(lam.min()) if layout.N else np.inf
    g_lam = np.zeros(layout.N)
    if loglik:
        if strict:
            bad = np.flatnonzero(lam <= 0)
            if len(bad):
                i = bad[0]
                q = int(layout.ev_seq[i])
                raise NonPositiveIntensityAtEvent(q, int(i - layout.offsets[q]), float(lam[i]))
            logs, slope = np.log(lam), 1.0 / lam
        else:
            b = guard or 1e-6
            logs, slope = guarded_log(lam, b), guarded_log_slope(lam, b)
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
    if want_grad:
        dmu += np.bincount(layout.ev_v, weights=g_lam, minlength=Nn)
        if len(tgt):
            gc = g_lam[tgt]
            dA = gc[:, None] * (Bp @ alpha)
            dBp = gc[:, None] * (A @ alpha.T)
            dalpha += Bp.T @ (gc[:, None] * A)
            for l in range(L):
                dPsi[:, l] += np.bincount(src, weights=dA[:, l] * Phi[layout.sl_pair, l], minlength=layout.N)
            dPhi[layout.sl_pair] += dA * Psi[src]
            flat = vs * Nn + vt
            for r in range(R):
                dB[r] += np.bincount(flat, weights=dBp[:, r], minlength=Nn * Nn).reshape(Nn, Nn)

    if integral:
        Phint = layout.Wt @ Phi[layout.sl_lag]
        rows = B.sum(axis=2)                               # (R, N)
        X = rows[:, layout.ev_v].T
        Y = Psi * Phint
        mass = np.sum((X @ alpha) * Y, axis=1)
        total = (layout.M * mu.sum() * layout.T + mass.sum()) / M
        term = -integral * total
        breakdown["integral"] = term
        value += term
        if want_grad:
            cI = -integral / M
            dmu += cI * layout.M * layout.T
            dX = cI * (Y @ alpha.T)
            dY = cI * (X @ alpha)
            dalpha += cI * (X.T @ Y)
            dPsi += dY * Phint
            dPhi[layout.sl_lag] += layout.Wt.T @ (dY * Psi)
            for r in range(R):
                dB[r] += np.bincount(layout.ev_v, weights=dX[:, r], minlength=Nn)[:, None]

    if ls or barrier is not None:
        ls_total, bar_total, min_grid = 0.0, 0.0, np.inf
        for q, (g, j, sl, tw) in enumerate(layout.st):
            n_g = len(tw)
            off = layout.offsets[q]
            n_q = layout.lengths[q]
            At = np.zeros((L, n_g, n_q))
            for l in range(L):
                At[l, g, j] = Psi[off + j, l] * Phi[sl, l]
            vq = layout.ev_v[off:off + n_q]
            Bq = B[:, vq, :]                               # (R, n_q, N)
            lam_g = np.tile(mu, (n_g, 1))
            for r in range(R):
                for l in range(L):
                    lam_g += alpha[r, l] * (At[l] @ Bq[r])
            min_grid = min(min_grid, float(lam_g.min()))
            G = np.zeros_like(lam_g)
            if ls:
                ls_total += np.sum(lam_g ** 2 * tw[:, None])
                G += ls * 2.0 * lam_g * tw[:, None] / M
            if barrier is not None:
                w, b = barrier
                bar_total += -w * guarded_log(lam_g, b).sum()
                G += -w * guarded_log_slope(lam_g, b) / M
            if not want_grad:
                continue
            dmu += G.sum(axis=0)
            for l in range(L):
                dAt = sum(alpha[r, l] * (G @ Bq[r].T) for r in range(R))
                for r in range(R):
                    dalpha[r, l] += np.sum(At[l] * (G @ Bq[r].T))
                dvals = dAt[g, j]
                dPhi[sl, l] += dvals * Psi[off + j, l]
                dPsi[:, l] += np.bincount(off + j, weights=dvals * Phi[sl, l], minlength=layout.N)
            for r in range(R):
                dBq = sum(alpha[r, l] * (At[l].T @ G) for l in range(L))   # (n_q, N)
                np.add.at(dB[r], vq, dBq)
        breakdown["min_grid_intensity"] = min_grid
        if ls:
            term = ls * ls_total / M
            breakdown["ls_square"] = term
            value += term
        if barrier is not None:
            term = bar_total / M
            breakdown["barrier_grid"] = term
            value += term

    if not want_grad:
        return ObjectiveValue(float(value), np.zeros(0), breakdown)
    grads = []
    if model.learn_mu:
        grads.append(dmu / (1.0 + np.exp(-model._raw_mu)))
    if k.learn_alpha:
        grads.append(dalpha.ravel())
    for l, f in enumerate(k.psi):
        grads.append(f.backward(Psi_c[l][1], dPsi[:, l]) if f.trainable else np.zeros(0))
    for l, f in enumerate(k.phi):
        grads.append(f.backward(Phi_c[l][1], dPhi[:, l]) if f.trainable else np.zeros(0))
    if k.mode == "free":
        grads.append(dB.ravel())
    else:
        grads.append(np.einsum("rab,jab->rj", dB, k.powers).ravel())
    return ObjectiveValue(float(value), np.concatenate(grads), breakdown)


def graph_loglik(model: GraphModel, sequences, grid: Optional[GridSpec] = None) -> ObjectiveValue:
    """Average over sequences of ``sum_i log lambda_i - sum_v int lambda(t, v) dt``."""
    layout = GraphLayout(model, sequences, grid or GridSpec())
    return graph_terms(model, layout, loglik=1.0, integral=1.0, strict=True)


def graph_ls_loss(model: GraphModel, sequences, grid: Optional[GridSpec] = None) -> ObjectiveValue:
    """Average over sequences of ``sum_v int lambda(t, v)^2 dt - 2 sum_i lambda_i``."""
    layout = GraphLayout(model, sequences, grid or GridSpec())
    return graph_terms(model, layout, ls=1.0)


def fit_graph(model_init: GraphModel, data: Sequence[EventSequence],
              opts: FitOptions = FitOptions(objective="least_squares"), callback=None):
    """Fit a graph model by Adam on the LS (default) or MLE-with-barrier loss."""
    start = time.perf_counter()
    if opts.max_epochs == 0:
        return model_init, FitReport([], model_init.get_vector(), np.nan, np.nan, 0.0, "max_epochs", 0)
    layout = GraphLayout(model_init, data, opts.grid)

    def loss(theta, epoch):
        m = model_init.with_vector(theta)
        if opts.objective == "least_squares":
            return graph_terms(m, layout, ls=1.0)
        return graph_terms(m, layout, loglik=-1.0, integral=-1.0, guard=opts.barrier_threshold,
                           barrier=(opts.barrier_weight(epoch), opts.barrier_threshold))

    theta, trace, grad_norm, termination = adam_minimize(model_init.get_vector(), loss, opts, callback)
    model = model_init.with_vector(theta)
    ov = graph_terms(model, layout, barrier=(1.0, opts.barrier_threshold), want_grad=False)
    min_int = min(ov.breakdown["min_event_intensity"], ov.breakdown["min_grid_intensity"])
    return model, FitReport(trace, theta.copy(), float(min_int), grad_norm,
                            time.perf_counter() - start, termination, len(trace))
