"""Finite-rank influence kernels.

A :class:`LowRankKernel` is

    k(t', t, s', s) = sum_{r,l} alpha[r, l] psi_l(t') u_r(s') phi_l(t - t') v_r(s - s')

truncated to ``0 < t - t' <= tau_max`` and ``|s - s'| <= a_max``. Each basis
is either a trainable :class:`~deep_kernel_stpp.neural_basis.MlpBasis` or a
fixed :class:`~deep_kernel_stpp.neural_basis.FunctionBasis`, so the same type
holds learned deep kernels and closed-form ground truths.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .core import GridSpec, ModelConfig
from .errors import DimensionMismatch, NonCausalPair
from .neural_basis import FunctionBasis, MlpBasis, constant_basis


class LowRankKernel:
    """Spatio-temporal (or purely temporal when ``spatial=False``) low-rank kernel.

    Parameters
    ----------
    alpha : array (R, L)
        Mixing coefficients, any sign.
    psi, phi : sequences of L scalar bases on time / lag.
    u, v : sequences of R scalar bases on location / displacement. Ignored
        (treated as 1) for temporal kernels.
    """

    def __init__(self, alpha, psi, phi, u=None, v=None, tau_max=3.0, a_max=2.0,
                 spatial=True, learn_alpha=True):
        self.alpha = np.array(alpha, dtype=float, ndmin=2)
        self.psi = list(psi)
        self.phi = list(phi)
        self.spatial = bool(spatial)
        self.R, self.L = self.alpha.shape
        if self.spatial:
            self.u = list(u)
            self.v = list(v)
            if len(self.u) != self.R or len(self.v) != self.R:
                raise DimensionMismatch("need R spatial bases u and v")
        else:
            if self.R != 1:
                raise DimensionMismatch("temporal kernels have R = 1")
            self.u, self.v = [], []
        if len(self.psi) != self.L or len(self.phi) != self.L:
            raise DimensionMismatch("need L temporal bases psi and phi")
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("alpha must be finite")
        self.tau_max = float(tau_max)
        self.a_max = float(a_max)
        self.learn_alpha = learn_alpha

    # parameters ---------------------------------------------------------
    @property
    def bases(self) -> list:
        return [*self.psi, *self.phi, *self.u, *self.v]

    @property
    def n_params(self) -> int:
        return (self.alpha.size if self.learn_alpha else 0) + sum(b.size for b in self.bases)

    def get_vector(self) -> np.ndarray:
        parts = [self.alpha.ravel()] if self.learn_alpha else []
        parts += [b.get_vector() for b in self.bases]
        return np.concatenate(parts) if parts else np.zeros(0)

    def with_vector(self, vec) -> "LowRankKernel":
        vec = np.asarray(vec, dtype=float)
        k = 0
        alpha = self.alpha
        if self.learn_alpha:
            alpha = vec[:self.alpha.size].reshape(self.alpha.shape)
            k = self.alpha.size
        new = []
        for b in self.bases:
            new.append(b.with_vector(vec[k:k + b.size]))
            k += b.size
        if k != len(vec):
            raise DimensionMismatch(f"expected {k} parameters, got {len(vec)}")
        L, R = self.L, self.R
        return LowRankKernel(
            alpha, new[:L], new[L:2 * L],
            new[2 * L:2 * L + R] if self.spatial else None,
            new[2 * L + R:] if self.spatial else None,
            self.tau_max, self.a_max, self.spatial, self.learn_alpha,
        )

    def with_alpha(self, alpha) -> "LowRankKernel":
        return LowRankKernel(alpha, self.psi, self.phi, self.u or None, self.v or None,
                             self.tau_max, self.a_max, self.spatial, self.learn_alpha)

    # evaluation ---------------------------------------------------------
    def source_factors(self, t_src, s_src=None):
        """``(Psi (n, L), U (n, R))`` at source events."""
        t_src = np.asarray(t_src, dtype=float).reshape(-1)
        Psi = np.column_stack([f(t_src) for f in self.psi])
        if self.spatial:
            S = np.asarray(s_src, dtype=float).reshape(-1, 2)
            U = np.column_stack([f(S) for f in self.u])
        else:
            U = np.ones((len(t_src), 1))
        return Psi, U

    def lag_factors(self, tau):
        tau = np.asarray(tau, dtype=float).reshape(-1)
        return np.column_stack([f(tau) for f in self.phi])

    def disp_factors(self, disp):
        if not self.spatial:
            return np.ones((len(np.atleast_2d(disp)), 1))
        D = np.asarray(disp, dtype=float).reshape(-1, 2)
        return np.column_stack([f(D) for f in self.v])

    def in_support(self, tau, disp=None):
        tau = np.asarray(tau, dtype=float)
        ok = (tau > 0) & (tau <= self.tau_max)
        if self.spatial and disp is not None:
            d = np.asarray(disp, dtype=float).reshape(*tau.shape, 2)
            ok &= np.hypot(d[..., 0], d[..., 1]) <= self.a_max
        return ok

    def evaluate(self, t_src, t, s_src=None, s=None) -> np.ndarray:
        """Vectorized kernel values over broadcast pairs; 0 outside the support."""
        t_src, t = np.broadcast_arrays(np.asarray(t_src, float), np.asarray(t, float))
        shape = t.shape
        t_src, t = t_src.reshape(-1), t.reshape(-1)
        tau = t - t_src
        if self.spatial:
            s_src = np.broadcast_to(np.asarray(s_src, float), shape + (2,)).reshape(-1, 2)
            s = np.broadcast_to(np.asarray(s, float), shape + (2,)).reshape(-1, 2)
            disp = s - s_src
        else:
            disp = None
        ok = self.in_support(tau, disp)
        out = np.zeros(len(tau))
        if ok.any():
            Psi, U = self.source_factors(t_src[ok], None if s_src is None else s_src[ok])
            Phi = self.lag_factors(tau[ok])
            V = self.disp_factors(disp[ok] if self.spatial else np.zeros((ok.sum(), 2)))
            out[ok] = np.einsum("nr,rl,nl->n", U * V, self.alpha, Psi * Phi)
        return out.reshape(shape)

    def temporal_mass(self, x):
        """``int_0^x phi_l`` for each l, shape ``(n, L)``, with x clipped to tau_max."""
        x = np.clip(np.asarray(x, dtype=float).reshape(-1), 0.0, self.tau_max)
        cols = []
        for f in self.phi:
            if getattr(f, "antiderivative", None) is not None:
                cols.append(f.antiderivative(x))
            else:
                cols.append(_cumulative_quadrature(f, x, self.tau_max))
        return np.column_stack(cols)


def _cumulative_quadrature(f, x, tau_max, n=2000):
    h = tau_max / n
    mids = h * (np.arange(n) + 0.5)
    vals = f(mids)
    cum = np.concatenate([[0.0], np.cumsum(vals) * h])
    k = np.minimum((x / h).astype(int), n - 1)
    return cum[k] + (x - k * h) * vals[k]


class MarkedKernel:
    """Low-rank kernel with mark bases ``g_q`` (source mark) and ``h_q`` (target mark).

    ``alpha`` has shape ``(L, R, Q)``; the bases of ``base`` supply psi, phi,
    u, v (its own alpha is unused).
    """

    def __init__(self, base: LowRankKernel, alpha, g, h):
        self.base = base
        self.alpha = np.array(alpha, dtype=float)
        self.g = list(g)
        self.h = list(h)
        L, R = base.L, base.R
        if self.alpha.ndim != 3 or self.alpha.shape[:2] != (L, R):
            raise DimensionMismatch(f"alpha must have shape ({L}, {R}, Q)")
        self.Q = self.alpha.shape[2]
        if len(self.g) != self.Q or len(self.h) != self.Q:
            raise DimensionMismatch("need Q mark bases g and h")
        self.tau_max, self.a_max, self.spatial = base.tau_max, base.a_max, base.spatial

    @classmethod
    def from_unmarked(cls, k: LowRankKernel, mark_dim: int = 1) -> "MarkedKernel":
        """Embed ``k`` with Q = 1 and g = h = 1."""
        one = constant_basis(1.0, mark_dim)
        return cls(k, k.alpha.T[:, :, None], [one], [one])

    def evaluate(self, t_src, t, s_src=None, s=None, m_src=None, m=None) -> np.ndarray:
        b = self.base
        t_src, t = np.broadcast_arrays(np.asarray(t_src, float), np.asarray(t, float))
        shape = t.shape
        t_src, t = t_src.reshape(-1), t.reshape(-1)
        n = len(t)
        tau = t - t_src
        disp = None
        if b.spatial:
            s_src = np.broadcast_to(np.asarray(s_src, float), shape + (2,)).reshape(-1, 2)
            s = np.broadcast_to(np.asarray(s, float), shape + (2,)).reshape(-1, 2)
            disp = s - s_src
        dim = self.g[0].input_dim
        m_src = np.broadcast_to(np.asarray(m_src, float), shape + (dim,)).reshape(n, dim)
        m = np.broadcast_to(np.asarray(m, float), shape + (dim,)).reshape(n, dim)
        ok = b.in_support(tau, disp)
        out = np.zeros(n)
        if ok.any():
            Psi, U = b.source_factors(t_src[ok], None if s_src is None else s_src[ok])
            Phi = b.lag_factors(tau[ok])
            V = b.disp_factors(disp[ok] if b.spatial else np.zeros((ok.sum(), 2)))
            G = np.column_stack([f(m_src[ok]) for f in self.g])
            H = np.column_stack([f(m[ok]) for f in self.h])
            out[ok] = np.einsum("nl,nr,nq,lrq->n", Psi * Phi, U * V, G * H, self.alpha)
        return out.reshape(shape)


def eval_kernel(k, t_prime, t, s_prime=None, s=None) -> float:
    """Scalar kernel value; raises :class:`NonCausalPair` unless ``t > t_prime``."""
    if not t > t_prime:
        raise NonCausalPair(f"t={t} must exceed t'={t_prime}")
    return float(k.evaluate(t_prime, t, s_prime, s))


def eval_marked_kernel(k: MarkedKernel, t_prime, t, s_prime, s, m_prime, m) -> float:
    if not t > t_prime:
        raise NonCausalPair(f"t={t} must exceed t'={t_prime}")
    dim = k.g[0].input_dim
    if np.size(m_prime) != dim or np.size(m) != dim:
        raise DimensionMismatch(f"marks must have dimension {dim}")
    return float(k.evaluate(t_prime, t, s_prime, s, m_prime, m))


# ---------------------------------------------------------------------------
# deep kernel construction

def deep_kernel(cfg: ModelConfig, seed: int = 0, alpha_scale: float = 0.1,
                horizon: Optional[float] = None, domain=None) -> LowRankKernel:
    """Randomly initialised deep kernel with MLP bases.

    Temporal decay bases phi use a linear output (inhibition allowed); all
    other bases use softplus outputs. Network inputs are rescaled to O(1):
    source times by ``2 / horizon``, lags by ``4 / tau_max``, source
    locations by ``4 / extent`` of ``domain`` per axis and displacements
    by ``4 / a_max``.
    """
    L, R = cfg.L, cfg.R
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(2 * L + 2 * R + 1)]
    t_scale = 1.0 if horizon is None else 2.0 / horizon
    psi = [MlpBasis.create(1, cfg.psi_hidden, "softplus", seeds[i], t_scale) for i in range(L)]
    phi = [MlpBasis.create(1, cfg.phi_hidden, "linear", seeds[L + i], 4.0 / cfg.tau_max)
           for i in range(L)]
    if cfg.spatial:
        s_scale = 1.0
        if domain is not None:
            s_scale = 4.0 / np.array([domain.x_hi - domain.x_lo, domain.y_hi - domain.y_lo])
        u = [MlpBasis.create(2, cfg.u_hidden, "softplus", seeds[2 * L + r], s_scale) for r in range(R)]
        v = [MlpBasis.create(2, cfg.v_hidden, "softplus", seeds[2 * L + R + r], 4.0 / cfg.a_max)
             for r in range(R)]
    else:
        u = v = None
        R = 1
    rng = np.random.Generator(np.random.Philox(seeds[-1]))
    alpha = alpha_scale * rng.uniform(0.5, 1.0, size=(R, L))
    return LowRankKernel(alpha, psi, phi, u, v, cfg.tau_max, cfg.a_max, cfg.spatial)


def zero_like(k: LowRankKernel) -> LowRankKernel:
    return k.with_alpha(np.zeros_like(k.alpha))


# ---------------------------------------------------------------------------
# parametric ground truths

@dataclass(frozen=True)
class GroundTruthParams:
    """Closed-form nonstationary rank-(2, 2) kernel used for recovery experiments."""

    a_s: float = 0.3
    b_s: float = 0.4
    a_t: float = 0.02
    b_t: float = 0.02
    sigma1: float = 0.2
    sigma2: float = 0.3
    beta: float = 2.0
    # alpha[r, l] for (r, l) = (1,1), (1,2), (2,1), (2,2)
    alpha: tuple = (0.6, 0.15, 0.225, 0.525)
    offset: float = 0.8
    ramp_end: float = 3.0

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0 and self.beta > 0):
            raise ValueError("sigma1, sigma2 and beta must be positive")
        vals = [self.a_s, self.b_s, self.a_t, self.b_t, self.offset, *self.alpha]
        if not np.all(np.isfinite(vals)):
            raise ValueError("parameters must be finite")


def _gauss2(sigma, shift):
    c = 1.0 / (2 * np.pi * sigma ** 2)

    def f(D):
        d = D - shift
        return c * np.exp(-(d[:, 0] ** 2 + d[:, 1] ** 2) / (2 * sigma ** 2))
    return f


def ground_truth_kernel(p: GroundTruthParams = GroundTruthParams(), tau_max=3.0, a_max=2.0) -> LowRankKernel:
    beta, e = p.beta, p.ramp_end

    def ramp_int(x):
        m = np.minimum(np.asarray(x, float), e)
        return 0.5 * m ** 2 - m

    psi = [
        FunctionBasis(lambda t: 1 - p.a_t * t, name="1-a_t t"),
        FunctionBasis(lambda t: 1 - p.b_t * t, name="1-b_t t"),
    ]
    phi = [
        FunctionBasis(lambda x: np.exp(-beta * x),
                      antiderivative=lambda x: (1 - np.exp(-beta * np.asarray(x, float))) / beta,
                      name="exp(-beta x)"),
        FunctionBasis(lambda x: (x - 1.0) * (x < e), antiderivative=ramp_int,
                      name="(x-1)1[x<3]"),
    ]
    u = [
        FunctionBasis(lambda S: 1 - p.a_s * (S[:, 1] + 1), 2, name="1-a_s(y+1)"),
        FunctionBasis(lambda S: 1 - p.b_s * (S[:, 1] + 1), 2, name="1-b_s(y+1)"),
    ]
    v = [
        FunctionBasis(_gauss2(p.sigma1, np.zeros(2)), 2, name="gauss(sigma1)"),
        FunctionBasis(_gauss2(p.sigma2, np.full(2, p.offset)), 2, name="gauss(sigma2, offset)"),
    ]
    alpha = np.array(p.alpha, dtype=float).reshape(2, 2)
    return LowRankKernel(alpha, psi, phi, u, v, tau_max, a_max, True, learn_alpha=False)


def gaussian_box_mass(sigma, center, lo, hi):
    """Mass of an isotropic Gaussian density over the box ``[lo, hi]`` (2-vectors)."""
    center = np.atleast_2d(center)
    z = lambda a: erf(a / (np.sqrt(2) * sigma))
    px = 0.5 * (z(hi[0] - center[:, 0]) - z(lo[0] - center[:, 0]))
    py = 0.5 * (z(hi[1] - center[:, 1]) - z(lo[1] - center[:, 1]))
    return px * py


@dataclass(frozen=True)
class ExpHawkesParams:
    """Temporal Hawkes process with kernel ``a exp(-b tau)``; branching ratio a/b."""

    mu: float = 1.0
    a: float = 0.5
    b: float = 1.0

    def __post_init__(self):
        if self.mu < 0 or self.a < 0 or self.b <= 0:
            raise ValueError("need mu >= 0, a >= 0, b > 0")


def exp_hawkes_kernel(p: ExpHawkesParams, tau_max: Optional[float] = None) -> LowRankKernel:
    """Truncated at ``tau_max`` (default: where the kernel falls below 1e-14 of its peak)."""
    a, b = p.a, p.b
    if tau_max is None:
        tau_max = 14 * np.log(10) / b
    phi = FunctionBasis(lambda x: a * np.exp(-b * x),
                        antiderivative=lambda x: a / b * (1 - np.exp(-b * np.asarray(x, float))),
                        name="a exp(-b x)")
    return LowRankKernel([[1.0]], [constant_basis(1.0)], [phi], tau_max=tau_max,
                         a_max=1.0, spatial=False, learn_alpha=False)


def separable_temporal_kernel(alpha, psi: Callable, phi: Callable, tau_max, phi_int=None) -> LowRankKernel:
    """Rank-1 temporal kernel ``alpha psi(t') phi(tau)`` from plain callables."""
    return LowRankKernel([[alpha]], [FunctionBasis(psi)], [FunctionBasis(phi, antiderivative=phi_int)],
                         tau_max=tau_max, spatial=False, learn_alpha=False)


# ---------------------------------------------------------------------------
# grid tables and rank analysis

def kernel_lag_grid(k: LowRankKernel, grid: GridSpec, t_src: float = 0.0, s_src=(0.0, 0.0)):
    """Kernel on (lag midpoints) x (displacement midpoints), lag-major.

    Returns ``(table, lags, displacements)`` where ``table[i, j]`` is the
    kernel at lag ``lags[i]`` and displacement ``displacements[j]`` (x-major).
    """
    lags, _ = grid.lag_midpoints(k.tau_max)
    if not k.spatial:
        return k.evaluate(t_src, t_src + lags)[:, None], lags, np.zeros((1, 2))
    ax, _ = grid.disp_axis(k.a_max)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    disp = np.column_stack([X.ravel(), Y.ravel()])
    s_src = np.asarray(s_src, float)
    T = np.broadcast_to((t_src + lags)[:, None], (len(lags), len(disp)))
    S = np.broadcast_to(s_src + disp, (len(lags), len(disp), 2))
    table = k.evaluate(t_src, T, s_src, S)
    return table, lags, disp


def rank_demo_kernel(t_prime, tau):
    """Nonstationary temporal kernel with a rank-one reparameterized form."""
    t_prime = np.asarray(t_prime, float)
    tau = np.asarray(tau, float)
    with np.errstate(over="ignore"):
        gate = 1.0 / (1.0 + np.exp(5.0 * (tau - 3.0)))
    return 0.3 * np.sin(1.2 * t_prime) * np.sin(2.0 * tau) * np.exp(-0.5 * tau) * gate


def discretize_pair_forms(k: Callable = rank_demo_kernel, n: int = 200):
    """Tabulate ``k(t', tau)`` on the integer grid 1..n in both parameterizations.

    ``K_orig[i, j] = k(t'_j, t_i - t'_j)`` for ``t'_j < t_i`` (else 0);
    ``K_repar[j, d] = k(t'_j, d)`` for lags ``d = 1..n``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    g = np.arange(1, n + 1, dtype=float)
    Ti, Tj = np.meshgrid(g, g, indexing="ij")
    lag = Ti - Tj
    K_orig = np.where(lag > 0, k(Tj, np.where(lag > 0, lag, 1.0)), 0.0)
    K_repar = k(g[:, None], g[None, :])
    return K_orig, K_repar


def effective_rank(M, rel_tol: float = 1e-10) -> int:
    """Number of singular values above ``rel_tol`` times the largest."""
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


def evaluation_points(T: float, domain, tau_max: float, a_max: float, n_lag: int = 20,
                      n_disp: int = 16, n_origin: int = 16):
    """Points ``(t', t, s', s)`` for comparing kernels.

    Lags are midpoints of ``n_lag`` cells on ``[0, tau_max]``, displacements
    midpoints of an ``n_disp x n_disp`` grid on ``[-a_max, a_max]^2``, and the
    ``n_origin`` source points pair a square grid of source locations over the
    domain with evenly spaced source times. Targets outside the domain or
    the truncation ball are dropped.
    """
    lags = tau_max / n_lag * (np.arange(n_lag) + 0.5)
    side = int(round(np.sqrt(n_origin)))
    if side * side != n_origin:
        raise ValueError("n_origin must be a perfect square")
    src, _ = domain.midpoints(side, side)
    t_src = T * (np.arange(n_origin) + 0.5) / n_origin
    h = 2 * a_max / n_disp
    ax = -a_max + h * (np.arange(n_disp) + 0.5)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    disp = np.column_stack([X.ravel(), Y.ravel()])
    disp = disp[np.hypot(disp[:, 0], disp[:, 1]) <= a_max]
    tp, t, sp, s = [], [], [], []
    for j in range(n_origin):
        tgt = src[j] + disp
        tgt = tgt[domain.contains(tgt)]
        n = len(tgt)
        tp.append(np.full(n * n_lag, t_src[j]))
        t.append(np.repeat(t_src[j] + lags, n))
        sp.append(np.tile(src[j], (n * n_lag, 1)))
        s.append(np.tile(tgt, (n_lag, 1)))
    return np.concatenate(tp), np.concatenate(t), np.concatenate(sp), np.concatenate(s)


def kernel_relative_error(k_fit: LowRankKernel, k_true: LowRankKernel, points) -> float:
    """``||k_fit - k_true|| / ||k_true||`` over the given evaluation points."""
    a = k_fit.evaluate(*points)
    b = k_true.evaluate(*points)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
