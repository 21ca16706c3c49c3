"""Discrete-time, discrete-location Bernoulli events with a lagged linear link.

``P(omega[j, k] = 1 | past) = beta0 + sum_{l, i} beta[k, l, i] omega[j - i, l]``
for lags ``i = 1..d``. Fitting is least squares with a feasibility step
that keeps every training probability inside [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import Infeasible, InsufficientHistory


@dataclass(frozen=True, eq=False)
class DiscreteParams:
    """``beta[k, l, i - 1]`` is the effect of an event at ``l`` with lag ``i`` on ``k``."""

    beta0: float
    beta: np.ndarray

    def __post_init__(self):
        b = np.array(self.beta, dtype=float)
        if b.ndim != 3 or b.shape[0] != b.shape[1] or b.shape[2] < 1:
            raise ValueError(f"beta must be K x K x d, got {b.shape}")
        if not (np.isfinite(self.beta0) and np.all(np.isfinite(b))):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "beta", b)

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def d(self) -> int:
        return self.beta.shape[2]


@dataclass(frozen=True, eq=False)
class BinaryPanel:
    """``omega[j, k]`` in {0, 1} for time step ``j`` and location ``k``."""

    omega: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.omega)
        if w.ndim != 2:
            raise ValueError("panel must be J x K")
        if not np.isin(w, (0, 1)).all():
            raise ValueError("panel entries must be 0 or 1")
        object.__setattr__(self, "omega", w.astype(np.int8))

    @property
    def J(self) -> int:
        return self.omega.shape[0]

    @property
    def K(self) -> int:
        return self.omega.shape[1]


class DiscreteProb(NamedTuple):
    value: float
    feasible: bool


def lagged_design(omega, d: int) -> np.ndarray:
    """Rows ``j = d..J-1``; column ``l * d + (i - 1)`` holds ``omega[j - i, l]``."""
    omega = np.asarray(omega, dtype=float)
    J, K = omega.shape
    if J <= d:
        raise InsufficientHistory(f"need more than d={d} time steps, got {J}")
    cols = [omega[d - i:J - i, l] for l in range(K) for i in range(1, d + 1)]
    return np.column_stack(cols)


def _coef_matrix(beta) -> np.ndarray:
    """``beta`` (K, K, d) as a (K * d, K) matrix matching :func:`lagged_design`."""
    K, _, d = beta.shape
    return beta.reshape(K, K * d).T


def _from_coef(C, K, d) -> np.ndarray:
    return C.T.reshape(K, K, d)


def discrete_prob(params: DiscreteParams, panel: BinaryPanel, j: int, k: int) -> DiscreteProb:
    """Linear probability at ``(j, k)``; values outside [0, 1] are flagged, not clipped."""
    d = params.d
    if j < d:
        raise InsufficientHistory(f"time index {j} < memory depth {d}")
    window = panel.omega[j - d:j][::-1].astype(float)     # window[i - 1, l] = omega[j - i, l]
    p = params.beta0 + float(np.sum(params.beta[k] * window.T))
    return DiscreteProb(p, 0.0 <= p <= 1.0)


def all_probs(params: DiscreteParams, panel: BinaryPanel) -> np.ndarray:
    """Probabilities for time steps ``d..J-1``, shape ``(J - d, K)``."""
    X = lagged_design(panel.omega, params.d)
    return params.beta0 + X @ _coef_matrix(params.beta)


def _feasible_step(b0, C, X):
    """Clip ``beta0`` to [0, 1] and shrink each location's coefficients toward zero
    by the smallest ratio that puts all its training probabilities in [0, 1]."""
    b0 = float(np.clip(b0, 0.0, 1.0))
    Z = X @ C
    hi = Z.max(axis=0)
    lo = Z.min(axis=0)
    scale = np.ones(C.shape[1])
    over = hi > 1.0 - b0
    scale[over] = np.minimum(scale[over], (1.0 - b0) / hi[over])
    under = lo < -b0
    scale[under] = np.minimum(scale[under], b0 / -lo[under])
    return b0, C * scale


@dataclass
class DiscreteFit:
    params: DiscreteParams
    residual: float
    iterations: int
    degenerate: bool = False


def fit_discrete(panel: BinaryPanel, d: int, max_iter: int = 5000, tol: float = 1e-12,
                 seed: int = 0) -> DiscreteFit:
    """Least-squares fit by accelerated projected gradient descent from zero.

    The residual is the mean over ``j >= d`` and ``k`` of
    ``(omega[j, k] - p[j, k])^2``. ``seed`` is accepted for interface
    uniformity; the iteration is deterministic.
    """
    if d < 1:
        raise ValueError("memory depth must be >= 1")
    X = lagged_design(panel.omega, d)
    Y = panel.omega[d:].astype(float)
    n, K = Y.shape
    if not Y.any() and not panel.omega.any():
        zero = DiscreteParams(0.0, np.zeros((K, K, d)))
        return DiscreteFit(zero, 0.0, 0, True)
    Z = np.column_stack([np.ones(n), X])
    G = Z.T @ Z
    ZtY = Z.T @ Y
    lip = np.linalg.eigvalsh(G)[-1]

    def gradient_step(b0, C):
        # one 1/L step per location on mean((y_k - b0 - X c_k)^2), then the
        # shared intercept is projected to the average of the per-location ones
        W = np.vstack([np.full((1, K), b0), C])
        W = W - (G @ W - ZtY) / lip
        return W[0].mean(), W[1:]

    b0, C = 0.0, np.zeros((K * d, K))
    yb0, yC = b0, C
    t = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        nb0, nC = _feasible_step(*gradient_step(yb0, yC), X)
        t_next = (1 + np.sqrt(1 + 4 * t * t)) / 2
        mom = (t - 1) / t_next
        change = abs(nb0 - b0) + np.abs(nC - C).max()
        yb0 = nb0 + mom * (nb0 - b0)
        yC = nC + mom * (nC - C)
        b0, C, t = nb0, nC, t_next
        if change < tol:
            break
    P = b0 + X @ C
    if P.min() < -1e-9 or P.max() > 1 + 1e-9:
        raise Infeasible("feasibility step failed to keep probabilities in [0, 1]")
    params = DiscreteParams(b0, _from_coef(C, K, d))
    return DiscreteFit(params, float(np.mean((Y - P) ** 2)), it)


def residual(params: DiscreteParams, panel: BinaryPanel) -> float:
    P = all_probs(params, panel)
    return float(np.mean((panel.omega[params.d:] - P) ** 2))


def granger_adjacency(params: DiscreteParams, threshold: float = 0.0) -> np.ndarray:
    """``A[l, k] = 1`` iff ``max_i |beta[k, l, i]| > threshold`` (l Granger-causes k)."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return (np.abs(params.beta).max(axis=2) > threshold).T.astype(int)


def simulate_panel(params: DiscreteParams, J: int, seed: int = 0) -> BinaryPanel:
    """Sequentially sample a panel; the first ``d`` rows use probability ``beta0``."""
    rng = np.random.Generator(np.random.Philox(seed))
    K, d = params.K, params.d
    omega = np.zeros((J, K), dtype=np.int8)
    C = _coef_matrix(params.beta)
    for j in range(J):
        if j < d:
            p = np.full(K, params.beta0)
        else:
            x = omega[j - d:j][::-1].T.reshape(-1)          # x[l * d + i - 1] = omega[j - i, l]
            p = params.beta0 + x @ C
        if p.min() < 0 or p.max() > 1:
            raise Infeasible(f"probability {p} outside [0, 1] at step {j}")
        omega[j] = rng.uniform(size=K) < p
    return BinaryPanel(omega)
