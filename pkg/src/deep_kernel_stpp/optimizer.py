"""Full-batch Adam fitting for the MLE-with-barrier and least-squares objectives."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import EventSequence, GridSpec
from .errors import NonPositiveIntensityAtEvent
from .intensity import SttpModel
from .objectives import Layout, evaluate_terms

OBJECTIVES = ("mle_barrier", "least_squares")


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    The barrier weight at epoch ``e`` is
    ``barrier_w0 * barrier_decay ** (e // barrier_stage_epochs)``. Nodes whose
    intensity falls below ``barrier_threshold`` use a quadratic continuation
    of the log, both in the barrier and in the event term. The learning rate
    follows the same stages: ``lr * lr_decay ** (e // barrier_stage_epochs)``.
    """

    objective: str = "mle_barrier"
    max_epochs: int = 500
    lr: float = 1e-2
    lr_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    barrier_w0: float = 0.1
    barrier_decay: float = 0.5
    barrier_stage_epochs: int = 100
    barrier_threshold: float = 1e-3
    clip_norm: float = 10.0
    seed: int = 0
    tol: float = 1e-10
    patience: int = 10
    divergence_ratio: float = 10.0
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("moment decays must lie in (0, 1)")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_epochs < 0 or self.barrier_stage_epochs < 1:
            raise ValueError("epoch counts must be nonnegative")
        if not (self.barrier_w0 > 0 and 0 < self.barrier_decay <= 1 and self.barrier_threshold > 0):
            raise ValueError("invalid barrier schedule")

    def barrier_weight(self, epoch: int) -> float:
        return self.barrier_w0 * self.barrier_decay ** (epoch // self.barrier_stage_epochs)

    def learning_rate(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.barrier_stage_epochs)


@dataclass
class FitReport:
    trace: list
    params: np.ndarray
    min_intensity: float
    grad_norm: float
    seconds: float
    termination: str
    epochs: int = 0


def training_loss(model: SttpModel, layout: Layout, opts: FitOptions, epoch: int, want_grad=True):
    """Loss minimized at ``epoch``: ``-loglik + barrier`` or the LS loss."""
    if opts.objective == "least_squares":
        return evaluate_terms(model, layout, ls=1.0, want_grad=want_grad)
    return evaluate_terms(
        model, layout, loglik=-1.0, integral=-1.0,
        barrier=(opts.barrier_weight(epoch), opts.barrier_threshold),
        guard=opts.barrier_threshold, want_grad=want_grad,
    )


def _barrier_min(model, layout, b):
    ov = evaluate_terms(model, layout, barrier=(1.0, b), want_grad=False)
    return min(ov.breakdown["min_event_intensity"], ov.breakdown.get("min_grid_intensity", np.inf))


def adam_minimize(theta0, loss, opts: FitOptions, callback=None):
    """Adam descent on ``loss(theta, epoch) -> ObjectiveValue``.

    Returns ``(theta, trace, grad_norm, termination)``. Termination is
    ``converged`` when the relative loss change stays below ``tol`` for
    ``patience`` epochs, ``diverged`` on a non-finite loss or gradient or
    when the 10-epoch moving average exceeds the best moving average of the
    current barrier stage by ``divergence_ratio * (|best| + 1)``, else
    ``max_epochs``. A diverged run returns the last finite parameters.
    """
    theta = np.array(theta0, dtype=float)
    trace: list = []
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    termination = "max_epochs"
    grad_norm = np.nan
    quiet = 0
    best_avg = np.inf
    last_good = theta.copy()
    for epoch in range(opts.max_epochs):
        if epoch % opts.barrier_stage_epochs == 0:
            best_avg = np.inf
        ov = loss(theta, epoch)
        g = ov.grad
        if not (np.isfinite(ov.value) and np.all(np.isfinite(g))):
            termination = "diverged"
            theta = last_good
            break
        last_good = theta.copy()
        trace.append(ov.value)
        if callback is not None:
            callback(epoch, ov)
        grad_norm = float(np.linalg.norm(g))
        if grad_norm > opts.clip_norm:
            g = g * (opts.clip_norm / grad_norm)

        if len(trace) >= 10:
            avg = float(np.mean(trace[-10:]))
            if avg > best_avg + opts.divergence_ratio * (abs(best_avg) + 1.0):
                termination = "diverged"
                break
            best_avg = min(best_avg, avg)
        if len(trace) >= 2:
            rel = abs(trace[-1] - trace[-2]) / max(abs(trace[-2]), 1.0)
            quiet = quiet + 1 if rel < opts.tol else 0
            if quiet >= opts.patience:
                termination = "converged"
                break

        t = epoch + 1
        m = opts.beta1 * m + (1 - opts.beta1) * g
        v = opts.beta2 * v + (1 - opts.beta2) * g * g
        mhat = m / (1 - opts.beta1 ** t)
        vhat = v / (1 - opts.beta2 ** t)
        theta = theta - opts.learning_rate(epoch) * mhat / (np.sqrt(vhat) + opts.eps)
    return theta, trace, grad_norm, termination


def fit(model_init: SttpModel, data: Sequence[EventSequence], opts: FitOptions = FitOptions(),
        layout: Optional[Layout] = None, callback=None):
    """Fit by :func:`adam_minimize`. Returns ``(fitted model, FitReport)``."""
    start = time.perf_counter()
    if opts.max_epochs == 0:
        return model_init, FitReport([], model_init.get_vector(), np.nan, np.nan,
                                     time.perf_counter() - start, "max_epochs", 0)
    layout = layout or Layout(model_init, data, opts.grid, space_time=True,
                              ls_quadrature=opts.objective == "least_squares")
    loss = lambda theta, epoch: training_loss(model_init.with_vector(theta), layout, opts, epoch)
    theta, trace, grad_norm, termination = adam_minimize(model_init.get_vector(), loss, opts, callback)
    model = model_init.with_vector(theta)
    min_int = _barrier_min(model, layout, opts.barrier_threshold)
    report = FitReport(trace, theta.copy(), float(min_int), grad_norm,
                       time.perf_counter() - start, termination, len(trace))
    return model, report


@dataclass
class EvalMetrics:
    loglik_per_event: float
    ls_loss: float
    n_events: int
    flagged: bool = False
    message: str = ""


def evaluate(model: SttpModel, held_out: Sequence[EventSequence], grid: Optional[GridSpec] = None) -> EvalMetrics:
    """Held-out log-likelihood per event and LS loss; parameters are not touched.

    A nonpositive intensity at an event yields ``loglik_per_event = -inf``
    with ``flagged`` set.
    """
    grid = grid or GridSpec()
    layout = Layout(model, held_out, grid, space_time=True)
    n = int(layout.N)
    M = max(layout.M, 1)
    ls = evaluate_terms(model, layout, ls=1.0, want_grad=False).value
    try:
        ll = evaluate_terms(model, layout, loglik=1.0, integral=1.0, strict=True, want_grad=False).value
    except NonPositiveIntensityAtEvent as exc:
        return EvalMetrics(-np.inf, ls, n, True, str(exc))
    per_event = ll * M / n if n else ll * M
    return EvalMetrics(float(per_event), float(ls), n)
