"""Next-event density, point forecasts and forecast error."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import EventSequence, GridSpec
from .errors import InsufficientHistory, NegativeIntensity, TailMassTooLarge
from .intensity import SttpModel, intensity_table

PREDICTION_GRID = GridSpec(n_time=200, n_x=32, n_y=32)
TAIL_TOL = 1e-3


@dataclass
class DensityTable:
    """``density[i, j] = f(times[i], locations[j])`` on a forecast window.

    ``survival[i]`` is ``exp(-int_{t_n}^{times[i]} int_S lambda)``;
    ``locations`` is ``None`` for temporal models.
    """

    t_n: float
    times: np.ndarray
    locations: Optional[np.ndarray]
    cell_area: float
    intensity: np.ndarray
    survival: np.ndarray
    density: np.ndarray

    @property
    def tail_mass(self) -> float:
        return float(self.survival[-1])

    @property
    def time_marginal(self) -> np.ndarray:
        return self.density.sum(axis=1) * self.cell_area

    def captured_mass(self) -> float:
        return float(np.trapezoid(self.time_marginal, self.times))


def _default_horizon(model: SttpModel, history: EventSequence) -> float:
    if len(history) >= 2:
        gap = float(np.mean(np.diff(history.times)))
        if gap > 0:
            return 5.0 * gap
    if model.mu > 0:
        return 5.0 / (model.mu * model.area)
    return float(model.T)


def next_event_density(model: SttpModel, history: EventSequence, grid: Optional[GridSpec] = None,
                       horizon: Optional[float] = None, t_n: Optional[float] = None) -> DensityTable:
    """``f(t, s) = lambda(t, s) exp(-int_{t_n}^t int_S lambda)`` on ``[t_n, t_n + horizon]``.

    The time axis has ``grid.n_time + 1`` nodes and the inner integral is
    accumulated with the trapezoid rule; space uses cell midpoints.
    """
    grid = grid or PREDICTION_GRID
    if t_n is None:
        t_n = float(history.times[-1]) if len(history) else 0.0
    horizon = _default_horizon(model, history) if horizon is None else float(horizon)
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    # the first node sits just after t_n so the last event already excites
    times = t_n + horizon * np.linspace(1e-9, 1.0, grid.n_time + 1)
    if model.spatial:
        locs, cell = model.domain.midpoints(grid.n_x, grid.n_y)
    else:
        locs, cell = None, 1.0
    lam = intensity_table(model, history, times, locs)
    if lam.min() < -1e-12:
        raise NegativeIntensity(f"intensity {lam.min():.6g} < 0 on the forecast window")
    lam = np.maximum(lam, 0.0)
    rate = lam.sum(axis=1) * cell
    cum = np.concatenate([[0.0], np.cumsum(np.diff(times) * (rate[1:] + rate[:-1]) / 2)])
    surv = np.exp(-cum)
    return DensityTable(t_n, times, locs, cell, lam, surv, lam * surv[:, None])


@dataclass
class Forecast:
    time: float
    location: Optional[np.ndarray]
    tail_mass: float
    horizon: float


def _forecast_from(table: DensityTable) -> Forecast:
    S = table.survival
    rate = table.intensity.sum(axis=1) * table.cell_area
    # E[t] - t_n = int_0^inf S(u) du; past the horizon the survival is
    # continued with the final hazard rate
    body = float(np.trapezoid(S, table.times - table.t_n))
    tail = S[-1] / rate[-1] if rate[-1] > 0 else 0.0
    t_hat = table.t_n + body + tail
    loc = None
    if table.locations is not None:
        w = np.trapezoid(table.density, table.times, axis=0)
        mass = w.sum()
        loc = (w @ table.locations) / mass if mass > 0 else None
    return Forecast(float(t_hat), loc, table.tail_mass, float(table.times[-1] - table.t_n))


def predict_next(model: SttpModel, history: EventSequence, grid: Optional[GridSpec] = None,
                 horizon: Optional[float] = None, max_doublings: int = 8) -> Forecast:
    """Expected time and location of the next event.

    Without an explicit ``horizon`` the default is doubled until the tail
    mass drops below 1e-3; otherwise :class:`TailMassTooLarge` is raised.
    """
    explicit = horizon is not None
    h = _default_horizon(model, history) if horizon is None else float(horizon)
    for _ in range(max_doublings + 1):
        table = next_event_density(model, history, grid, h)
        if table.tail_mass < TAIL_TOL:
            return _forecast_from(table)
        if explicit:
            break
        h *= 2
    raise TailMassTooLarge(table.tail_mass)


@dataclass
class MaeResult:
    time_mae: float
    location_mae: float
    n_evaluated: int
    n_flagged: int


def mae_eval(model: SttpModel, sequences: Sequence[EventSequence], grid: Optional[GridSpec] = None) -> MaeResult:
    """Predict each sequence's final event from the preceding ones.

    Sequences whose forecast leaves too much tail mass are skipped and
    counted in ``n_flagged``.
    """
    dt, ds, flagged = [], [], 0
    for seq in sequences:
        if len(seq) < 2:
            raise InsufficientHistory("each sequence needs at least 2 events")
        n = len(seq)
        try:
            fc = predict_next(model, seq.head(n - 1), grid)
        except TailMassTooLarge:
            flagged += 1
            continue
        dt.append(abs(fc.time - seq.times[-1]))
        if fc.location is not None:
            ds.append(float(np.hypot(*(fc.location - seq.locations[-1]))))
    return MaeResult(
        float(np.mean(dt)) if dt else np.nan,
        float(np.mean(ds)) if ds else np.nan,
        len(dt), flagged,
    )
