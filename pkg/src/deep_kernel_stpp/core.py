"""Shared domain types: events, sequences, domains, grids and model config."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Event:
    """One event. Exactly one of ``s`` / ``node`` (or neither) is used per dataset."""

    t: float
    s: Optional[tuple] = None
    node: Optional[int] = None
    mark: Optional[tuple] = None

    @property
    def schema(self):
        return _schema(self.s is not None, self.node is not None, self.mark is not None)


def _schema(has_s, has_node, has_mark):
    return ("s" if has_s else "") + ("v" if has_node else "") + ("m" if has_mark else "")


@dataclass(frozen=True)
class TimeWindow:
    T: float

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"horizon T must be positive, got {self.T}")


@dataclass(frozen=True)
class SpatialDomain:
    """Axis-aligned rectangle ``[x_lo, x_hi] x [y_lo, y_hi]``."""

    x_lo: float = -1.0
    x_hi: float = 1.0
    y_lo: float = -1.0
    y_hi: float = 1.0

    def __post_init__(self):
        if not (self.x_hi > self.x_lo and self.y_hi > self.y_lo):
            raise ValueError("empty spatial domain")

    @property
    def area(self) -> float:
        return (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.x_hi - self.x_lo, self.y_hi - self.y_lo))

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_lo + self.x_hi) / 2, (self.y_lo + self.y_hi) / 2])

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return (
            (p[:, 0] >= self.x_lo) & (p[:, 0] <= self.x_hi)
            & (p[:, 1] >= self.y_lo) & (p[:, 1] <= self.y_hi)
        )

    def midpoints(self, nx: int, ny: int):
        """Cell midpoints of an ``nx x ny`` grid, x-major, with the cell area."""
        hx = (self.x_hi - self.x_lo) / nx
        hy = (self.y_hi - self.y_lo) / ny
        xs = self.x_lo + hx * (np.arange(nx) + 0.5)
        ys = self.y_lo + hy * (np.arange(ny) + 0.5)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()]), hx * hy


@dataclass(frozen=True, eq=False)
class EventSequence:
    """Ordered trajectory on ``[0, T]`` stored column-wise.

    ``locations`` is ``(n, 2)``, ``nodes`` is ``(n,)`` int, ``marks`` is
    ``(n, q)``; unused columns are ``None``.
    """

    times: np.ndarray
    window: TimeWindow
    locations: Optional[np.ndarray] = None
    nodes: Optional[np.ndarray] = None
    marks: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(np.ravel(self.times)))
        n = len(self.times)
        if self.locations is not None:
            loc = _frozen(self.locations).reshape(n, 2)
            loc.setflags(write=False)
            object.__setattr__(self, "locations", loc)
        if self.nodes is not None:
            object.__setattr__(self, "nodes", _frozen(np.ravel(self.nodes), np.int64))
        if self.marks is not None:
            m = _frozen(self.marks).reshape(n, -1)
            m.setflags(write=False)
            object.__setattr__(self, "marks", m)

    @classmethod
    def from_events(cls, events: Sequence[Event], window: TimeWindow) -> "EventSequence":
        events = list(events)
        times = [e.t for e in events]
        has_s = bool(events) and events[0].s is not None
        has_v = bool(events) and events[0].node is not None
        has_m = bool(events) and events[0].mark is not None
        schemas = {e.schema for e in events}
        if len(schemas) > 1:
            bad = [i for i, e in enumerate(events) if e.schema != events[0].schema]
            raise ValidationError([(i, "MixedSchema") for i in bad])
        return cls(
            times=np.array(times, dtype=float),
            window=window,
            locations=np.array([e.s for e in events], dtype=float).reshape(-1, 2) if has_s else None,
            nodes=np.array([e.node for e in events], dtype=np.int64) if has_v else None,
            marks=np.array([e.mark for e in events], dtype=float).reshape(len(events), -1) if has_m else None,
        )

    def __len__(self):
        return len(self.times)

    @property
    def T(self) -> float:
        return self.window.T

    @property
    def events(self) -> list:
        out = []
        for i in range(len(self)):
            out.append(Event(
                t=float(self.times[i]),
                s=None if self.locations is None else tuple(float(x) for x in self.locations[i]),
                node=None if self.nodes is None else int(self.nodes[i]),
                mark=None if self.marks is None else tuple(float(x) for x in self.marks[i]),
            ))
        return out

    def head(self, n: int) -> "EventSequence":
        """First ``n`` events on the same window."""
        return EventSequence(
            times=self.times[:n],
            window=self.window,
            locations=None if self.locations is None else self.locations[:n],
            nodes=None if self.nodes is None else self.nodes[:n],
            marks=None if self.marks is None else self.marks[:n],
        )

    def before(self, t: float) -> "EventSequence":
        return self.head(int(np.searchsorted(self.times, t, side="left")))

    def with_window(self, window: TimeWindow) -> "EventSequence":
        return EventSequence(self.times, window, self.locations, self.nodes, self.marks)


def find_violations(seq: EventSequence, dom: Optional[SpatialDomain] = None) -> list:
    """All invariant violations of ``seq`` as ``(index, reason)`` pairs."""
    out = []
    t = seq.times
    if len(t) == 0:
        return out
    for i in np.flatnonzero(~np.isfinite(t)):
        out.append((int(i), "NonFiniteTime"))
    for i in np.flatnonzero(np.diff(t) <= 0):
        out.append((int(i) + 1, "NonMonotoneTimes"))
    for i in np.flatnonzero((t < 0) | (t > seq.T)):
        out.append((int(i), "OutOfWindow"))
    if seq.locations is not None and seq.nodes is not None:
        out.append((0, "MixedSchema"))
    if seq.locations is not None and dom is not None:
        for i in np.flatnonzero(~dom.contains(seq.locations)):
            out.append((int(i), "OutOfDomain"))
    if seq.nodes is not None:
        for i in np.flatnonzero(seq.nodes < 0):
            out.append((int(i), "OutOfDomain"))
    return sorted(out)


def validate_sequence(seq: EventSequence, dom: Optional[SpatialDomain] = None) -> EventSequence:
    """Return ``seq`` unchanged, or raise :class:`ValidationError` listing violations."""
    violations = find_violations(seq, dom)
    if violations:
        raise ValidationError(violations)
    return seq


@dataclass(frozen=True)
class GridSpec:
    """Quadrature grid resolutions.

    Space-time nodes are cell midpoints of ``n_time x n_x x n_y`` cells over
    the window and domain. The lag axis has ``n_lag`` cells on ``[0, tau_max]``
    and the displacement axis ``n_disp x n_disp`` cells on the bounding box
    of the truncation ball.
    """

    n_time: int = 50
    n_x: int = 32
    n_y: int = 32
    n_lag: int = 200
    n_disp: int = 64

    def __post_init__(self):
        for name in ("n_time", "n_x", "n_y", "n_lag", "n_disp"):
            if int(getattr(self, name)) < 2:
                raise ValueError(f"{name} must be >= 2")

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(*(factor * getattr(self, n) for n in ("n_time", "n_x", "n_y", "n_lag", "n_disp")))

    def time_midpoints(self, T: float, t0: float = 0.0):
        h = (T - t0) / self.n_time
        return t0 + h * (np.arange(self.n_time) + 0.5), h

    def lag_midpoints(self, tau_max: float):
        h = tau_max / self.n_lag
        return h * (np.arange(self.n_lag) + 0.5), h

    def disp_axis(self, a_max: float):
        h = 2 * a_max / self.n_disp
        return -a_max + h * (np.arange(self.n_disp) + 0.5), h


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the deep low-rank kernel model."""

    L: int = 2
    R: int = 2
    Q: int = 0
    mu: float = 1.0
    learn_mu: bool = True
    tau_max: float = 3.0
    a_max: float = 2.0
    psi_hidden: tuple = (32, 32)
    phi_hidden: tuple = (32, 32)
    u_hidden: tuple = (32, 32)
    v_hidden: tuple = (32, 32)
    mark_hidden: tuple = (32, 32)
    mark_dim: int = 0
    spatial: bool = True

    def __post_init__(self):
        if self.L < 1 or self.R < 1 or self.Q < 0:
            raise ValueError("ranks must satisfy L >= 1, R >= 1, Q >= 0")
        if self.mu < 0:
            raise ValueError("baseline must be nonnegative")
        if not (self.tau_max > 0 and self.a_max > 0):
            raise ValueError("truncation thresholds must be positive")

    def check_domain(self, window: TimeWindow, dom: Optional[SpatialDomain]):
        if self.tau_max > window.T:
            raise ValueError("tau_max exceeds the horizon")
        if dom is not None and self.a_max > dom.diameter:
            raise ValueError("a_max exceeds the domain diameter")
