"""Cost functionals of continuous piecewise-linear paths.

``path_cost`` integrates the local rate along the segments of a path.
``dilated_cost`` additionally lets each segment run slower, by a factor
``theta_j >= 1``, as long as the total extra time stays within a budget.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .csvio import format_path_csv, read_path_csv, write_csv
from .errors import ArtifactError, ModelError, NegativeCoordinate, SamplerFailure
from .model import NetworkModel, format_face
from .variational import RateOptions, local_rate_result

__all__ = [
    "PiecewisePath",
    "DilationSchedule",
    "SegmentCost",
    "CostBreakdown",
    "segment_face",
    "path_cost",
    "dilated_cost",
    "refine_trace",
    "load_path",
    "cost_report_csv",
]


@dataclass(frozen=True)
class PiecewisePath:
    """Continuous piecewise-linear path through the knots ``(times[i], points[i])``."""

    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        x = np.asarray(self.points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if len(t) < 2:
            raise ValueError("a path needs at least two knots")
        if x.shape[0] != len(t):
            raise ValueError("times and points have different lengths")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise ValueError("knots must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knot times must be strictly increasing")
        if np.any(x < 0):
            raise NegativeCoordinate("path leaves the orthant")
        t.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", x)

    @classmethod
    def line(cls, x0, v, horizon: float, t0: float = 0.0) -> "PiecewisePath":
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        return cls([t0, t0 + horizon], [x0, x0 + horizon * np.asarray(v, dtype=float)])

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def n_segments(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def segments(self):
        """Yield ``(duration, start point, end point)`` per segment."""
        for k in range(self.n_segments):
            yield float(self.times[k + 1] - self.times[k]), self.points[k], self.points[k + 1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.times, self.points[:, i]) for i in range(self.dimension)], axis=-1)

    def to_csv(self) -> str:
        return format_path_csv(self.times, self.points)


def load_path(path_or_text) -> PiecewisePath:
    """Read a path CSV from a file name or, if it contains a newline, from text."""
    text = path_or_text
    if "\n" not in str(path_or_text):
        with open(path_or_text) as fh:
            text = fh.read()
    times, points = read_path_csv(text)
    return PiecewisePath(times, points)


@dataclass(frozen=True)
class DilationSchedule:
    factors: tuple
    budget: float

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("dilation budget must be nonnegative")
        if any(f < 1 for f in self.factors):
            raise ValueError("dilation factors must be at least 1")

    def extra_time(self, durations) -> float:
        return float(np.sum((np.asarray(self.factors) - 1.0) * np.asarray(durations)))


@dataclass(frozen=True)
class SegmentCost:
    face: frozenset
    velocity: np.ndarray
    duration: float
    cost: float
    theta: float = 1.0


@dataclass(frozen=True)
class CostBreakdown:
    total: float
    per_segment: list = field(default_factory=list)


def segment_face(x_a, x_b) -> frozenset:
    """Coordinates positive on the open segment between ``x_a`` and ``x_b``."""
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    if np.any(x_a < 0) or np.any(x_b < 0):
        raise NegativeCoordinate("segment endpoint leaves the orthant")
    return frozenset(int(i) for i in np.flatnonzero(x_a + x_b > 0))


def _check(model, path):
    if path.dimension != model.dimension:
        raise ModelError(f"path has dimension {path.dimension}, model has {model.dimension}")


def _total(costs) -> float:
    costs = list(costs)
    return float(np.inf) if any(np.isinf(c) for c in costs) else float(sum(costs))


def path_cost(model: NetworkModel, path: PiecewisePath, opts: RateOptions = RateOptions()) -> CostBreakdown:
    """Sum over segments of ``duration * L_face(displacement / duration)``."""
    _check(model, path)
    parts = []
    for h, xa, xb in path.segments():
        face = segment_face(xa, xb)
        v = (xb - xa) / h
        rate = local_rate_result(model, face, v, opts).value
        parts.append(SegmentCost(face, v, h, float(np.inf) if np.isinf(rate) else h * rate))
    return CostBreakdown(_total(p.cost for p in parts), parts)


class _Perspective:
    """``phi(s) = s * L(delta / s)`` on ``s >= h``; convex in ``s``.

    With ``w = delta / s`` and ``alpha_w`` the maximizing tilt,
    ``phi'(s) = L(w) - <alpha_w, w>``.
    """

    def __init__(self, model, face, delta, h, opts):
        self.model, self.face, self.delta, self.h, self.opts = model, face, delta, h, opts
        self.idx = sorted(face)

    def rate(self, s):
        return local_rate_result(self.model, self.face, self.delta / s, self.opts)

    def value(self, s) -> float:
        r = self.rate(s).value
        return float(np.inf) if np.isinf(r) else s * r

    def slope(self, s) -> float:
        res = self.rate(s)
        if np.isinf(res.value):
            return -np.inf
        if res.alpha is None or not self.idx:
            return res.value
        w = self.delta[self.idx] / s
        return res.value - float(np.asarray(res.alpha) @ w)

    def domain(self, hi) -> tuple[float, float] | None:
        """``[lo, hi]`` part of ``[h, hi]`` where ``phi`` is finite, or None."""
        if np.isinf(self.value(hi)):
            return None
        lo = self.h
        if np.isinf(self.value(lo)):
            a, b = lo, hi
            for _ in range(60):
                mid = 0.5 * (a + b)
                a, b = (mid, b) if np.isinf(self.value(mid)) else (a, mid)
            lo = b
        return lo, hi

    def argmin(self, nu, lo, hi) -> float:
        """Minimizer of ``phi(s) + nu * s`` on ``[lo, hi]``."""
        d_lo = self.slope(lo) + nu
        if d_lo >= 0:
            return lo
        d_hi = self.slope(hi) + nu
        if d_hi <= 0:
            return hi
        return brentq(lambda s: self.slope(s) + nu, lo, hi, xtol=1e-13 * hi, rtol=1e-15)


def dilated_cost(
    model: NetworkModel,
    path: PiecewisePath,
    budget: float,
    opts: RateOptions = RateOptions(),
    nu_tol: float = 1e-12,
) -> tuple[CostBreakdown, DilationSchedule]:
    """Minimize ``sum_j h_j theta_j L_j(delta_j / (h_j theta_j))`` over ``theta_j >= 1``
    with ``sum_j h_j (theta_j - 1) <= budget``.

    Each segment term is a perspective function of ``s_j = h_j theta_j`` and
    is minimized by a bracketed root search on its derivative. The budget is
    handled by bisection on the multiplier ``nu`` of the time constraint.
    """
    _check(model, path)
    budget = float(budget)
    if not budget >= 0:
        raise ValueError("dilation budget must be nonnegative")
    if budget == 0:
        base = path_cost(model, path, opts)
        return base, DilationSchedule((1.0,) * path.n_segments, 0.0)

    segs = []
    for h, xa, xb in path.segments():
        segs.append(_Perspective(model, segment_face(xa, xb), xb - xa, h, opts))
    hs = np.array([p.h for p in segs])
    bounds = [p.domain(p.h + budget) for p in segs]

    def allocate(nu):
        return np.array([p.argmin(nu, *b) if b else p.h for p, b in zip(segs, bounds)])

    if any(b is None for b in bounds) or np.sum([b[0] for b in bounds] - hs) > budget:
        s = np.array([b[0] if b else p.h for p, b in zip(segs, bounds)])
    else:
        s = allocate(0.0)
        if np.sum(s - hs) > budget:
            hi = max(-p.slope(b[0]) for p, b in zip(segs, bounds)) + 1.0
            lo = 0.0
            s = allocate(hi)
            while hi - lo > nu_tol * max(1.0, hi):
                mid = 0.5 * (lo + hi)
                trial = allocate(mid)
                if np.sum(trial - hs) > budget:
                    lo = mid
                else:
                    hi, s = mid, trial
    theta = s / hs
    parts = []
    for p, sj, th in zip(segs, s, theta):
        parts.append(SegmentCost(p.face, p.delta / sj, p.h, p.value(sj), float(th)))
    return CostBreakdown(_total(q.cost for q in parts), parts), DilationSchedule(tuple(float(t) for t in theta), budget)


def refine_trace(
    model: NetworkModel,
    sampler: Callable,
    horizon: float,
    grids: Sequence[int],
    budgets: Sequence[float] = (0.0,),
    opts: RateOptions = RateOptions(),
) -> list[tuple[int, float, float]]:
    """Dilated cost of uniform-knot interpolants of ``sampler`` on ``[0, horizon]``.

    Returns ``(grid size, budget, cost)`` for every pair of grid size and
    budget. No limit is extrapolated.
    """
    out = []
    for g in grids:
        g = int(g)
        if g < 1:
            raise ValueError("grid sizes must be positive")
        times = np.linspace(0.0, horizon, g + 1)
        try:
            points = np.array([np.atleast_1d(np.asarray(sampler(t), dtype=float)) for t in times])
        except ArtifactError:
            raise
        except Exception as exc:  # noqa: BLE001
            raise SamplerFailure(f"sampler failed: {exc}") from exc
        if points.ndim != 2 or points.shape[1] != model.dimension:
            raise SamplerFailure(f"sampler must return points of dimension {model.dimension}")
        if not np.all(np.isfinite(points)) or np.any(points < 0):
            raise SamplerFailure("sampler returned a point outside the orthant")
        path = PiecewisePath(times, points)
        for eps in budgets:
            out.append((g, float(eps), dilated_cost(model, path, eps, opts)[0].total))
    return out


def cost_report_csv(breakdown: CostBreakdown, out=None) -> str:
    """``seg,face,dt,theta,vx1..vxN,cost``; faces use 1-based indices."""
    n = len(breakdown.per_segment[0].velocity) if breakdown.per_segment else 0
    header = ["seg", "face", "dt", "theta"] + [f"vx{i}" for i in range(1, n + 1)] + ["cost"]
    rows = [
        [k, format_face(p.face), p.duration, p.theta, *p.velocity, p.cost]
        for k, p in enumerate(breakdown.per_segment, start=1)
    ]
    return write_csv(header, rows, out)
