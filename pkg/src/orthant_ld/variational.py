"""Convex conjugates of the face exponents and the local rate functions.

``L_face(v) = sup_alpha <alpha, v_face> - lambda_face(alpha)``. The interior
face has a closed-form exponent with exact derivatives; boundary faces use
the truncated Perron-Frobenius exponent with central-difference gradients.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ArtifactError, OracleFailure, SizeOverflow
from .localproc import DEFAULT_MAX_STATES, split_coords
from .model import NetworkModel, active_set, as_face, full_face
from .spectral import face_lambda, lambda_full, truncated_lambda

__all__ = [
    "RateOptions",
    "LegendreResult",
    "RateResult",
    "TruncationWarning",
    "legendre",
    "face_evaluator",
    "local_rate",
    "local_rate_result",
    "pointwise_rate",
    "with_schedule",
]

logger = logging.getLogger(__name__)


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RateOptions:
    m_schedule: tuple = tuple(2**k for k in range(2, 16))
    lambda_tol: float = 1e-10
    verify_tol: float = 1e-8
    gtol: float = 1e-9
    radius: float = 50.0
    slope_eps: float = 1e-8
    fd_step: float = 1e-6
    max_iter: int = 500
    shrink: bool = False
    max_states: int = DEFAULT_MAX_STATES


@dataclass(frozen=True)
class LegendreResult:
    value: float
    argmax_tilt: np.ndarray | None
    gradient_residual: float
    iterations: int = 0

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value))


def legendre(evaluator: Callable, v, opts: RateOptions = RateOptions(), alpha0=None) -> LegendreResult:
    """Maximize ``<alpha, v> - lambda(alpha)`` by quasi-Newton ascent.

    ``evaluator(alpha)`` returns ``(value, gradient)`` or
    ``(value, gradient, hessian)``; with a Hessian the step is Newton's,
    otherwise BFGS. Backtracking enforces ascent. A run whose iterate leaves
    the ball of radius ``opts.radius`` while still climbing reports ``+inf``.
    """
    v = np.asarray(v, dtype=float).reshape(-1)

    def call(alpha):
        try:
            out = evaluator(alpha)
        except ArtifactError:
            raise
        except Exception as exc:  # noqa: BLE001
            raise OracleFailure(f"exponent evaluation failed at {alpha}: {exc}") from exc
        value, grad = float(out[0]), np.asarray(out[1], dtype=float).reshape(-1)
        hess = np.asarray(out[2], dtype=float) if len(out) > 2 else None
        return value, grad, hess

    if v.size == 0:
        value, _, _ = call(np.zeros(0))
        return LegendreResult(-value, None, 0.0, 0)

    alpha = np.zeros(v.size) if alpha0 is None else np.asarray(alpha0, dtype=float).copy()
    lam, grad, hess = call(alpha)
    g = alpha @ v - lam
    slope = v - grad
    inv = np.eye(v.size)
    it = 0
    for it in range(1, opts.max_iter + 1):
        if np.max(np.abs(slope)) <= opts.gtol:
            break
        if hess is not None:
            try:
                step = np.linalg.solve(hess + 1e-14 * np.eye(v.size), slope)
            except np.linalg.LinAlgError:
                step = slope.copy()
        else:
            step = inv @ slope
        if step @ slope <= 0:
            inv = np.eye(v.size)
            step = slope.copy()
        # keep exponentials in range
        norm = np.linalg.norm(step)
        if norm > opts.radius:
            step *= opts.radius / norm
        t = 1.0
        accepted = False
        for _ in range(60):
            trial = alpha + t * step
            lam_t, grad_t, hess_t = call(trial)
            g_t = trial @ v - lam_t
            if np.isfinite(g_t) and g_t >= g + 1e-4 * t * (step @ slope):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        s = trial - alpha
        # finite-difference noise can keep the slope above gtol forever
        stalled = np.max(np.abs(s)) <= 1e-13 * (1.0 + np.max(np.abs(alpha))) or g_t - g <= 1e-16 * max(1.0, abs(g))
        slope_t = v - grad_t
        y = slope - slope_t
        sy = s @ y
        if hess is None and sy > 1e-300:
            rho = 1.0 / sy
            eye = np.eye(v.size)
            inv = (eye - rho * np.outer(s, y)) @ inv @ (eye - rho * np.outer(y, s)) + rho * np.outer(s, s)
        alpha, lam, grad, hess, g, slope = trial, lam_t, grad_t, hess_t, g_t, slope_t
        if stalled:
            break
        if np.linalg.norm(alpha) > opts.radius:
            direction = s / np.linalg.norm(s)
            if direction @ slope >= opts.slope_eps:
                return LegendreResult(np.inf, None, float(np.max(np.abs(slope))), it)
            break
    return LegendreResult(float(g), alpha, float(np.max(np.abs(slope))), it)


def face_evaluator(model: NetworkModel, face, radius: int | None = None, opts: RateOptions = RateOptions()):
    """``alpha -> (lambda, gradient[, hessian])`` for a face.

    The interior face is exact; other faces use the box of ``radius`` and
    central differences with step ``fd_step * (1 + |alpha|)``.
    """
    face = as_face(face)
    if face == full_face(model.dimension):
        return lambda alpha: lambda_full(model, alpha, gradient=True, hessian=True)

    def evaluate(alpha):
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        kw = dict(shrink=opts.shrink, max_states=opts.max_states)
        value = truncated_lambda(model, face, radius, alpha, **kw)
        h = opts.fd_step * (1.0 + np.linalg.norm(alpha))
        grad = np.empty(alpha.size)
        for i in range(alpha.size):
            e = np.zeros(alpha.size)
            e[i] = h
            up = truncated_lambda(model, face, radius, alpha + e, **kw)
            dn = truncated_lambda(model, face, radius, alpha - e, **kw)
            grad[i] = (up - dn) / (2 * h)
        return value, grad

    return evaluate


@dataclass(frozen=True)
class RateResult:
    face: frozenset
    value: float
    alpha: np.ndarray | None
    radius: int | None
    converged: bool
    gradient_residual: float = 0.0


def _schedule(model, face, opts) -> list:
    """Radii of ``opts.m_schedule`` whose box fits under the state cap."""
    k = model.dimension - len(face)
    out = [m for m in opts.m_schedule if (m + 1) ** k <= opts.max_states]
    if not out:
        raise SizeOverflow(f"no truncation radius of the schedule fits {opts.max_states} states")
    return out


def _converged_radius(model, face, alpha, schedule, opts) -> tuple[int, int, float, bool]:
    """First radius whose exponent at ``alpha`` moves by less than ``lambda_tol``
    at the next one. Returns ``(radius, next radius, exponent there, converged)``."""
    kw = dict(shrink=opts.shrink, max_states=opts.max_states)
    prev = truncated_lambda(model, face, schedule[0], alpha, **kw)
    for m0, m1 in zip(schedule, schedule[1:]):
        cur = truncated_lambda(model, face, m1, alpha, **kw)
        if abs(cur - prev) < opts.lambda_tol:
            return m0, m1, cur, True
        prev = cur
    return schedule[-1], schedule[-1], prev, False


@lru_cache(maxsize=4096)
def _rate_cached(model: NetworkModel, face: frozenset, v_face: tuple, opts: RateOptions) -> RateResult:
    if face == full_face(model.dimension):
        res = legendre(face_evaluator(model, face), v_face, opts)
        return RateResult(face, res.value, res.argmax_tilt, None, res.finite, res.gradient_residual)

    schedule = _schedule(model, face, opts)
    if not face:
        _, radius, value, converged = _converged_radius(model, face, (), schedule, opts)
        return RateResult(face, max(-value, 0.0), None, radius, converged)

    radius, _, _, converged = _converged_radius(model, face, np.zeros(len(face)), schedule, opts)
    pos = schedule.index(radius)
    res = legendre(face_evaluator(model, face, radius, opts), v_face, opts)
    stable = False
    while res.finite and pos + 1 < len(schedule):
        nxt = schedule[pos + 1]
        check = float(res.argmax_tilt @ np.asarray(v_face)) - truncated_lambda(
            model, face, nxt, res.argmax_tilt, shrink=opts.shrink, max_states=opts.max_states
        )
        if abs(check - res.value) <= opts.verify_tol:
            stable = True
            break
        logger.debug("face %s radius %d -> %d moved rate by %.3g", sorted(face), radius, nxt, check - res.value)
        pos, radius = pos + 1, nxt
        res = legendre(face_evaluator(model, face, radius, opts), v_face, opts, alpha0=res.argmax_tilt)
    if res.finite and not stable:
        warnings.warn(
            f"rate on face {sorted(face)} at v={v_face} not stable at the largest truncation radius {radius}",
            TruncationWarning,
            stacklevel=3,
        )
    # the supremum defining the rate is at least its value at alpha = 0
    value = max(res.value, 0.0) if res.finite else res.value
    return RateResult(face, value, res.argmax_tilt, radius, converged and (stable or not res.finite), res.gradient_residual)


def local_rate_result(model: NetworkModel, face, v, opts: RateOptions = RateOptions()) -> RateResult:
    face = as_face(face)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != model.dimension:
        raise ValueError(f"velocity must have {model.dimension} components")
    if not np.all(np.isfinite(v)):
        raise ValueError("velocity must be finite")
    lam, _ = split_coords(face, model.dimension)
    # quantized key so nearly equal velocities share a cache entry
    v_face = tuple(float(np.round(v[i], 13)) + 0.0 for i in lam)
    return _rate_cached(model, face, v_face, opts)


def local_rate(model: NetworkModel, face, v, opts: RateOptions = RateOptions()) -> float:
    """``L_face(v)``; coordinates of ``v`` outside the face are ignored."""
    return local_rate_result(model, face, v, opts).value


def pointwise_rate(model: NetworkModel, x, v, opts: RateOptions = RateOptions()) -> float:
    return local_rate(model, active_set(x), v, opts)


def with_schedule(opts: RateOptions, kmax: int) -> RateOptions:
    """Copy of ``opts`` whose schedule stops at ``kmax``."""
    return replace(opts, m_schedule=tuple(m for m in opts.m_schedule if m < kmax) + (kmax,))
