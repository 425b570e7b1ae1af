"""Exact simulation of the network and Monte Carlo tube probabilities.

Time is simulated on the lattice scale: the event ``Z_n`` stays near the
path ``phi`` on ``[0, T]`` is checked for ``X(s)`` on ``[0, n T]`` against
``n phi(s / n)``. Each replication draws from its own stream, seeded from a
``SeedSequence``, so that chunked and serial runs agree.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .csvio import format_path_csv, write_csv
from .errors import ModelError, RateExplosion, TubeExceedsTruncation
from .localproc import DEFAULT_MAX_STATES, split_coords
from .model import NetworkModel, as_face, full_face
from .pathcost import PiecewisePath, path_cost
from .spectral import _structure, build, pf_eigen
from .variational import RateOptions, face_evaluator, legendre, local_rate_result

__all__ = [
    "Trajectory",
    "TubeSpec",
    "TubeEstimate",
    "TwistedKernel",
    "simulate_ctmc",
    "tube_probability",
    "build_twist",
    "simulate_twisted",
    "twisted_tube_probability",
    "ld_check",
    "ld_check_csv",
    "replication_seeds",
]

MAX_EVENTS = 10_000_000


# -- exact event simulation, reference implementation -----------------------


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    horizon: float

    def state_at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[max(k, 0)]

    def to_csv(self) -> str:
        return format_path_csv(self.times, self.states)


def _feasible(model, y):
    u, r = model.face_arrays[frozenset(int(i) for i in np.flatnonzero(y > 0))]
    if not len(r):
        return u, r
    ok = np.all(y + u >= 0, axis=1)
    return u[ok], r[ok]


def simulate_ctmc(model: NetworkModel, x0, horizon: float, seed=None, max_events: int = MAX_EVENTS) -> Trajectory:
    """Event-by-event simulation of ``X`` on ``[0, horizon]``.

    Holding times are exponential at the total feasible rate of the face
    measure of the current state; the jump is drawn proportionally to rates.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    y = np.asarray(x0, dtype=np.int64).copy()
    if y.shape != (model.dimension,):
        raise ModelError(f"initial state must have {model.dimension} coordinates")
    if np.any(y < 0):
        raise ModelError("initial state leaves the orthant")
    rng = np.random.default_rng(seed)
    times, states = [0.0], [y.copy()]
    t = 0.0
    while True:
        u, r = _feasible(model, y)
        total = float(r.sum())
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > horizon:
            break
        y = y + u[rng.choice(len(r), p=r / total)]
        times.append(t)
        states.append(y.copy())
        if len(times) > max_events:
            raise RateExplosion(f"more than {max_events} events before the horizon")
    return Trajectory(np.array(times), np.array(states), float(horizon))


# -- tube events -------------------------------------------------------------


@dataclass(frozen=True)
class TubeSpec:
    """Event that ``Z_n`` stays within ``delta`` of ``path`` (sup-norm).

    With ``constrain_face`` the event is instead ``|Z_n(T) - path(T)| < delta``
    and no coordinate of the face hits zero before ``T``; ``endpoint_only``
    drops the tube condition without adding the face constraint.
    """

    path: PiecewisePath
    delta: float
    n: int
    constrain_face: frozenset | None = None
    endpoint_only: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("tube half-width must be positive")
        if int(self.n) < 1:
            raise ValueError("scaling parameter must be at least 1")
        object.__setattr__(self, "n", int(self.n))
        if self.constrain_face is not None:
            object.__setattr__(self, "constrain_face", as_face(self.constrain_face))

    @property
    def endpoint(self) -> bool:
        return self.endpoint_only or self.constrain_face is not None

    def initial_state(self) -> np.ndarray:
        return np.maximum(np.rint(self.n * self.path.points[0]), 0).astype(np.int64)


@dataclass(frozen=True)
class TubeEstimate:
    hits: int
    reps: int
    p_hat: float
    log_over_n: float
    stderr_log: float
    method: str
    stderr: float = 0.0
    p_upper: float | None = None  # one-sided 95% bound when there are no hits

    @property
    def zero_hits(self) -> bool:
        return self.hits == 0


def replication_seeds(seed: int, reps: int, *key) -> np.ndarray:
    """One 32-bit seed per replication, derived from ``(seed, *key)``."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in key]])
    return ss.generate_state(int(reps), dtype=np.uint32).astype(np.int64)


def _face_tables(model: NetworkModel):
    n = model.dimension
    ptr = np.zeros(2**n + 1, dtype=np.int64)
    atoms, rates = [], []
    for mask in range(2**n):
        face = frozenset(i for i in range(n) if mask >> i & 1)
        u, r = model.face_arrays[face]
        atoms.append(u.reshape(-1, n))
        rates.append(r)
        ptr[mask + 1] = ptr[mask] + len(r)
    return ptr, np.concatenate(atoms).astype(np.int64), np.concatenate(rates).astype(float)


@numba.njit(cache=True, nogil=True)
def _dist(x, s, scale, knot_s, knot_x, k):
    # sup-norm distance between x / scale and the path at lattice time s
    # (s lies in segment k)
    w = (s - knot_s[k]) / (knot_s[k + 1] - knot_s[k])
    if w < 0.0:
        w = 0.0
    elif w > 1.0:
        w = 1.0
    d = 0.0
    for i in range(x.shape[0]):
        p = knot_x[k, i] + w * (knot_x[k + 1, i] - knot_x[k, i])
        e = abs(x[i] / scale - p)
        if e > d:
            d = e
    return d


@numba.njit(cache=True, nogil=True)
def _direct_kernel(seeds, x0, ptr, atoms, rates, knot_s, knot_x, scale, delta, endpoint, avoid, max_events, hit, end, events):
    n = x0.shape[0]
    horizon = knot_s[knot_s.shape[0] - 1]
    nk = knot_s.shape[0]
    for rep in range(seeds.shape[0]):
        np.random.seed(seeds[rep])
        x = x0.copy()
        t = 0.0
        k = 0
        ok = True
        count = 0
        for i in range(n):
            if avoid[i] and x[i] == 0:
                ok = False
        if ok and not endpoint and _dist(x, 0.0, scale, knot_s, knot_x, 0) >= delta:
            ok = False
        while ok:
            mask = 0
            for i in range(n):
                if x[i] > 0:
                    mask |= 1 << i
            total = 0.0
            for j in range(ptr[mask], ptr[mask + 1]):
                feas = True
                for i in range(n):
                    if x[i] + atoms[j, i] < 0:
                        feas = False
                if feas:
                    total += rates[j]
            t_next = horizon + 1.0
            if total > 0.0:
                t_next = t + np.random.exponential(1.0 / total)
            stop = t_next >= horizon
            t_end = horizon if stop else t_next
            if not endpoint:
                # the state is constant on [t, t_end); the path is linear
                # between knots, so check the knots inside and the right end
                while k + 1 < nk - 1 and knot_s[k + 1] <= t_end:
                    k += 1
                    if _dist(x, knot_s[k], scale, knot_s, knot_x, k) >= delta:
                        ok = False
                        break
                if ok and _dist(x, t_end, scale, knot_s, knot_x, k) >= delta:
                    ok = False
            if stop or not ok:
                break
            u = np.random.random() * total
            chosen = -1
            acc = 0.0
            for j in range(ptr[mask], ptr[mask + 1]):
                feas = True
                for i in range(n):
                    if x[i] + atoms[j, i] < 0:
                        feas = False
                if feas:
                    acc += rates[j]
                    chosen = j
                    if u < acc:
                        break
            for i in range(n):
                x[i] += atoms[chosen, i]
                if avoid[i] and x[i] == 0:
                    ok = False
            t = t_next
            count += 1
            if count > max_events:
                events[rep] = -1
                ok = False
                break
            if not endpoint and ok and _dist(x, t, scale, knot_s, knot_x, k) >= delta:
                ok = False
        if ok and endpoint:
            ok = _dist(x, horizon, scale, knot_s, knot_x, nk - 2) < delta
        hit[rep] = ok
        for i in range(n):
            end[rep, i] = x[i]
        if events[rep] >= 0:
            events[rep] = count


def _chunks(reps: int, threads: int):
    threads = max(1, min(int(threads), reps))
    bounds = np.linspace(0, reps, threads + 1).astype(int)
    return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _run_chunked(fn, reps, threads):
    parts = _chunks(reps, threads)
    if len(parts) == 1:
        fn(*parts[0])
        return
    with ThreadPoolExecutor(len(parts)) as pool:
        list(pool.map(lambda ab: fn(*ab), parts))


def _lattice_path(spec: TubeSpec):
    return spec.n * spec.path.times - spec.n * spec.path.times[0], np.ascontiguousarray(spec.path.points)


def _estimate(values, reps, n, method, hits):
    values = np.asarray(values, dtype=float)
    p = float(values.sum() / reps)
    se = float(values.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
    if hits == 0:
        upper = 3.0 / reps if method == "direct" else float("nan")
        log = math.log(upper) / n if method == "direct" else float("nan")
        return TubeEstimate(0, reps, 0.0, log, float("nan"), method, se, upper)
    return TubeEstimate(int(hits), int(reps), p, math.log(p) / n, se / (p * n), method, se)


def tube_probability(model: NetworkModel, spec: TubeSpec, reps: int, seed: int, threads: int = 1) -> TubeEstimate:
    """Crude Monte Carlo estimate of the tube (or endpoint) event of ``spec``."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if spec.path.dimension != model.dimension:
        raise ModelError("path and model dimensions differ")
    ptr, atoms, rates = _face_tables(model)
    knot_s, knot_x = _lattice_path(spec)
    avoid = np.zeros(model.dimension, dtype=np.bool_)
    if spec.constrain_face:
        avoid[sorted(spec.constrain_face)] = True
    seeds = replication_seeds(seed, reps, spec.n, 0)
    x0 = spec.initial_state()
    hit = np.zeros(reps, dtype=np.bool_)
    end = np.zeros((reps, model.dimension), dtype=np.int64)
    events = np.zeros(reps, dtype=np.int64)

    def work(a, b):
        _direct_kernel(
            seeds[a:b], x0, ptr, atoms, rates, knot_s, knot_x, float(spec.n), float(spec.delta),
            spec.endpoint, avoid, MAX_EVENTS, hit[a:b], end[a:b], events[a:b],
        )

    _run_chunked(work, reps, threads)
    if np.any(events < 0):
        raise RateExplosion(f"a replication exceeded {MAX_EVENTS} events")
    return _estimate(hit.astype(float), reps, spec.n, "direct", int(hit.sum()))


# -- exponential change of measure -------------------------------------------


@dataclass(frozen=True)
class TwistedKernel:
    """Tilted local process on ``Z^face x K`` with rates
    ``r exp(<alpha, u_face>) f(y') / f(y)``; jumps leaving ``K`` are removed."""

    face: frozenset
    radius: int
    tilt: np.ndarray
    eigenvalue: float
    eigenvector: np.ndarray
    states: np.ndarray  # Markov states of K, shape (|K|, |face^c|)
    ptr: np.ndarray
    dst: np.ndarray
    additive: np.ndarray
    rates: np.ndarray  # twisted rates
    base_rates: np.ndarray  # original rates of the same jumps

    @property
    def dimension(self) -> int:
        return len(self.face) + self.states.shape[1]

    def drift(self) -> np.ndarray:
        """Stationary additive drift of the twisted process."""
        q = np.zeros((len(self.states),) * 2)
        flow = np.zeros((len(self.states), len(self.face)))
        src = np.repeat(np.arange(len(self.states)), np.diff(self.ptr))
        np.add.at(q, (src, self.dst), self.rates)
        q[np.diag_indices_from(q)] -= np.bincount(src, weights=self.rates, minlength=len(self.states))
        np.add.at(flow, src, self.rates[:, None] * self.additive)
        a = np.vstack([q.T, np.ones(len(self.states))])
        rhs = np.zeros(len(self.states) + 1)
        rhs[-1] = 1.0
        pi = np.linalg.lstsq(a, rhs, rcond=None)[0]
        return pi @ flow


def build_twist(model: NetworkModel, face, radius: int, v, opts: RateOptions = RateOptions(), tilt=None) -> TwistedKernel:
    """Twisted kernel for velocity ``v`` (over all ``N`` coordinates; only the
    face coordinates are used) on the box of the given radius.

    The tilt maximizes ``<alpha, v> - lambda_{face,K}(alpha)`` for this box,
    so that the twisted additive drift is ``v``. Pass ``tilt`` to skip the
    optimization.
    """
    face = as_face(face)
    lam, comp = split_coords(face, model.dimension)
    v = np.asarray(v, dtype=float).reshape(-1)
    if tilt is None:
        if not lam:
            tilt = np.zeros(0)
        elif face == full_face(model.dimension):
            tilt = local_rate_result(model, face, v, opts).alpha
        else:
            res = legendre(face_evaluator(model, face, radius, opts), v[lam], opts)
            if not res.finite:
                raise ModelError(f"velocity {v[lam].tolist()} is outside the domain of the rate on face {sorted(face)}")
            tilt = res.argmax_tilt
    tilt = np.asarray(tilt, dtype=float).reshape(-1)
    if tilt.size != len(lam):
        raise ValueError("tilt has the wrong number of components")
    spec = pf_eigen(build(model, face, int(radius), tilt))
    st = _structure(model, face, int(radius), False, DEFAULT_MAX_STATES)
    inside = st.dst >= 0
    src, dst = st.src[inside], st.dst[inside]
    add = st.additive[inside].astype(np.int64).reshape(-1, len(lam))
    base = st.rates[inside]
    f = spec.eigenvector
    twisted = base * (np.exp(add @ tilt) if len(lam) else 1.0) * f[dst] / f[src]
    order = np.argsort(src, kind="stable")
    src, dst, add, base, twisted = src[order], dst[order], add[order], base[order], twisted[order]
    ptr = np.zeros(len(st.states) + 1, dtype=np.int64)
    np.add.at(ptr, src + 1, 1)
    ptr = np.cumsum(ptr)
    return TwistedKernel(
        face, int(radius), tilt, spec.eigenvalue, f,
        np.asarray(st.states, dtype=np.int64).reshape(len(st.states), len(comp)),
        ptr, dst.astype(np.int64), add, twisted, base,
    )


@numba.njit(cache=True, nogil=True)
def _twisted_kernel(seeds, a0, k0, ptr, dst, additive, rates, horizon, avoid_a, max_events, a_end, k_end, alive, events):
    na = a0.shape[0]
    for rep in range(seeds.shape[0]):
        np.random.seed(seeds[rep])
        a = a0.copy()
        k = k0
        t = 0.0
        ok = True
        count = 0
        for i in range(na):
            if avoid_a[i] and a[i] <= 0:
                ok = False
        while ok:
            total = 0.0
            for j in range(ptr[k], ptr[k + 1]):
                total += rates[j]
            if total <= 0.0:
                break
            t += np.random.exponential(1.0 / total)
            if t >= horizon:
                break
            u = np.random.random() * total
            acc = 0.0
            chosen = ptr[k + 1] - 1
            for j in range(ptr[k], ptr[k + 1]):
                acc += rates[j]
                if u < acc:
                    chosen = j
                    break
            for i in range(na):
                a[i] += additive[chosen, i]
                if avoid_a[i] and a[i] <= 0:
                    ok = False
            k = dst[chosen]
            count += 1
            if count > max_events:
                events[rep] = -1
                ok = False
        alive[rep] = ok
        k_end[rep] = k
        for i in range(na):
            a_end[rep, i] = a[i]
        if events[rep] >= 0:
            events[rep] = count


def simulate_twisted(kernel: TwistedKernel, a0, y0, horizon: float, reps: int, seed: int, avoid: bool = False, threads: int = 1, key=(1,)):
    """Simulate the twisted local process; returns ``(a_end, k_end, alive)``.

    With ``avoid`` a replication dies when an additive coordinate reaches 0.
    """
    lam_n = len(kernel.face)
    a0 = np.asarray(a0, dtype=np.int64).reshape(lam_n)
    y0 = tuple(int(c) for c in np.asarray(y0).reshape(-1))
    matches = np.flatnonzero(np.all(kernel.states == np.array(y0, dtype=np.int64).reshape(1, -1), axis=1)) if kernel.states.shape[1] else np.array([0])
    if not len(matches):
        raise TubeExceedsTruncation(f"initial Markov state {y0} is outside the truncation")
    k0 = int(matches[0])
    seeds = replication_seeds(seed, reps, *key)
    a_end = np.zeros((reps, lam_n), dtype=np.int64)
    k_end = np.zeros(reps, dtype=np.int64)
    alive = np.zeros(reps, dtype=np.bool_)
    events = np.zeros(reps, dtype=np.int64)
    avoid_a = np.full(lam_n, bool(avoid), dtype=np.bool_)

    def work(a, b):
        _twisted_kernel(
            seeds[a:b], a0, k0, kernel.ptr, kernel.dst, kernel.additive, kernel.rates, float(horizon),
            avoid_a, MAX_EVENTS, a_end[a:b], k_end[a:b], alive[a:b], events[a:b],
        )

    _run_chunked(work, reps, threads)
    if np.any(events < 0):
        raise RateExplosion(f"a replication exceeded {MAX_EVENTS} events")
    return a_end, k_end, alive


def twisted_tube_probability(
    model: NetworkModel, spec: TubeSpec, kernel: TwistedKernel, reps: int, seed: int, threads: int = 1
) -> TubeEstimate:
    """Importance-sampling estimate of the endpoint event of ``spec`` jointly
    with the Markov part staying in the kernel's box.

    Each replication carries weight
    ``exp(-<alpha, A(nT) - A(0)> + nT lambda) f(Y(0)) / f(Y(nT))``.
    """
    if spec.constrain_face is None or spec.constrain_face != kernel.face:
        raise ValueError("the tube must be constrained to the kernel's face")
    n = spec.n
    lam, comp = split_coords(kernel.face, model.dimension)
    pts = spec.path.points
    if comp:
        reach = n * (np.max(pts[:, comp]) + spec.delta)
        if reach > kernel.radius:
            raise TubeExceedsTruncation(
                f"the tube reaches {reach:.6g} in the Markov coordinates; truncation radius is {kernel.radius}"
            )
    x0 = spec.initial_state()
    horizon = n * spec.path.horizon
    a_end, k_end, alive = simulate_twisted(
        kernel, x0[lam], x0[comp], horizon, reps, seed, avoid=True, threads=threads, key=(n, 1)
    )
    x_end = np.zeros((reps, model.dimension))
    x_end[:, lam] = a_end
    if comp:
        x_end[:, comp] = kernel.states[k_end]
    target = pts[-1]
    hit = alive & (np.max(np.abs(x_end / n - target), axis=1) < spec.delta)
    k0 = int(np.flatnonzero(np.all(kernel.states == x0[comp].reshape(1, -1), axis=1))[0]) if comp else 0
    f = kernel.eigenvector
    logw = -(a_end - x0[lam]) @ kernel.tilt + horizon * kernel.eigenvalue + np.log(f[k0]) - np.log(f[k_end])
    weights = np.where(hit, np.exp(logw), 0.0)
    return _estimate(weights, reps, n, "twisted", int(hit.sum()))


# -- asymptotic check ---------------------------------------------------------


def ld_check(
    model: NetworkModel,
    x0,
    v,
    horizon: float,
    face,
    n_list,
    delta: float,
    reps: int,
    seed: int,
    methods=("direct", "twisted"),
    radius: int | None = None,
    opts: RateOptions = RateOptions(),
    threads: int = 1,
    path: PiecewisePath | None = None,
) -> list[dict]:
    """Empirical ``(1/n) log P`` of the endpoint event along a straight line,
    next to the target ``T L_face(v)``.

    With ``path`` the full tube event around that path is estimated by crude
    Monte Carlo instead and the target is its path cost.
    """
    rows = []
    if path is not None:
        target = path_cost(model, path, opts).total
        for n in n_list:
            est = tube_probability(model, TubeSpec(path, delta, n), reps, seed, threads)
            rows.append(_row(n, est, target))
        return rows
    face = as_face(face)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    line = PiecewisePath.line(x0, v, horizon)
    target = horizon * local_rate_result(model, face, v, opts).value
    lam, comp = split_coords(face, model.dimension)
    tilt = None
    for n in n_list:
        spec = TubeSpec(line, delta, n, constrain_face=face)
        if "direct" in methods:
            rows.append(_row(n, tube_probability(model, spec, reps, seed, threads), target))
        if "twisted" in methods:
            m = radius
            if m is None:
                m = max(16, int(math.ceil(n * (np.max(line.points[:, comp]) + delta)))) if comp else 1
            kernel = build_twist(model, face, m, v, opts, tilt=tilt if face == full_face(model.dimension) else None)
            tilt = kernel.tilt
            rows.append(_row(n, twisted_tube_probability(model, spec, kernel, reps, seed, threads), target))
    return rows


def _row(n, est: TubeEstimate, target):
    return {
        "n": n,
        "method": est.method,
        "reps": est.reps,
        "hits": est.hits,
        "p_hat": est.p_hat,
        "log_over_n": est.log_over_n,
        "target": target,
        "stderr": est.stderr_log,
    }


LD_COLUMNS = ["n", "method", "reps", "hits", "p_hat", "log_over_n", "target", "stderr"]


def ld_check_csv(rows, out=None) -> str:
    return write_csv(LD_COLUMNS, ([r[c] for c in LD_COLUMNS] for r in rows), out)
