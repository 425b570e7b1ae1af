"""Tilted killed generators and their Perron-Frobenius eigenpairs.

``Q(alpha)[y, y']`` sums ``rate * exp(<alpha, additive jump>)`` over local
jumps from ``y`` to ``y'`` inside the truncation ``K``; the diagonal also
loses the total outflow of ``y``. Jumps that leave ``K`` but stay in the
orthant only feed the outflow, which kills the process when it exits ``K``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu, spsolve

from .errors import NoConvergence, NotIrreducible
from .localproc import DEFAULT_MAX_STATES, Truncation, enumerate_truncation, local_jumps, split_coords
from .model import NetworkModel, as_face, full_face

__all__ = [
    "TiltedGenerator",
    "SpectralResult",
    "LambdaEstimate",
    "build",
    "pf_eigen",
    "truncated_lambda",
    "face_lambda",
    "lambda_full",
    "default_schedule",
]

DENSE_CUTOFF = 400
UNDERFLOW = 1e-250


def default_schedule(kmax: int = 256) -> tuple:
    """Radii ``2, 4, 8, ...`` up to ``kmax`` (``kmax`` itself always included)."""
    out, m = [], 2
    while m < kmax:
        out.append(m)
        m *= 2
    out.append(int(kmax))
    return tuple(out)


@dataclass(frozen=True)
class _Structure:
    """Alpha-independent part of a tilted generator."""

    states: tuple
    origin: int
    src: np.ndarray
    dst: np.ndarray  # -1 marks a killed jump
    additive: np.ndarray
    rates: np.ndarray
    outflow: np.ndarray
    dropped: int


@lru_cache(maxsize=256)
def _structure(model: NetworkModel, face: frozenset, radius: int, shrink: bool, max_states: int) -> _Structure:
    trunc = enumerate_truncation(face, radius, model.dimension, max_states)
    lam, _ = split_coords(face, model.dimension)
    src, dst, add, rates = [], [], [], []
    for i, y in enumerate(trunc.states):
        for jump in local_jumps(model, face, y):
            target = tuple(a + b for a, b in zip(y, jump.markov))
            src.append(i)
            dst.append(trunc.index.get(target, -1))
            add.append(jump.additive)
            rates.append(jump.rate)
    size = len(trunc.states)
    src = np.array(src, dtype=np.int64)
    dst = np.array(dst, dtype=np.int64)
    add = np.array(add, dtype=float).reshape(len(src), len(lam))
    rates = np.array(rates, dtype=float)
    outflow = np.bincount(src, weights=rates, minlength=size)
    origin = trunc.index[trunc.origin]

    inside = (dst >= 0) & (dst != src)
    graph = sp.csr_matrix((np.ones(inside.sum()), (src[inside], dst[inside])), shape=(size, size))
    _, labels = connected_components(graph, directed=True, connection="strong")
    keep = labels == labels[origin]
    dropped = int(size - keep.sum())
    if dropped:
        if not shrink:
            raise NotIrreducible(
                f"truncation of radius {radius} on face {sorted(face)} is not irreducible "
                f"({dropped} states outside the origin's class)"
            )
        new_index = np.full(size, -1, dtype=np.int64)
        new_index[keep] = np.arange(keep.sum())
        sel = keep[src]
        src, add, rates = new_index[src[sel]], add[sel], rates[sel]
        dst = np.where(dst[sel] >= 0, new_index[np.maximum(dst[sel], 0)], -1)
        states = tuple(s for s, k in zip(trunc.states, keep) if k)
        outflow = outflow[keep]
        origin = int(new_index[origin])
    else:
        states = trunc.states
    return _Structure(states, origin, src, dst, add, rates, outflow, dropped)


@dataclass(frozen=True)
class TiltedGenerator:
    face: frozenset
    truncation: Truncation
    tilt: np.ndarray
    entries: np.ndarray | sp.csr_matrix
    states: tuple
    origin: int = 0
    dropped: int = 0

    @property
    def size(self) -> int:
        return len(self.states)

    def dense(self) -> np.ndarray:
        return self.entries.toarray() if sp.issparse(self.entries) else np.asarray(self.entries)


def build(
    model: NetworkModel,
    face,
    truncation: Truncation | int,
    alpha=(),
    shrink: bool = False,
    dense_cutoff: int = DENSE_CUTOFF,
    max_states: int = DEFAULT_MAX_STATES,
) -> TiltedGenerator:
    """Assemble ``Q_{face,K}(alpha)``.

    ``truncation`` is a :class:`Truncation` or its radius. With ``shrink``
    the box is restricted to the strongly connected class of the origin;
    otherwise a reducible box raises :class:`NotIrreducible`.
    """
    face = as_face(face)
    if isinstance(truncation, int):
        truncation = enumerate_truncation(face, truncation, model.dimension, max_states)
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float)).reshape(-1)
    if alpha.size != len(face):
        raise ValueError(f"tilt has {alpha.size} components, face has {len(face)}")
    if not np.all(np.isfinite(alpha)):
        raise ValueError("tilt must be finite")
    st = _structure(model, face, truncation.radius, bool(shrink), int(max_states))
    size = len(st.states)
    weights = st.rates * np.exp(st.additive @ alpha) if alpha.size else st.rates.copy()
    inside = st.dst >= 0
    if size <= dense_cutoff:
        entries = np.zeros((size, size))
        np.add.at(entries, (st.src[inside], st.dst[inside]), weights[inside])
        entries[np.diag_indices(size)] -= st.outflow
    else:
        rows = np.concatenate([st.src[inside], np.arange(size)])
        cols = np.concatenate([st.dst[inside], np.arange(size)])
        vals = np.concatenate([weights[inside], -st.outflow])
        entries = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    return TiltedGenerator(face, truncation, alpha, entries, st.states, st.origin, st.dropped)


@dataclass(frozen=True)
class SpectralResult:
    eigenvalue: float
    eigenvector: np.ndarray
    residual: float
    iterations: int = 0


def _symmetrizing_scale(a, origin: int) -> np.ndarray:
    """Log-scale ``x`` so that ``a[i, j] e^(x_j - x_i)`` is as symmetric as possible.

    Tilted generators are far from normal (up and down rates differ by
    orders of magnitude), which wrecks eigenvalue accuracy; a least-squares
    diagonal similarity over the two-way edges undoes most of it.
    """
    n = a.shape[0]
    m = sp.coo_matrix(a)
    off = (m.row != m.col) & (m.data > 0)
    r, c, d = m.row[off].astype(np.int64), m.col[off].astype(np.int64), m.data[off]
    key = r * n + c
    order = np.argsort(key)
    key, d = key[order], d[order]
    r, c = r[order], c[order]
    rev = c * n + r
    pos = np.searchsorted(key, rev)
    pos = np.minimum(pos, len(key) - 1) if len(key) else pos
    both = (len(key) > 0) & (key[pos] == rev) & (r < c) if len(key) else np.zeros(0, bool)
    if not np.any(both):
        return np.zeros(n)
    i, j = r[both], c[both]
    target = 0.5 * (np.log(d[pos[both]]) - np.log(d[both]))
    w = np.ones(len(i))
    lap = sp.coo_matrix((np.r_[w, w, -w, -w], (np.r_[i, j, i, j], np.r_[i, j, j, i])), shape=(n, n)).tocsc()
    rhs = np.bincount(j, weights=target, minlength=n) - np.bincount(i, weights=target, minlength=n)
    x = spsolve((lap + 1e-10 * sp.identity(n, format="csc")).tocsc(), rhs)
    return x - x[origin]


def _bordered_newton(a: np.ndarray, k: int, lam: float, max_iter: int):
    """Polish an eigenpair by Newton on the equation left out when ``f[k] = 1``.

    The remaining equations give ``(lam - sub) f = col`` and
    ``g(lam) = a_kk + row @ f - lam`` vanishes at the eigenvalue.
    """
    n = a.shape[0]
    rest = np.r_[0:k, k + 1 : n]
    sub = a[np.ix_(rest, rest)]
    col = a[rest, k]
    row = a[k, rest]
    eye = np.eye(n - 1)
    f = np.ones(n)
    it = 0
    for it in range(1, max_iter + 1):
        lu = scipy.linalg.lu_factor(lam * eye - sub, check_finite=False)
        f[rest] = scipy.linalg.lu_solve(lu, col, check_finite=False)
        g = a[k, k] + row @ f[rest] - lam
        df = scipy.linalg.lu_solve(lu, f[rest], check_finite=False)
        step = g / (1.0 + row @ df)
        lam += step
        if abs(step) <= 4e-16 * max(1.0, abs(lam)):
            break
    lu = scipy.linalg.lu_factor(lam * eye - sub, check_finite=False)
    f[rest] = scipy.linalg.lu_solve(lu, col, check_finite=False)
    return lam, f, it


def _dense_pf(a: np.ndarray, origin: int, tol: float, max_iter: int):
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0]), np.ones(1), 0
    x = _symmetrizing_scale(a, origin)
    b = a * np.exp(x[None, :] - x[:, None])
    vals, left, right = scipy.linalg.eig(b, left=True, right=True)
    top = int(np.argmax(vals.real))
    lam = float(vals[top].real)
    r = np.abs(right[:, top].real)
    l = np.abs(left[:, top].real)
    # border at the state carrying the most eigen-mass, where the reduced
    # system is best conditioned
    k = int(np.argmax(l * r))
    lam, fb, it = _bordered_newton(b, k, lam, max_iter)
    f = fb * np.exp(x)
    return lam, f / f[origin], it


def _power_pf(a, origin: int, tol: float, max_iter: int):
    diag = a.diagonal()
    # slightly more than the largest diagonal magnitude keeps the shifted
    # matrix aperiodic
    sigma = float(np.max(np.abs(diag))) * (1.0 + 1e-3) + 1e-12
    b = (a + sigma * sp.identity(a.shape[0], format="csr")).tocsr()
    x = np.ones(a.shape[0])
    for it in range(1, max_iter + 1):
        y = b @ x
        ratio = y / x
        lo, hi = float(ratio.min()), float(ratio.max())
        x = y / np.max(y)
        # Collatz-Wielandt: lo <= spectral radius <= hi
        if hi - lo <= tol * hi:
            return 0.5 * (lo + hi) - sigma, x / x[origin], it
    raise NoConvergence(f"power iteration did not converge in {max_iter} steps")


def _inverse_pf(a, origin: int, tol: float, max_iter: int, vector: bool = True):
    """Noda's shifted inverse iteration with Collatz-Wielandt shifts.

    For a Metzler irreducible ``b`` and ``mu`` above its Perron-Frobenius
    eigenvalue, ``y = (mu - b)^-1 x`` is positive for positive ``x`` and
    ``b y / y = mu - x / y`` componentwise, so ``mu - min(x / y)`` is again an
    upper bound. Iterating this shift keeps the shifted matrix an M-matrix
    and converges superlinearly; plain power iteration would stall on large
    boxes, where the spectral gap closes like ``1 / m^2``.
    """
    n = a.shape[0]
    xs = _symmetrizing_scale(a, origin)
    # entries of D^-1 A D from log-scale differences; D itself may overflow
    coo = sp.coo_matrix(a)
    b = sp.csc_matrix((coo.data * np.exp(xs[coo.col] - xs[coo.row]), (coo.row, coo.col)), shape=a.shape)
    eye = sp.identity(n, format="csc")

    def solve(mu, rhs):
        try:
            y = splu(mu * eye - b).solve(rhs)
        except RuntimeError:
            return None
        return y if np.all(y > 0) and np.all(np.isfinite(y)) else None

    x = np.ones(n)
    lo = float(b.diagonal().max())
    hi = float(min(np.max(b.sum(axis=1)), np.max(b.sum(axis=0))))
    mu = hi + 1e-9 * max(1.0, abs(hi))
    y = solve(mu, x)
    while y is None:  # rounding in the row-sum bound
        mu += max(hi - lo, 1e-9)
        y = solve(mu, x)
    lam = mu
    it = 0
    fresh = True  # (mu, x, y) hold a solve not yet folded into the bounds
    bisected = False
    for it in range(1, max_iter + 1):
        if fresh:
            ratio = x / y
            upper = mu - float(ratio.min())
            lo = max(lo, mu - float(ratio.max()))
            x = y / np.max(y)
            gain = lam - upper
            lam = min(lam, upper)
        width = lam - lo
        tiny = tol * max(1.0, abs(lam))
        if width <= tiny or (fresh and not bisected and 0 <= gain <= tiny):
            break
        bisected = (not fresh) or gain < 0.25 * width
        if bisected:
            # slow Collatz-Wielandt progress: bisect the bracket instead
            mid = lo + 0.5 * width
            y_mid = solve(mid, x)
            fresh = y_mid is not None
            if fresh:
                mu, y = mid, y_mid
            else:
                lo = mid
            continue
        # stay strictly above the eigenvalue so the next solve is definite
        nxt = lam + 1e-3 * tiny
        y_next = solve(nxt, x)
        if y_next is None:
            break
        mu, y, fresh = nxt, y_next, True
    else:
        raise NoConvergence(f"inverse iteration did not converge in {max_iter} steps")
    if vector:
        # settle the eigenvector at a shift just above the final eigenvalue
        try:
            lu = splu((lam + 1e-3 * tol * max(1.0, abs(lam))) * eye - b)
            for _ in range(3):
                x = np.abs(lu.solve(x))
                x /= np.max(x)
        except RuntimeError:
            pass
    mu = lam + 1e-3 * tol * max(1.0, abs(lam))
    if not vector:
        return float(lam), None, it
    # The scaled eigenvector loses entries that the scaling shrinks, so
    # also iterate in the original coordinates and keep whichever has the
    # smaller componentwise residual.
    logf = np.log(np.abs(x) + np.finfo(float).tiny) + xs
    if logf.max() - logf[origin] > 700:
        raise NoConvergence("eigenvector normalized at the origin does not fit in floating point")
    candidates = [np.exp(logf - logf[origin])]
    try:
        lu_a = splu((mu * eye - sp.csc_matrix(a)).tocsc())
        g = np.ones(n)
        for _ in range(3):
            g = np.abs(lu_a.solve(g / np.max(g)))
        candidates.append(g)
    except RuntimeError:
        pass
    absa = abs(sp.csr_matrix(a))
    best = min(candidates, key=lambda v: _componentwise_residual(a, absa, lam, v))
    return float(lam), best / best[origin], it


def _componentwise_residual(a, absa, lam, f) -> float:
    if not np.all(np.isfinite(f)) or np.max(f) <= 0:
        return np.inf
    f = f / np.max(f)
    scale = absa @ f + abs(lam) * f
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(a @ f - lam * f) / scale
    return float(np.nanmax(np.where(scale > 0, r, 0.0)))


def pf_eigen(
    q: TiltedGenerator,
    tol: float = 1e-12,
    max_iter: int = 200_000,
    check_tol: float = 1e-7,
    method: str = "inverse",
    vector: bool = True,
) -> SpectralResult:
    """Maximal real eigenvalue and positive right eigenvector (value 1 at the origin).

    Dense generators use an eigenvalue solve refined by a bordered linear
    solve. Sparse ones use shifted inverse iteration behind an M-matrix
    bisection bracket (``method="inverse"``) or plain power iteration on the
    shifted nonnegative matrix (``method="power"``). With ``vector=False``
    the sparse path returns only the eigenvalue (``eigenvector`` is None),
    which stays usable on boxes whose eigenvector spans more than the
    floating-point range.
    """
    if sp.issparse(q.entries):
        a = q.entries
        if method == "power":
            lam, f, it = _power_pf(a, q.origin, tol, max_iter)
        else:
            lam, f, it = _inverse_pf(a, q.origin, tol, 50, vector)
            if f is None:
                return SpectralResult(float(lam), None, float("nan"), it)
    else:
        a = np.asarray(q.entries)
        lam, f, it = _dense_pf(a, q.origin, tol, 200)
    if not np.all(np.isfinite(f)):
        raise NoConvergence("Perron-Frobenius eigenvector overflowed")
    scale = np.max(np.abs(f))
    # components below ~1e-250 of the peak are lost to underflow, not sign errors
    lost = np.abs(f) < UNDERFLOW * scale
    if np.any(f[~lost] <= 0):
        raise NoConvergence("Perron-Frobenius eigenvector is not strictly positive")
    f = np.where(lost, np.finfo(float).tiny, f)
    residual = float(np.max(np.abs(a @ f - lam * f)))
    if residual > check_tol * np.max(np.abs(f)) * max(1.0, abs(lam), float(np.max(np.abs(a.diagonal())))):
        raise NoConvergence(f"eigenpair residual {residual:.3g} above tolerance")
    return SpectralResult(float(lam), f, residual, it)


def truncated_lambda(model: NetworkModel, face, radius: int, alpha=(), shrink: bool = False, **kwargs) -> float:
    """``lambda_{face,K}(alpha)`` for the box of the given radius."""
    face = as_face(face)
    if face == full_face(model.dimension):
        return lambda_full(model, alpha)
    return pf_eigen(build(model, face, radius, alpha, shrink=shrink, **kwargs), vector=False).eigenvalue


@dataclass(frozen=True)
class LambdaEstimate:
    value: float
    trace: list = field(default_factory=list)
    converged: bool = False


def face_lambda(
    model: NetworkModel,
    face,
    alpha=(),
    m_schedule=None,
    tol: float = 1e-9,
    shrink: bool = False,
    **kwargs,
) -> LambdaEstimate:
    """Approximate ``lambda_face(alpha) = sup_K lambda_{face,K}(alpha)`` along growing boxes."""
    face = as_face(face)
    m_schedule = tuple(default_schedule() if m_schedule is None else m_schedule)
    if not m_schedule or any(b <= a for a, b in zip(m_schedule, m_schedule[1:])):
        raise ValueError("truncation schedule must be nonempty and increasing")
    if face == full_face(model.dimension):
        value = lambda_full(model, alpha)
        return LambdaEstimate(value, [(m_schedule[0], value)], True)
    trace = []
    for m in m_schedule:
        trace.append((m, truncated_lambda(model, face, m, alpha, shrink=shrink, **kwargs)))
    converged = len(trace) > 1 and abs(trace[-1][1] - trace[-2][1]) < tol
    return LambdaEstimate(trace[-1][1], trace, converged)


def lambda_full(model: NetworkModel, alpha, gradient: bool = False, hessian: bool = False):
    """Closed form ``sum_z mu(z) (exp(<alpha, z>) - 1)`` for the interior face.

    With ``gradient``/``hessian`` returns a tuple with the requested
    derivatives appended.
    """
    u, r = model.face_arrays[full_face(model.dimension)]
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.size != model.dimension:
        raise ValueError(f"tilt must have {model.dimension} components")
    w = r * np.exp(u @ alpha) if len(r) else r
    value = float(np.sum(w) - np.sum(r))
    if not (gradient or hessian):
        return value
    out = [value]
    if gradient:
        out.append(w @ u if len(r) else np.zeros(model.dimension))
    if hessian:
        out.append((u.T * w) @ u if len(r) else np.zeros((model.dimension,) * 2))
    return tuple(out)
