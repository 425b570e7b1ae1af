"""Uniformization transient solves used as brute-force oracles.

For a matrix ``q`` with nonnegative off-diagonal entries and any
``c >= max |q_ii|``, ``p = I + q / c`` is entrywise nonnegative and
``exp(t q) = sum_k Poisson(k; c t) p^k``. The series is summed with
nonnegative terms only, which keeps it accurate for killed generators and
for tilted matrices alike.
"""
from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .localproc import split_coords
from .model import NetworkModel, active_set

__all__ = [
    "uniformize",
    "network_generator",
    "local_pair_generator",
    "endpoint_probability",
]


def uniformize(q, t: float, p0=None, tol: float = 1e-15):
    """``p0 @ exp(t q)``; with ``p0=None`` the full matrix ``exp(t q)``.

    ``tol`` bounds the neglected Poisson tail mass.
    """
    q = sp.csr_matrix(q) if sp.issparse(q) else np.asarray(q, dtype=float)
    n = q.shape[0]
    diag = q.diagonal()
    off = q - (sp.diags(diag) if sp.issparse(q) else np.diag(diag))
    off_min = (off.data.min() if off.nnz else 0.0) if sp.issparse(off) else off.min()
    if off_min < 0:
        raise ValueError("uniformization needs nonnegative off-diagonal entries")
    c = float(max(np.max(np.abs(diag)), 1e-300))
    p = q / c + (sp.identity(n, format="csr") if sp.issparse(q) else np.eye(n))
    if p0 is None:
        v = np.eye(n)
    else:
        v = np.asarray(p0, dtype=float).reshape(1, -1) if np.ndim(p0) == 1 else np.asarray(p0, dtype=float)
    mean = c * t
    kmax = int(poisson.isf(tol, mean)) + 10 if mean > 0 else 0
    weights = poisson.pmf(np.arange(kmax + 1), mean)
    acc = weights[0] * v
    term = v
    for k in range(1, kmax + 1):
        term = np.asarray(term @ p)
        acc = acc + weights[k] * term
    if p0 is not None and np.ndim(p0) == 1:
        return acc.reshape(-1)
    return acc


def network_generator(model: NetworkModel, radius: int, avoid=frozenset()):
    """Killed generator of the network on the box ``{0..radius}^N``.

    Jumps out of the orthant are dropped, jumps out of the box are killed,
    and so are jumps into a state with ``x_i = 0`` for some ``i`` in ``avoid``
    (those states stay in the list but are never entered).
    Returns ``(states, index, q)``.
    """
    n = model.dimension
    states = list(itertools.product(range(radius + 1), repeat=n))
    index = {s: k for k, s in enumerate(states)}
    rows, cols, vals = [], [], []
    diag = np.zeros(len(states))
    for k, y in enumerate(states):
        for u, r in model.measure(active_set(y)).items():
            y2 = tuple(a + b for a, b in zip(y, u))
            if min(y2) < 0:
                continue
            diag[k] -= r
            if y2 in index and not any(y2[i] == 0 for i in avoid):
                rows.append(k)
                cols.append(index[y2])
                vals.append(r)
    q = sp.csr_matrix((vals, (rows, cols)), shape=(len(states),) * 2) + sp.diags(diag)
    return states, index, q.tocsr()


def local_pair_generator(model: NetworkModel, face, radius: int, a_radius: int):
    """Untilted generator of the pair ``(A, Y)`` with ``A`` in ``[-a_radius, a_radius]^face``
    and ``Y`` in the box of the given radius; leaving either window kills.

    Returns ``(states, index, q)`` with states ``(a, y)``.
    """
    lam, comp = split_coords(face, model.dimension)
    a_states = list(itertools.product(range(-a_radius, a_radius + 1), repeat=len(lam)))
    y_states = list(itertools.product(range(radius + 1), repeat=len(comp)))
    states = [(a, y) for a in a_states for y in y_states]
    index = {s: k for k, s in enumerate(states)}
    rows, cols, vals = [], [], []
    diag = np.zeros(len(states))
    for k, (a, y) in enumerate(states):
        positive = {comp[j] for j, c in enumerate(y) if c > 0}
        for u, r in model.measure(set(lam) | positive).items():
            y2 = tuple(c + u[i] for c, i in zip(y, comp))
            if y2 and min(y2) < 0:
                continue
            diag[k] -= r
            a2 = tuple(c + u[i] for c, i in zip(a, lam))
            if (a2, y2) in index:
                rows.append(k)
                cols.append(index[(a2, y2)])
                vals.append(r)
    q = sp.csr_matrix((vals, (rows, cols)), shape=(len(states),) * 2) + sp.diags(diag)
    return states, index, q.tocsr()


def endpoint_probability(
    model: NetworkModel,
    x0,
    t: float,
    target,
    delta: float,
    n: int = 1,
    radius: int = 50,
    avoid=frozenset(),
) -> float:
    """``P(|X(n t)/n - target|_inf < delta, no visit to {x_i = 0, i in avoid})``
    from the lattice state ``x0``, on the box of the given radius."""
    states, index, q = network_generator(model, radius, avoid)
    p0 = np.zeros(len(states))
    p0[index[tuple(int(c) for c in x0)]] = 1.0
    p = uniformize(q, n * t, p0)
    arr = np.array(states, dtype=float) / n
    inside = np.max(np.abs(arr - np.asarray(target, dtype=float)), axis=1) < delta
    if avoid:
        inside &= np.all(arr[:, sorted(avoid)] > 0, axis=1)
    return float(p[inside].sum())
