"""Partially homogeneous jump models on the nonnegative integer orthant.

A model assigns one finite jump measure to every face of the orthant. The
face of a state ``y`` is the set of coordinates with ``y_i > 0``; all states
on the same face jump with the same measure.

Faces are ``frozenset`` objects of 0-based coordinate indices. The model file
and the command line use 1-based indices.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import NegativeCoordinate, ModelError, ParseError, RangeViolation, SameState

__all__ = [
    "NetworkModel",
    "CommReport",
    "as_face",
    "full_face",
    "active_set",
    "intensity",
    "validate",
    "parse_model",
    "load_model",
    "dump_model",
    "format_face",
    "parse_face",
]

def as_face(members: Iterable[int] = ()) -> frozenset:
    return frozenset(int(i) for i in members)


def full_face(n: int) -> frozenset:
    return frozenset(range(n))


def active_set(x) -> frozenset:
    """Indices of the strictly positive coordinates of ``x``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise NegativeCoordinate(f"negative coordinate in {x.tolist()}")
    return frozenset(int(i) for i in np.flatnonzero(x > 0))


def _check_state(y, n) -> tuple:
    y = tuple(int(c) for c in y)
    if len(y) != n:
        raise ModelError(f"state {y} does not have dimension {n}")
    if any(c < 0 for c in y):
        raise NegativeCoordinate(f"negative coordinate in {y}")
    return y


@dataclass(frozen=True)
class NetworkModel:
    """Jump measures indexed by face.

    Parameters
    ----------
    dimension : int
        Number of coordinates ``N``.
    measures : mapping
        ``face -> {displacement tuple: rate}``. Faces not listed carry the
        zero measure. Zero rates are dropped.
    range : int, optional
        Max-norm bound ``d`` on jump sizes. Defaults to the largest atom.
    """

    dimension: int
    measures: Mapping[frozenset, Mapping[tuple, float]]
    range: int | None = None

    def __post_init__(self):
        n = int(self.dimension)
        if n < 1:
            raise ModelError("dimension must be positive")
        clean = {}
        for face, atoms in self.measures.items():
            face = as_face(face)
            if any(i < 0 or i >= n for i in face):
                raise ModelError(f"face {sorted(face)} has an index outside 0..{n - 1}")
            kept = {}
            for u, rate in dict(atoms).items():
                u = tuple(int(c) for c in u)
                rate = float(rate)
                if len(u) != n:
                    raise ModelError(f"atom {u} does not have dimension {n}")
                if not any(u):
                    raise ModelError("jump measure has an atom at the zero vector")
                if rate < 0 or not np.isfinite(rate):
                    raise ModelError(f"atom {u} has invalid rate {rate}")
                if rate == 0:
                    continue
                # a coordinate outside the face is 0, so it cannot decrease
                if any(u[i] < 0 for i in range(n) if i not in face):
                    raise ModelError(
                        f"atom {u} of face {format_face(face)} is infeasible from every state of the face"
                    )
                kept[u] = rate
            if kept:
                clean[face] = kept
        d = max((max(abs(c) for c in u) for m in clean.values() for u in m), default=1)
        if self.range is None:
            object.__setattr__(self, "range", d)
        elif d > self.range:
            raise RangeViolation(f"atom of max-norm {d} exceeds range {self.range}")
        object.__setattr__(self, "dimension", n)
        object.__setattr__(self, "measures", clean)

    def __hash__(self):
        return hash(
            (
                self.dimension,
                self.range,
                tuple(sorted((tuple(sorted(f)), tuple(sorted(m.items()))) for f, m in self.measures.items())),
            )
        )

    def measure(self, face) -> dict:
        return self.measures.get(as_face(face), {})

    @cached_property
    def face_arrays(self) -> dict:
        """``face -> (displacements (k, N) int array, rates (k,) array)``."""
        out = {}
        for face in itertools.chain.from_iterable(
            itertools.combinations(range(self.dimension), r) for r in range(self.dimension + 1)
        ):
            m = self.measure(face)
            items = sorted(m.items())
            u = np.array([a for a, _ in items], dtype=np.int64).reshape(len(items), self.dimension)
            r = np.array([q for _, q in items], dtype=float)
            out[frozenset(face)] = (u, r)
        return out

    def mean_drift(self, face=None) -> np.ndarray:
        face = full_face(self.dimension) if face is None else face
        u, r = self.face_arrays[as_face(face)]
        return r @ u if len(r) else np.zeros(self.dimension)


def intensity(model: NetworkModel, y, y2) -> float:
    """Transition rate from ``y`` to ``y2``."""
    y = _check_state(y, model.dimension)
    y2 = _check_state(y2, model.dimension)
    if y == y2:
        raise SameState("intensity is undefined for identical states")
    u = tuple(b - a for a, b in zip(y, y2))
    return model.measure(active_set(y)).get(u, 0.0)


@dataclass(frozen=True)
class CommReport:
    box_radius: int
    gamma_hat: float
    path_ratio: float
    connected: bool
    n_states: int
    empty_faces: tuple = ()


def _box_graph(model: NetworkModel, radius: int):
    n = model.dimension
    side = radius + 1
    states = np.array(list(itertools.product(range(side), repeat=n)), dtype=np.int64)
    strides = side ** np.arange(n - 1, -1, -1)
    rows, cols, vals = [], [], []
    for k, y in enumerate(states):
        u, r = model.face_arrays[active_set(y)]
        if not len(r):
            continue
        tgt = y + u
        ok = np.all((tgt >= 0) & (tgt <= radius), axis=1)
        rows.extend([k] * int(ok.sum()))
        cols.extend((tgt[ok] @ strides).tolist())
        vals.extend(r[ok].tolist())
    size = len(states)
    graph = csr_matrix((np.array(vals, dtype=float), (rows, cols)), shape=(size, size))
    return states, graph


def validate(model: NetworkModel, box_radius: int, max_pairs_states: int = 2000) -> CommReport:
    """Check the range bound exactly and communication on a finite box.

    Communication is checked on ``{y : y_i <= box_radius}`` only, which is a
    necessary condition for the lattice-wide property, not a proof of it.
    """
    if box_radius < model.range:
        raise ModelError(f"box radius {box_radius} is smaller than the range {model.range}")
    for m in model.measures.values():
        for u in m:
            if max(abs(c) for c in u) > model.range:
                raise RangeViolation(f"atom {u} exceeds range {model.range}")

    states, graph = _box_graph(model, box_radius)
    n_comp, _ = connected_components(graph, directed=True, connection="strong")
    connected = n_comp == 1
    gamma = float(graph.data.min()) if graph.nnz else 0.0
    empty = tuple(
        sorted((f for f, (_, r) in model.face_arrays.items() if not len(r)), key=lambda f: (len(f), sorted(f)))
    )

    ratio = float("inf")
    if connected:
        size = len(states)
        if size <= max_pairs_states:
            sources = np.arange(size)
        else:
            sources = np.linspace(0, size - 1, max_pairs_states // 10).astype(int)
        hops = shortest_path(graph, directed=True, unweighted=True, indices=sources)
        lattice = np.max(np.abs(states[sources][:, None, :] - states[None, :, :]), axis=2)
        mask = lattice > 0
        ratio = float(np.max(hops[mask] / lattice[mask])) if mask.any() else 0.0
    return CommReport(
        box_radius=int(box_radius),
        gamma_hat=gamma,
        path_ratio=ratio,
        connected=bool(connected),
        n_states=len(states),
        empty_faces=empty,
    )


# -- model file --------------------------------------------------------------


def format_face(face, one_based=True) -> str:
    face = sorted(face)
    if not face:
        return "empty"
    return ",".join(str(i + 1 if one_based else i) for i in face)


def parse_face(text: str, n: int, line=None) -> frozenset:
    """Parse ``empty``, ``full`` or comma-separated 1-based indices."""
    text = text.strip()
    if text == "empty":
        return frozenset()
    if text == "full":
        return full_face(n)
    try:
        idx = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ParseError(f"bad face {text!r}", line) from None
    if any(i < 1 or i > n for i in idx):
        raise ParseError(f"face index out of 1..{n} in {text!r}", line)
    if len(set(idx)) != len(idx):
        raise ParseError(f"repeated index in face {text!r}", line)
    return frozenset(i - 1 for i in idx)


def parse_model(text: str) -> NetworkModel:
    n = None
    rng = None
    measures: dict = {}
    atom_lines = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "N":
            if n is not None:
                raise ParseError("duplicate N line", lineno)
            try:
                n = int(rest)
            except ValueError:
                raise ParseError(f"bad dimension {rest!r}", lineno) from None
            if n < 1:
                raise ParseError("dimension must be positive", lineno)
            continue
        if n is None:
            raise ParseError("the first statement must be 'N <int>'", lineno)
        if head == "range":
            try:
                rng = int(rest)
            except ValueError:
                raise ParseError(f"bad range {rest!r}", lineno) from None
            continue
        if head == "measure":
            current = parse_face(rest, n, lineno)
            if current in measures:
                raise ParseError(f"duplicate measure block for face {rest.strip()}", lineno)
            measures[current] = {}
            continue
        if current is None:
            raise ParseError("atom line outside a measure block", lineno)
        lhs, sep, rhs = line.partition(":")
        if not sep:
            raise ParseError("atom line must look like '<dz_1> ... <dz_N> : <rate>'", lineno)
        try:
            u = tuple(int(t) for t in lhs.split())
            rate = float(rhs)
        except ValueError:
            raise ParseError(f"bad atom line {raw.strip()!r}", lineno) from None
        if len(u) != n:
            raise ParseError(f"atom has {len(u)} components, expected {n}", lineno)
        if u in measures[current]:
            raise ParseError(f"duplicate atom {u}", lineno)
        if any(u[i] < 0 for i in range(n) if i not in current):
            raise ParseError(f"atom {u} is infeasible from every state of face {format_face(current)}", lineno)
        measures[current][u] = rate
        atom_lines.append((max((abs(c) for c in u), default=0), lineno))
    if n is None:
        raise ParseError("missing 'N <int>' line")
    if rng is not None:
        for size, lineno in atom_lines:
            if size > rng:
                raise ParseError(f"atom of max-norm {size} exceeds range {rng}", lineno)
    try:
        return NetworkModel(n, measures, rng)
    except ModelError as exc:
        raise ParseError(str(exc)) from exc


def load_model(path) -> NetworkModel:
    with open(path) as fh:
        return parse_model(fh.read())


def dump_model(model: NetworkModel) -> str:
    lines = [f"N {model.dimension}", f"range {model.range}"]
    for face in sorted(model.measures, key=lambda f: (len(f), sorted(f))):
        lines.append(f"measure {format_face(face)}")
        for u, rate in sorted(model.measures[face].items()):
            lines.append(" ".join(str(c) for c in u) + f" : {rate!r}")
    return "\n".join(lines) + "\n"
