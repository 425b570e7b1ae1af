"""Local Markov-additive processes attached to a face.

For a face ``L`` the coordinates in ``L`` become a free additive part (they
may go negative) and the remaining coordinates form a Markov chain on the
nonnegative lattice. A jump from Markov state ``y`` uses the measure of the
face ``L | {i : y_i > 0}``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .errors import NegativeCoordinate, SizeOverflow
from .model import NetworkModel, as_face

__all__ = ["LocalJump", "Truncation", "split_coords", "local_jumps", "enumerate_truncation"]

DEFAULT_MAX_STATES = 250_000


@dataclass(frozen=True)
class LocalJump:
    additive: tuple
    markov: tuple
    rate: float


def split_coords(face, n: int) -> tuple[list, list]:
    """Sorted coordinate lists ``(face, complement)``."""
    face = as_face(face)
    return sorted(face), [i for i in range(n) if i not in face]


def local_jumps(model: NetworkModel, face, y) -> list[LocalJump]:
    lam, comp = split_coords(face, model.dimension)
    y = tuple(int(c) for c in y)
    if len(y) != len(comp):
        raise ValueError(f"Markov state {y} should have {len(comp)} coordinates")
    if any(c < 0 for c in y):
        raise NegativeCoordinate(f"negative coordinate in {y}")
    positive = {comp[j] for j, c in enumerate(y) if c > 0}
    jumps = []
    for u, rate in sorted(model.measure(set(lam) | positive).items()):
        uc = tuple(u[i] for i in comp)
        if any(a + b < 0 for a, b in zip(y, uc)):
            continue
        jumps.append(LocalJump(tuple(u[i] for i in lam), uc, rate))
    return jumps


@dataclass(frozen=True)
class Truncation:
    """Box ``{y : 0 <= y_i <= radius}`` in the Markov coordinates of ``face``."""

    face: frozenset
    radius: int
    dimension: int
    states: tuple
    index: dict = field(repr=False, compare=False)

    def __len__(self):
        return len(self.states)

    @property
    def origin(self) -> tuple:
        return (0,) * (self.dimension - len(self.face))


def enumerate_truncation(face, m: int, n: int, max_states: int = DEFAULT_MAX_STATES) -> Truncation:
    if m < 1:
        raise ValueError("truncation radius must be at least 1")
    face = as_face(face)
    k = n - len(face)
    size = (m + 1) ** k
    if size > max_states:
        raise SizeOverflow(f"truncation of radius {m} has {size} states (cap {max_states})")
    states = tuple(itertools.product(range(m + 1), repeat=k))
    return Truncation(face, int(m), int(n), states, {s: i for i, s in enumerate(states)})
