"""Finite state spaces, partial orders, test functions and generating cones.

Functions on a state space of size ``n`` are plain real vectors of length
``n`` equipped with the max norm. Integral stochastic orders are described by
finitely generated cones of such vectors; the increasing cone of a partial
order is generated by the indicators of its up-sets plus the constants.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import ConfigurationError

DEFAULT_CONE_TOL = 1e-9

# brute-force up-set enumeration is 2^n
MAX_ENUMERATION_STATES = 16


@dataclass(frozen=True)
class StateSpace:
    """States ``0..n-1`` with optional labels and an optional partial order.

    ``order`` is a collection of pairs ``(i, j)`` meaning ``i <= j``. It is
    closed reflexively and transitively at construction; the closure is kept
    in :attr:`leq` as a boolean matrix with ``leq[i, j]`` iff ``i <= j``.
    """

    n: int
    labels: tuple[str, ...] | None = None
    order: frozenset[tuple[int, int]] | None = None
    leq: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError(f"state space needs n >= 1, got {self.n!r}")
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != self.n:
                raise ConfigurationError(f"expected {self.n} labels, got {len(labels)}")
            object.__setattr__(self, "labels", labels)
        if self.order is not None:
            pairs = frozenset((int(i), int(j)) for i, j in self.order)
            for i, j in pairs:
                if not (0 <= i < self.n and 0 <= j < self.n):
                    raise ConfigurationError(f"order pair ({i}, {j}) outside 0..{self.n - 1}")
            leq = _closure(self.n, pairs)
            both = leq & leq.T
            np.fill_diagonal(both, False)
            if both.any():
                i, j = map(int, np.argwhere(both)[0])
                raise ConfigurationError(f"order is not antisymmetric: {i} <= {j} and {j} <= {i}")
            leq.setflags(write=False)
            object.__setattr__(self, "order", pairs)
            object.__setattr__(self, "leq", leq)

    @classmethod
    def total(cls, n: int, labels: Sequence[str] | None = None) -> "StateSpace":
        """Chain ``0 < 1 < ... < n-1``."""
        return cls(n, labels=labels, order=frozenset((i, i + 1) for i in range(n - 1)))

    @classmethod
    def antichain(cls, n: int) -> "StateSpace":
        return cls(n, order=frozenset())

    @property
    def is_total(self) -> bool:
        if self.leq is None:
            return False
        return bool((self.leq | self.leq.T).all())


def _closure(n: int, pairs: Iterable[tuple[int, int]]) -> np.ndarray:
    leq = np.eye(n, dtype=bool)
    for i, j in pairs:
        leq[i, j] = True
    # Warshall
    for k in range(n):
        leq |= leq[:, k:k + 1] & leq[k:k + 1, :]
    return leq


@dataclass(frozen=True)
class TestFunction:
    """A real function on the state space, stored as its value table."""

    __test__ = False  # not a pytest class

    values: np.ndarray
    name: str | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ConfigurationError("test function must be a non-empty 1-d table")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError(f"test function {self.name or ''} has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __len__(self):
        return self.values.size


def as_vector(f) -> np.ndarray:
    """Value table of a TestFunction or array-like."""
    if isinstance(f, TestFunction):
        return f.values
    v = np.asarray(f, dtype=float)
    if v.ndim != 1:
        raise ValueError("expected a 1-d function table")
    return v


@dataclass(frozen=True)
class FunctionCone:
    """Finitely generated cone (plus constants) of test functions.

    ``kind`` is ``"increasing"`` (requires ``space.order``), ``"all-bounded"``
    or ``"custom"``.
    """

    kind: str
    generators: tuple[TestFunction, ...]
    space: StateSpace | None = None

    def __post_init__(self):
        if self.kind not in ("increasing", "all-bounded", "custom"):
            raise ConfigurationError(f"unknown cone kind {self.kind!r}")
        object.__setattr__(self, "generators", tuple(self.generators))
        if self.kind == "increasing" and (self.space is None or self.space.leq is None):
            raise ConfigurationError("increasing cone needs a state space with an order")

    def matrix(self) -> np.ndarray:
        """Generators as columns, shape ``(n, len(generators))``."""
        return np.column_stack([g.values for g in self.generators])


def upset_generators(space: StateSpace) -> FunctionCone:
    """Indicators of all nonempty up-sets of ``space.order``.

    The full set is included, so the constant function is always the first
    generator. For a chain this gives ``1{x >= k}`` for ``k = 0..n-1``.
    """
    if space.leq is None:
        raise ConfigurationError("upset_generators needs a state space with an order")
    n = space.n
    if space.is_total:
        # rank states along the chain
        rank = np.argsort(space.leq.sum(axis=0))
        gens = []
        for k in range(n):
            v = np.zeros(n)
            v[rank[k:]] = 1.0
            gens.append(TestFunction(v, name=f"up{k}"))
        return FunctionCone("increasing", tuple(gens), space)
    if n > MAX_ENUMERATION_STATES:
        raise ConfigurationError(f"up-set enumeration limited to {MAX_ENUMERATION_STATES} states")
    leq = space.leq
    gens = [TestFunction(np.ones(n), name="up_all")]
    for size in range(n - 1, 0, -1):
        for subset in itertools.combinations(range(n), size):
            member = np.zeros(n, dtype=bool)
            member[list(subset)] = True
            # up-closed: no i in set with i <= j and j outside
            if (leq[member][:, ~member]).any():
                continue
            gens.append(TestFunction(member.astype(float), name="up{" + ",".join(map(str, subset)) + "}"))
    return FunctionCone("increasing", tuple(gens), space)


def is_in_cone(f, cone: FunctionCone, tol: float = DEFAULT_CONE_TOL) -> bool:
    """Membership of ``f`` in ``cone`` up to ``tol``.

    For the increasing cone this is the pairwise check ``f(i) <= f(j) + tol``
    over all ``i <= j``. Custom cones are tested by nonnegative least squares
    against the generators plus ``+1`` and ``-1``.
    """
    v = as_vector(f)
    if cone.kind == "all-bounded":
        return bool(np.all(np.isfinite(v)))
    if cone.kind == "increasing":
        leq = cone.space.leq
        if v.size != leq.shape[0]:
            raise ValueError(f"function has {v.size} entries, space has {leq.shape[0]}")
        gaps = v[:, None] - v[None, :]  # f(i) - f(j)
        return bool(np.all(gaps[leq] <= tol))
    basis = cone.matrix()
    if v.size != basis.shape[0]:
        raise ValueError(f"function has {v.size} entries, cone lives in dimension {basis.shape[0]}")
    ones = np.ones((v.size, 1))
    _, resid = nnls(np.hstack([basis, ones, -ones]), v)
    return bool(resid <= tol)


def monotonicity_violation(v: np.ndarray, leq: np.ndarray) -> tuple[float, tuple[int, int] | None]:
    """Largest ``f(i) - f(j)`` over ``i <= j`` and the pair attaining it."""
    gaps = np.where(leq, v[:, None] - v[None, :], -np.inf)
    idx = np.unravel_index(np.argmax(gaps), gaps.shape)
    worst = float(gaps[idx])
    return worst, (int(idx[0]), int(idx[1]))
