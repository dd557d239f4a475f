"""Evolution systems ``T_{s,t}`` of finite chains on a knot grid.

Each knot interval ``[t_k, t_{k+1}]`` carries one block: the matrix
exponential of ``Q * dt`` where the rates are constant there, otherwise an
RK4 solution of ``dB/dt = B Q_t`` with step halving until the Richardson
error estimate meets the tolerance. A fixed jump epoch at ``t_{k+1}``
multiplies the block on the right by its kernel, so ``T_{s,t}`` contains the
kernel iff the epoch lies in ``(s, t]``.

The residual checks at the bottom evaluate the backward equation, the
integral representations and the inhomogeneous representation on knots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, GridError
from .expm import expm
from .rates import ProcessSpec, require_valid
from .states import TestFunction, as_vector

BLOCK_TOL = 1e-12
STOCHASTIC_TOL = 1e-10
MAX_SUBSTEPS = 2 ** 14
_MERGE_TOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing knots from 0 to ``T``."""

    knots: np.ndarray
    steps: int

    @classmethod
    def build(cls, horizon: float, steps: int, extra=()) -> "TimeGrid":
        """Uniform ``steps``-grid on ``[0, horizon]`` plus every extra time in it."""
        if steps < 1:
            raise ValueError("grid needs at least one step")
        base = np.linspace(0.0, float(horizon), int(steps) + 1)
        extra = np.asarray(list(extra), dtype=float).reshape(-1)
        extra = extra[(extra > 0) & (extra < horizon)]
        tol = _MERGE_TOL * max(1.0, horizon)
        knots = list(base)
        for x in extra:
            i = int(np.argmin(np.abs(np.asarray(knots) - x)))
            if abs(knots[i] - x) <= tol:
                knots[i] = float(x)
            else:
                knots.append(float(x))
        knots = np.array(sorted(knots))
        knots.setflags(write=False)
        return cls(knots, int(steps))

    @classmethod
    def for_specs(cls, steps: int, *specs: ProcessSpec, extra=()) -> "TimeGrid":
        """Common grid for several specs sharing a horizon."""
        horizon = specs[0].horizon
        hints = [s.knot_hints() for s in specs] + [np.asarray(list(extra), dtype=float)]
        return cls.build(horizon, steps, np.concatenate(hints))

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    def __len__(self):
        return self.knots.size

    def index(self, t: float) -> int:
        """Position of knot ``t``; raises :class:`GridError` off the grid."""
        tol = _MERGE_TOL * max(1.0, self.horizon)
        i = int(np.searchsorted(self.knots, t))
        for j in (i - 1, i):
            if 0 <= j < self.knots.size and abs(self.knots[j] - t) <= tol:
                return j
        raise GridError(f"time {t} is not a knot of the grid; snap it first")


@dataclass(frozen=True)
class KnotSeries:
    """Vectors indexed by consecutive knots: ``values[k]`` belongs to ``times[k]``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.times.size:
            raise ValueError("one value vector per knot required")

    def at(self, t: float) -> np.ndarray:
        hit = np.flatnonzero(np.abs(self.times - t) <= _MERGE_TOL * max(1.0, abs(t)))
        if not hit.size:
            raise GridError(f"series has no value at {t}")
        return self.values[hit[0]]


def _rk4_block(rates, a, b, steps):
    """RK4 for ``dB/dt = B Q_t`` over ``[a, b]`` in ``steps`` equal substeps.

    ``a`` and ``b`` are arrays so that many blocks advance together.
    """
    h = (b - a) / steps
    n = rates.n
    B = np.broadcast_to(np.eye(n), (a.size, n, n)).copy()
    hh = h[:, None, None]
    for j in range(steps):
        t0 = a + j * h
        Q0 = rates.rates_at(t0)
        Qm = rates.rates_at(t0 + 0.5 * h)
        Q1 = rates.rates_at(np.minimum(t0 + h, b))
        k1 = B @ Q0
        k2 = (B + 0.5 * hh * k1) @ Qm
        k3 = (B + 0.5 * hh * k2) @ Qm
        k4 = (B + hh * k3) @ Q1
        B = B + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return B


def solve_blocks(rates, starts, ends, tol: float = BLOCK_TOL):
    """Continuous-part propagators over ``[starts[i], ends[i]]``.

    Returns ``(blocks, error_estimates)``.
    """
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    n = rates.n
    blocks = np.empty((starts.size, n, n))
    errors = np.zeros(starts.size)
    varying = []
    cache = {}
    for i, (a, b) in enumerate(zip(starts, ends)):
        Q = rates.constant_on(a, b)
        if Q is None:
            varying.append(i)
            continue
        key = (Q.tobytes(), float(b - a))
        if key not in cache:
            cache[key] = expm(Q * (b - a))
        blocks[i] = cache[key]
    if varying:
        idx = np.array(varying)
        pending = idx
        steps = 1
        coarse = _rk4_block(rates, starts[pending], ends[pending], steps)
        while pending.size:
            if 2 * steps > MAX_SUBSTEPS:
                raise ConvergenceError(
                    f"{pending.size} block(s) did not reach tol={tol:g} with {MAX_SUBSTEPS} substeps")
            fine = _rk4_block(rates, starts[pending], ends[pending], 2 * steps)
            est = np.abs(fine - coarse).max(axis=(1, 2)) / 15.0
            done = est <= tol
            blocks[pending[done]] = fine[done]
            errors[pending[done]] = est[done]
            pending = pending[~done]
            coarse = fine[~done]
            steps *= 2
    return blocks, errors


@dataclass(frozen=True, eq=False)
class EvolutionSystem:
    """Blocks of ``T`` on a grid, with kernels split out at jump epochs.

    ``continuous[k]`` propagates over ``[t_k, t_{k+1})`` without jumps and
    ``blocks[k] = continuous[k] @ K`` when an epoch sits at ``t_{k+1}``.
    """

    spec: ProcessSpec
    grid: TimeGrid
    continuous: np.ndarray
    blocks: np.ndarray
    kernels: dict = field(default_factory=dict)  # knot index -> kernel
    block_errors: np.ndarray | None = None
    tol: float = BLOCK_TOL

    @property
    def knots(self) -> np.ndarray:
        return self.grid.knots

    @property
    def n(self) -> int:
        return self.spec.n

    def index(self, t: float) -> int:
        return self.grid.index(t)

    def transition(self, s: float, t: float) -> np.ndarray:
        """``T_{s,t}`` as the ordered product of blocks between knots ``s <= t``."""
        i, j = self.index(s), self.index(t)
        if i > j:
            raise ValueError(f"transition needs s <= t, got s={s}, t={t}")
        out = np.eye(self.n)
        for k in range(i, j):
            out = out @ self.blocks[k]
        return out

    def backward(self, f, t: float) -> np.ndarray:
        """``u[k] = T_{t_k, t} f`` for knots ``t_k <= t`` (shape ``(j+1, ...)``)."""
        j = self.index(t)
        v = f.values if isinstance(f, TestFunction) else np.asarray(f, dtype=float)
        out = np.empty((j + 1,) + v.shape)
        out[j] = v
        for k in range(j - 1, -1, -1):
            out[k] = self.blocks[k] @ out[k + 1]
        return out

    def backward_left(self, u: np.ndarray) -> np.ndarray:
        """Left limits ``T_{t_k-, t} f`` from :meth:`backward` output."""
        left = u.copy()
        for k, K in self.kernels.items():
            if k < u.shape[0]:
                left[k] = K @ u[k]
        return left

    def marginals(self, initial=None) -> np.ndarray:
        """``mu T_{0, t_k}`` at every knot (right-continuous)."""
        mu = self.spec.initial if initial is None else np.asarray(initial, dtype=float)
        out = np.empty((self.knots.size, self.n))
        out[0] = mu
        for k in range(self.knots.size - 1):
            out[k + 1] = out[k] @ self.blocks[k]
        return out

    def marginals_left(self, marg: np.ndarray) -> np.ndarray:
        """Left limits ``mu T_{0, t_k-}`` from :meth:`marginals` output."""
        left = marg.copy()
        for k in self.kernels:
            left[k] = marg[k - 1] @ self.continuous[k - 1]
        return left

    def rates(self, side: str = "right") -> np.ndarray:
        """``Q_{t_k}`` (or ``Q_{t_k-}``) at every knot."""
        return self.spec.rates.rates_at(self.knots, left=(side == "left"))

    def sub_block(self, a: float, b: float, tol: float = 1e-14) -> np.ndarray:
        """Freshly solved ``T_{a,b}`` for ``a < b`` inside one knot interval."""
        C, _ = solve_blocks(self.spec.rates, [a], [b], tol=tol)
        out = C[0]
        K = self.spec.kernel_at(b)
        if K is not None:
            out = out @ K
        return out


def build_evolution(spec: ProcessSpec, grid: TimeGrid | int, tol: float = BLOCK_TOL) -> EvolutionSystem:
    """Evolution system of ``spec`` on ``grid`` (or a uniform grid of that many steps)."""
    require_valid(spec)
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid.for_specs(int(grid), spec)
    if abs(grid.horizon - spec.horizon) > _MERGE_TOL * max(1.0, spec.horizon):
        raise ValueError(f"grid horizon {grid.horizon} differs from spec horizon {spec.horizon}")
    knots = grid.knots
    for tau in spec.epochs:
        grid.index(tau)
    for b in spec.rates.breakpoints():
        grid.index(b)
    continuous, errors = solve_blocks(spec.rates, knots[:-1], knots[1:], tol=tol)
    blocks = continuous.copy()
    kernels = {}
    if spec.jumps is not None:
        for tau, K in zip(spec.jumps.times, spec.jumps.kernels):
            k = grid.index(tau)
            kernels[k] = K
            blocks[k - 1] = continuous[k - 1] @ K
    bad_neg = blocks.min(axis=(1, 2)) < -STOCHASTIC_TOL
    bad_sum = np.abs(blocks.sum(axis=2) - 1.0).max(axis=1) > STOCHASTIC_TOL
    if bad_neg.any() or bad_sum.any():
        k = int(np.flatnonzero(bad_neg | bad_sum)[0])
        raise ConvergenceError(f"block {k} on [{knots[k]}, {knots[k + 1]}] is not stochastic within {STOCHASTIC_TOL}")
    for arr in (continuous, blocks, errors):
        arr.setflags(write=False)
    return EvolutionSystem(spec, grid, continuous, blocks, kernels, errors, tol)


def transition(ev: EvolutionSystem, s: float, t: float) -> np.ndarray:
    return ev.transition(s, t)


@dataclass(frozen=True)
class ResidualCurve:
    """One-sided backward-equation residuals at the knots of ``[0, t]``.

    Entries are NaN where the one-sided quotient is undefined (grid ends) or
    straddles a jump epoch.
    """

    s: np.ndarray
    right: np.ndarray
    left: np.ndarray

    @property
    def max_right(self) -> float:
        return float(np.nanmax(self.right)) if np.isfinite(self.right).any() else 0.0

    @property
    def max_left(self) -> float:
        return float(np.nanmax(self.left)) if np.isfinite(self.left).any() else 0.0

    @property
    def max(self) -> float:
        return max(self.max_right, self.max_left)

    def rows(self):
        for s, r, l in zip(self.s, self.right, self.left):
            yield float(s), float(r), float(l)


def check_backward_equation(ev: EvolutionSystem, f, t: float) -> ResidualCurve:
    """Residuals of ``d+/ds u + Q_s u`` and ``d-/ds u + Q_{s-} u`` for ``u(s) = T_{s,t} f``."""
    f = as_vector(f)
    u = ev.backward(f, t)
    j = u.shape[0] - 1
    s = ev.knots[: j + 1]
    QR = ev.rates("right")[: j + 1]
    QL = ev.rates("left")[: j + 1]
    right = np.full(j + 1, np.nan)
    left = np.full(j + 1, np.nan)
    if j >= 1:
        h = np.diff(s)
        quot = (u[1:] - u[:-1]) / h[:, None]
        right[:-1] = np.abs(quot + np.einsum("kij,kj->ki", QR[:-1], u[:-1])).max(axis=1)
        left[1:] = np.abs(quot + np.einsum("kij,kj->ki", QL[1:], u[1:])).max(axis=1)
        for k in ev.kernels:
            if 1 <= k <= j:
                right[k - 1] = np.nan
                left[k] = np.nan
    return ResidualCurve(s, right, left)


@dataclass(frozen=True)
class IntegralCheck:
    forward: float   # T_{s,t}f - f - int T_{s,u} A_u f du
    backward: float  # T_{s,t}f - f - int A_u T_{u,t} f du

    @property
    def residual(self) -> float:
        return max(self.forward, self.backward)


def check_integral_representation(ev: EvolutionSystem, f, s: float, t: float) -> IntegralCheck:
    """Both integral representations of ``T_{s,t} f - f`` by the trapezoid rule.

    Jump epochs in ``(s, t]`` contribute their ``(K - I)`` terms, i.e. the
    integral is taken against ``dF`` with ``F = t + #epochs``.
    """
    f = as_vector(f)
    i, j = ev.index(s), ev.index(t)
    if i > j:
        raise ValueError("need s <= t")
    if i == j:
        return IntegralCheck(0.0, 0.0)
    knots = ev.knots
    QR, QL = ev.rates("right"), ev.rates("left")
    eye = np.eye(ev.n)
    # forward form, accumulate P = T_{s, t_k}
    P = eye.copy()
    total = np.zeros(ev.n)
    for k in range(i, j):
        h = knots[k + 1] - knots[k]
        P_end = P @ ev.continuous[k]
        total += 0.5 * h * (P @ (QR[k] @ f) + P_end @ (QL[k + 1] @ f))
        K = ev.kernels.get(k + 1)
        if K is not None:
            total += P_end @ ((K - eye) @ f)
        P = P @ ev.blocks[k]
    lhs = P @ f - f
    fwd = float(np.abs(lhs - total).max())
    # backward form, v_k = T_{t_k, t} f
    v = ev.backward(f, t)
    total = np.zeros(ev.n)
    for k in range(i, j):
        h = knots[k + 1] - knots[k]
        K = ev.kernels.get(k + 1)
        v_end = v[k + 1] if K is None else K @ v[k + 1]
        total += 0.5 * h * (QR[k] @ v[k] + QL[k + 1] @ v_end)
        if K is not None:
            total += (K - eye) @ v[k + 1]
    bwd = float(np.abs(v[i] - f - total).max())
    return IntegralCheck(fwd, bwd)


def check_inhomogeneous_representation(ev: EvolutionSystem, F: KnotSeries, G: KnotSeries,
                                       s: float, t: float) -> float:
    """Max over knots ``r`` in ``[s, t]`` of ``|F(r) - T_{r,t}F(t) + int_r^t T_{r,q} G(q) dq|``."""
    i, j = ev.index(s), ev.index(t)
    if i > j:
        raise ValueError("need s <= t")
    knots = ev.knots[i: j + 1]
    Fv = np.stack([F.at(r) for r in knots])
    Gv = np.stack([G.at(r) for r in knots])
    worst = 0.0
    hom = Fv[-1].copy()       # T_{r,t} F(t)
    integral = np.zeros_like(hom)  # int_r^t T_{r,q} G(q) dq
    for k in range(j - 1, i - 1, -1):
        B = ev.blocks[k]
        h = ev.knots[k + 1] - ev.knots[k]
        integral = B @ integral + 0.5 * h * (Gv[k - i] + B @ Gv[k + 1 - i])
        hom = B @ hom
        worst = max(worst, float(np.abs(Fv[k - i] - hom + integral).max()))
    return worst
