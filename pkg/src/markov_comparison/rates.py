"""Time-dependent conservative rate matrices, fixed-jump schedules, process specs.

A rate model ``t -> Q_t`` on ``[0, T]`` is the generator data of a finite,
time-inhomogeneous Markov chain. Models are right-continuous; ``left=True``
requests the left limit ``Q_{t-}``, which differs from ``Q_t`` only at the
breakpoints of a piecewise-constant model.

Constructors only check shapes. Q-matrix properties are reported by
:func:`validate` and are never repaired silently, with one documented
exception: interpolants of :class:`SampledRates` are clamped and re-balanced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._quad import PiecewiseLinearAntiderivative
from .errors import ConfigurationError

QMATRIX_TOL = 1e-12
STOCHASTIC_TOL = 1e-12
UNIFORMIZATION_SAFETY = 1.01
_DENSE_POINTS = 4097


def _as_square(Q, name="Q") -> np.ndarray:
    Q = np.array(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] == 0:
        raise ConfigurationError(f"{name} must be a non-empty square matrix, got shape {Q.shape}")
    return Q


def _rebalance(Q: np.ndarray) -> np.ndarray:
    """Clamp off-diagonals at zero and reset the diagonal to ``-row sum``.

    Works on a single matrix or a stack ``(..., n, n)``.
    """
    n = Q.shape[-1]
    eye = np.eye(n, dtype=bool)
    off = np.where(eye, 0.0, np.maximum(Q, 0.0))
    return off - eye * off.sum(axis=-1, keepdims=True)


class RateModel:
    """Base class; subclasses provide ``rate_at`` and quadrature data."""

    variant = "abstract"
    n: int
    horizon: float

    def _check_time(self, t: float) -> float:
        t = float(t)
        slack = 1e-12 * max(1.0, self.horizon)
        if not (-slack <= t <= self.horizon + slack):
            raise ConfigurationError(f"time {t} outside [0, {self.horizon}]")
        return min(max(t, 0.0), self.horizon)

    def rate_at(self, t: float, left: bool = False) -> np.ndarray:
        raise NotImplementedError

    def rows_at(self, times: np.ndarray, states: np.ndarray) -> np.ndarray:
        """Rows ``Q_t[state]`` for paired arrays of times and states."""
        return np.stack([self.rate_at(t)[s] for t, s in zip(times, states)])

    def rates_at(self, times, left: bool = False) -> np.ndarray:
        """Stack of ``Q_t`` (or ``Q_{t-}``), shape ``(len(times), n, n)``."""
        return np.stack([self.rate_at(t, left=left) for t in np.atleast_1d(times)])

    def breakpoints(self) -> np.ndarray:
        """Interior times where ``Q`` may jump."""
        return np.empty(0)

    def knot_hints(self) -> np.ndarray:
        """Times that evolution grids should contain (breakpoints and kinks)."""
        return self.breakpoints()

    def constant_on(self, a: float, b: float) -> np.ndarray | None:
        """``Q`` if the model is constant on ``[a, b)``, else ``None``."""
        return None

    def uniformization_bound(self) -> float:
        """An upper bound on ``sup_t max_i -Q_t[i, i]``."""
        grid = np.union1d(np.linspace(0.0, self.horizon, _DENSE_POINTS), self.knot_hints())
        worst = max(float(np.max(-np.diag(self.rate_at(t)))) for t in grid)
        return max(worst, 0.0) * UNIFORMIZATION_SAFETY

    def integrand_pieces(self, f: np.ndarray):
        """Nodes and one-sided end values of ``s -> Q_s f`` (linear in between)."""
        raise NotImplementedError

    def drift_antiderivative(self, f) -> PiecewiseLinearAntiderivative:
        """``C(t, i) = int_0^t (Q_s f)(i) ds``, exact unless the model is sampled."""
        nodes, start, end = self.integrand_pieces(np.asarray(f, dtype=float))
        return PiecewiseLinearAntiderivative(nodes, start, end)

    def matrices(self) -> list[tuple[str, np.ndarray]]:
        """Matrices whose validity implies validity of every ``Q_t``."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ConstantRates(RateModel):
    Q: np.ndarray
    horizon: float
    variant = "constant"

    def __post_init__(self):
        object.__setattr__(self, "Q", _as_square(self.Q))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def rate_at(self, t, left=False):
        self._check_time(t)
        return self.Q

    def rows_at(self, times, states):
        return self.Q[np.asarray(states, dtype=np.intp)]

    def constant_on(self, a, b):
        return self.Q

    def uniformization_bound(self):
        return max(float(np.max(-np.diag(self.Q))), 0.0)

    def integrand_pieces(self, f):
        v = self.Q @ f
        return np.array([0.0, self.horizon]), v[None, :], v[None, :]

    def matrices(self):
        return [("/Q", self.Q)]


@dataclass(frozen=True, eq=False)
class PiecewiseConstantRates(RateModel):
    """Right-continuous: ``Q_t = pieces[k]`` for ``t`` in ``[t_k, t_{k+1})``.

    ``times`` runs from ``t_0 = 0`` to ``t_m = T``; the last piece also
    covers ``t = T``.
    """

    times: np.ndarray
    pieces: np.ndarray
    variant = "piecewise"

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        mats = np.array(self.pieces, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ConfigurationError("piecewise model needs at least two breakpoints")
        if mats.ndim != 3 or mats.shape[0] != times.size - 1 or mats.shape[1] != mats.shape[2]:
            raise ConfigurationError(
                f"piecewise model needs {times.size - 1} square matrices, got shape {mats.shape}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "pieces", mats)

    @property
    def n(self) -> int:
        return self.pieces.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def _piece(self, t, left=False):
        m = self.pieces.shape[0]
        side = "left" if left else "right"
        k = np.searchsorted(self.times, t, side=side) - 1
        return np.clip(k, 0, m - 1)

    def rate_at(self, t, left=False):
        t = self._check_time(t)
        return self.pieces[int(self._piece(t, left))]

    def rows_at(self, times, states):
        k = self._piece(np.asarray(times, dtype=float))
        return self.pieces[k, np.asarray(states, dtype=np.intp)]

    def breakpoints(self):
        return self.times[1:-1].copy()

    def constant_on(self, a, b):
        ka, kb = self._piece(a), self._piece(b, left=True)
        return self.pieces[int(ka)] if ka == kb else None

    def uniformization_bound(self):
        diags = np.diagonal(self.pieces, axis1=1, axis2=2)
        return max(float(np.max(-diags)), 0.0)

    def integrand_pieces(self, f):
        v = self.pieces @ f
        return self.times, v, v

    def matrices(self):
        return [(f"/Q/{k}", Q) for k, Q in enumerate(self.pieces)]


@dataclass(frozen=True, eq=False)
class AffineRates(RateModel):
    """``Q_t = Qa + t * Qb``; valid on ``[0, T]`` iff valid at both ends."""

    Qa: np.ndarray
    Qb: np.ndarray
    horizon: float
    variant = "affine"

    def __post_init__(self):
        Qa, Qb = _as_square(self.Qa, "Qa"), _as_square(self.Qb, "Qb")
        if Qa.shape != Qb.shape:
            raise ConfigurationError("Qa and Qb must have the same shape")
        object.__setattr__(self, "Qa", Qa)
        object.__setattr__(self, "Qb", Qb)
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def n(self) -> int:
        return self.Qa.shape[0]

    def rate_at(self, t, left=False):
        t = self._check_time(t)
        return self.Qa + t * self.Qb

    def rows_at(self, times, states):
        s = np.asarray(states, dtype=np.intp)
        return self.Qa[s] + np.asarray(times, dtype=float)[:, None] * self.Qb[s]

    def rates_at(self, times, left=False):
        t = np.atleast_1d(np.asarray(times, dtype=float))
        return self.Qa[None] + t[:, None, None] * self.Qb[None]

    def constant_on(self, a, b):
        return self.Qa if not self.Qb.any() else None

    def integrand_pieces(self, f):
        a, b = self.Qa @ f, self.Qb @ f
        return np.array([0.0, self.horizon]), a[None, :], (a + self.horizon * b)[None, :]

    def matrices(self):
        return [("/Qa", self.Qa), ("/Qa+T*Qb", self.Qa + self.horizon * self.Qb)]


@dataclass(frozen=True, eq=False)
class SampledRates(RateModel):
    """Linear interpolation between sampled matrices, clamped and re-balanced."""

    times: np.ndarray
    samples: np.ndarray
    variant = "sampled"
    refine: int = field(default=32)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        samples = np.array(self.samples, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ConfigurationError("sampled model needs at least two sample times")
        if samples.ndim != 3 or samples.shape[0] != times.size or samples.shape[1] != samples.shape[2]:
            raise ConfigurationError(
                f"sampled model needs {times.size} square matrices, got shape {samples.shape}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "samples", samples)

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def _interp(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        raw = (1.0 - w)[:, None, None] * self.samples[k] + w[:, None, None] * self.samples[k + 1]
        return _rebalance(raw)

    def rate_at(self, t, left=False):
        t = self._check_time(t)
        return self._interp(t)[0]

    def rows_at(self, times, states):
        mats = self._interp(times)
        return mats[np.arange(mats.shape[0]), np.asarray(states, dtype=np.intp)]

    def rates_at(self, times, left=False):
        return self._interp(times)

    def knot_hints(self):
        return self.times[1:-1].copy()

    def uniformization_bound(self):
        # -diag of a clamped interpolant is convex between samples
        diags = np.diagonal(_rebalance(self.samples), axis1=1, axis2=2)
        grid_max = max(float(np.max(-diags)), 0.0)
        return max(grid_max * UNIFORMIZATION_SAFETY, super().uniformization_bound())

    def integrand_pieces(self, f):
        nodes = np.unique(np.concatenate([
            np.linspace(a, b, self.refine + 1) for a, b in zip(self.times[:-1], self.times[1:])]))
        vals = self._interp(nodes) @ f
        return nodes, vals[:-1], vals[1:]

    def matrices(self):
        return [(f"/Q/{k}", Q) for k, Q in enumerate(self.samples)]


@dataclass(frozen=True, eq=False)
class JumpSchedule:
    """Fixed jump epochs in ``(0, T]`` with one row-stochastic kernel each.

    Together with Lebesgue measure the epochs define the integrator
    ``F(t) = t + #{epochs <= t}``.
    """

    times: np.ndarray
    kernels: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        kernels = np.array(self.kernels, dtype=float)
        if kernels.size == 0:
            kernels = kernels.reshape(0, 0, 0)
        if kernels.ndim != 3 or kernels.shape[0] != times.size or kernels.shape[1] != kernels.shape[2]:
            raise ConfigurationError(
                f"jump schedule needs {times.size} square kernels, got shape {kernels.shape}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "kernels", kernels)

    def kernel_at(self, t: float) -> np.ndarray | None:
        hit = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-12))
        return self.kernels[hit[0]] if hit.size else None

    def integrator(self, t: float) -> float:
        return float(t) + float(np.count_nonzero(self.times <= t))


@dataclass(frozen=True, eq=False)
class ProcessSpec:
    """Rates, optional fixed jumps and the initial law of one chain."""

    rates: RateModel
    initial: np.ndarray
    jumps: JumpSchedule | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "initial", np.array(self.initial, dtype=float).reshape(-1))
        if self.jumps is not None and self.jumps.times.size == 0:
            object.__setattr__(self, "jumps", None)

    @property
    def n(self) -> int:
        return self.rates.n

    @property
    def horizon(self) -> float:
        return self.rates.horizon

    @property
    def epochs(self) -> np.ndarray:
        return self.jumps.times if self.jumps is not None else np.empty(0)

    def kernel_at(self, t: float) -> np.ndarray | None:
        return None if self.jumps is None else self.jumps.kernel_at(t)

    def knot_hints(self) -> np.ndarray:
        return np.union1d(self.rates.knot_hints(), self.epochs)


def rate_at(model: RateModel, t: float, left: bool = False) -> np.ndarray:
    return model.rate_at(t, left=left)


def uniformization_bound(model: RateModel) -> float:
    return model.uniformization_bound()


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    pointer: str = ""

    def to_dict(self):
        return {"severity": self.severity, "message": self.message, "pointer": self.pointer}


def _qmatrix_diagnostics(Q: np.ndarray, pointer: str) -> list[Diagnostic]:
    out = []
    scale = max(1.0, float(np.max(np.abs(Q))))
    n = Q.shape[0]
    for i in range(n):
        for j in range(n):
            if i != j and Q[i, j] < -QMATRIX_TOL * scale:
                out.append(Diagnostic("error", f"negative off-diagonal rate Q[{i},{j}] = {Q[i, j]:g}",
                                      f"{pointer}/{i}/{j}"))
        s = float(Q[i].sum())
        if abs(s) > QMATRIX_TOL * scale:
            out.append(Diagnostic("error", f"row {i} sums to {s:g}, expected 0", f"{pointer}/{i}"))
    if not np.all(np.isfinite(Q)):
        out.append(Diagnostic("error", "non-finite rate entries", pointer))
    return out


def _stochastic_diagnostics(K: np.ndarray, pointer: str) -> list[Diagnostic]:
    out = []
    for i, j in np.argwhere(K < 0):
        out.append(Diagnostic("error", f"negative kernel entry K[{i},{j}] = {K[i, j]:g}", f"{pointer}/{i}/{j}"))
    for i, s in enumerate(K.sum(axis=1)):
        if abs(s - 1.0) > STOCHASTIC_TOL:
            out.append(Diagnostic("error", f"kernel row {i} sums to {s:.15g}, expected 1", f"{pointer}/{i}"))
    return out


def validate(spec: ProcessSpec) -> list[Diagnostic]:
    """All invariant violations of ``spec``; an empty list means valid.

    Pointers are relative to the spec object (``/rates/...``, ``/jumps/...``,
    ``/initial``).
    """
    out: list[Diagnostic] = []
    model = spec.rates
    n = model.n
    if not model.horizon > 0:
        out.append(Diagnostic("error", f"horizon must be positive, got {model.horizon}", "/rates/horizon"))
    if isinstance(model, AffineRates) and np.any(np.abs(model.Qb.sum(axis=1)) > QMATRIX_TOL * max(1.0, np.abs(model.Qb).max())):
        out.append(Diagnostic("error", "rows of Qb must sum to 0", "/rates/Qb"))
    for pointer, Q in model.matrices():
        out.extend(_qmatrix_diagnostics(Q, "/rates" + pointer))
    if isinstance(model, (PiecewiseConstantRates, SampledRates)):
        if model.times[0] != 0.0:
            out.append(Diagnostic("error", "first breakpoint must be 0", "/rates/times/0"))
        if np.any(np.diff(model.times) <= 0):
            out.append(Diagnostic("error", "breakpoints must be strictly increasing", "/rates/times"))
    if isinstance(model, SampledRates):
        for k, Q in enumerate(model.samples):
            off = Q[~np.eye(n, dtype=bool)]
            if np.any((off < 0) & (off >= -QMATRIX_TOL)):
                out.append(Diagnostic("warning", "tiny negative rates clamped and re-balanced",
                                      f"/rates/Q/{k}"))
    if spec.jumps is not None:
        J = spec.jumps
        if J.kernels.shape[1] != n:
            out.append(Diagnostic("error", f"kernels are {J.kernels.shape[1]}x{J.kernels.shape[1]}, "
                                           f"rates are {n}x{n}", "/jumps/kernels"))
        else:
            for k, K in enumerate(J.kernels):
                out.extend(_stochastic_diagnostics(K, f"/jumps/kernels/{k}"))
        if np.any(np.diff(J.times) <= 0):
            out.append(Diagnostic("error", "jump epochs must be strictly increasing", "/jumps/times"))
        if J.times.size and (J.times[0] <= 0 or J.times[-1] > model.horizon):
            out.append(Diagnostic("error", f"jump epochs must lie in (0, {model.horizon}]", "/jumps/times"))
    mu = spec.initial
    if mu.size != n:
        out.append(Diagnostic("error", f"initial law has {mu.size} entries, expected {n}", "/initial"))
    else:
        if np.any(mu < 0):
            out.append(Diagnostic("error", "initial law has negative mass", "/initial"))
        if abs(mu.sum() - 1.0) > STOCHASTIC_TOL:
            out.append(Diagnostic("error", f"initial law sums to {mu.sum():.15g}, expected 1", "/initial"))
    return out


def require_valid(spec: ProcessSpec) -> None:
    errors = [d for d in validate(spec) if d.severity == "error"]
    if errors:
        raise ConfigurationError("; ".join(f"{d.pointer}: {d.message}" for d in errors))
