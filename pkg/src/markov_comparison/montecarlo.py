"""Path simulation by thinning and Monte Carlo martingale tests.

Paths are simulated in fixed blocks of ``BLOCK_SIZE``; block ``b`` draws from
a Philox stream keyed by ``(seed, b)``, so the output is bit-identical for
any number of workers.

The tests compute, per path, a process ``M`` at checkpoint times and z-test
the increments ``M_t - M_s`` conditional on the state at ``s``. Conditioning
on the current state instead of the whole past is enough by the Markov
property. All processes involved are bounded on a finite space, so local
martingales are true martingales and plain mean tests apply.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from ._quad import PiecewiseLinearAntiderivative
from .errors import ConfigurationError, GridError
from .evolution import EvolutionSystem, KnotSeries
from .rates import ProcessSpec, require_valid
from .states import as_vector

BLOCK_SIZE = 8192
DEFAULT_PATHS = 100_000
DEFAULT_Z_MAX = 4.0


@dataclass(frozen=True)
class PathSample:
    """One cadlag trajectory: initial state, then (time, post-jump state) records.

    Fixed epochs always appear as records, possibly as self-transitions.
    """

    initial: int
    times: np.ndarray
    states: np.ndarray
    seed: int

    def state_at(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="right"))
        return self.initial if k == 0 else int(self.states[k - 1])


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Many paths in compressed form: path ``p`` owns events ``offsets[p]:offsets[p+1]``."""

    initial: np.ndarray
    offsets: np.ndarray
    times: np.ndarray
    states: np.ndarray
    at_epoch: np.ndarray
    horizon: float
    seed: int

    def __len__(self):
        return self.initial.size

    def __iter__(self) -> Iterator[PathSample]:
        for p in range(len(self)):
            a, b = self.offsets[p], self.offsets[p + 1]
            yield PathSample(int(self.initial[p]), self.times[a:b], self.states[a:b], self.seed)

    def __getitem__(self, p: int) -> PathSample:
        a, b = self.offsets[p], self.offsets[p + 1]
        return PathSample(int(self.initial[p]), self.times[a:b], self.states[a:b], self.seed)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def states_at(self, t: float) -> np.ndarray:
        """State of every path at time ``t`` (right-continuous)."""
        path_of = np.repeat(np.arange(len(self)), self.counts)
        hit = self.times <= t
        n_before = np.bincount(path_of[hit], minlength=len(self))
        out = self.initial.copy()
        has = n_before > 0
        out[has] = self.states[self.offsets[:-1][has] + n_before[has] - 1]
        return out

    def segments(self):
        """Holding intervals of all paths: ``(path, start, end, state, is_first)`` arrays."""
        P = len(self)
        counts = self.counts
        seg_count = counts + 1
        path = np.repeat(np.arange(P), seg_count)
        first = np.concatenate([[0], np.cumsum(seg_count)[:-1]])
        is_first = np.zeros(path.size, dtype=bool)
        is_first[first] = True
        start = np.empty(path.size)
        state = np.empty(path.size, dtype=np.intp)
        start[is_first] = 0.0
        state[is_first] = self.initial
        start[~is_first] = self.times
        state[~is_first] = self.states
        end = np.empty(path.size)
        end[:-1] = start[1:]
        last = first + counts
        end[last] = self.horizon
        return path, start, end, state, is_first


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _sample_rows(rng, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    return np.minimum((u[:, None] >= cum).sum(axis=1), probs.shape[1] - 1)


def _simulate_block(spec: ProcessSpec, size: int, seed: int, block: int, lam: float):
    rng = _block_rng(seed, block)
    n = spec.n
    state = _sample_rows(rng, np.broadcast_to(spec.initial, (size, n)))
    initial = state.copy()
    ev_path, ev_time, ev_state, ev_epoch = [], [], [], []
    bounds = list(spec.epochs) + ([spec.horizon] if not spec.epochs.size or spec.epochs[-1] < spec.horizon else [])
    a = 0.0
    for b in bounds:
        if lam > 0:
            clock = np.full(size, a)
            active = np.arange(size)
            while active.size:
                clock[active] += rng.exponential(1.0 / lam, active.size)
                active = active[clock[active] < b]
                if not active.size:
                    break
                tc = clock[active]
                cur = state[active]
                probs = spec.rates.rows_at(tc, cur) / lam
                probs[np.arange(active.size), cur] += 1.0
                new = _sample_rows(rng, np.maximum(probs, 0.0))
                moved = new != cur
                ev_path.append(active[moved])
                ev_time.append(tc[moved])
                ev_state.append(new[moved])
                ev_epoch.append(np.zeros(int(moved.sum()), dtype=bool))
                state[active] = new
        K = spec.kernel_at(b)
        if K is not None:
            state = _sample_rows(rng, K[state])
            ev_path.append(np.arange(size))
            ev_time.append(np.full(size, b))
            ev_state.append(state.copy())
            ev_epoch.append(np.ones(size, dtype=bool))
        a = b
    if ev_path:
        path = np.concatenate(ev_path)
        order = np.argsort(path, kind="stable")
        path = path[order]
        times = np.concatenate(ev_time)[order]
        states = np.concatenate(ev_state)[order]
        epoch = np.concatenate(ev_epoch)[order]
    else:
        path = np.empty(0, dtype=np.intp)
        times, states, epoch = np.empty(0), np.empty(0, dtype=np.intp), np.empty(0, dtype=bool)
    counts = np.bincount(path, minlength=size)
    return initial, counts, times, states, epoch


def simulate(spec: ProcessSpec, n_paths: int = DEFAULT_PATHS, seed: int = 0, *,
             workers: int = 1, block_size: int = BLOCK_SIZE) -> PathBatch:
    """Thinning simulation against the uniformization bound.

    A candidate at time ``t`` in state ``i`` moves to ``j != i`` with
    probability ``Q_t[i, j] / lam`` and is rejected otherwise; fixed epochs
    draw from their kernel row. With ``lam = 0`` only the epochs move paths.
    """
    require_valid(spec)
    if n_paths < 1:
        raise ConfigurationError("n_paths must be positive")
    lam = spec.rates.uniformization_bound()
    sizes = [min(block_size, n_paths - b * block_size) for b in range((n_paths + block_size - 1) // block_size)]
    jobs = [(spec, size, seed, b, lam) for b, size in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: _simulate_block(*job), jobs))
    else:
        parts = [_simulate_block(*job) for job in jobs]
    initial = np.concatenate([p[0] for p in parts])
    counts = np.concatenate([p[1] for p in parts])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return PathBatch(
        initial=initial,
        offsets=offsets,
        times=np.concatenate([p[2] for p in parts]),
        states=np.concatenate([p[3] for p in parts]).astype(np.intp),
        at_epoch=np.concatenate([p[4] for p in parts]),
        horizon=spec.horizon,
        seed=seed,
    )


def empirical_marginal(batch: PathBatch, n: int, t: float):
    """Empirical law at ``t`` and its standard errors."""
    counts = np.bincount(batch.states_at(t), minlength=n)
    p = counts / len(batch)
    return p, np.sqrt(p * (1 - p) / len(batch))


@dataclass
class MartingaleTestResult:
    checkpoints: list[float]
    cells: list[dict]
    z_max: float
    alternative: str
    skipped: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def worst_z(self) -> float:
        """Largest statistic in the direction(s) under test."""
        zs = [c["z"] for c in self.cells]
        if not zs:
            return 0.0
        if self.alternative == "super":
            return max(zs)
        if self.alternative == "sub":
            return max(-z for z in zs)
        return max(abs(z) for z in zs)

    @property
    def max_abs_z(self) -> float:
        return max((abs(c["z"]) for c in self.cells), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst_z <= self.z_max

    def to_dict(self):
        return {
            "checkpoints": [float(c) for c in self.checkpoints],
            "alternative": self.alternative,
            "z_max": self.z_max,
            "passed": self.passed,
            "worst_z": _finite(self.worst_z),
            "cells": [{k: _finite(v) if isinstance(v, float) else v for k, v in c.items()} for c in self.cells],
            "skipped": self.skipped,
            "notes": self.notes,
            **self.extra,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "t", "state", "count", "mean", "se", "z"])
        for c in self.cells:
            w.writerow([repr(c["s"]), repr(c["t"]), "" if c["state"] is None else c["state"], c["count"],
                        repr(c["mean"]), repr(c["se"]), repr(c["z"])])
        return buf.getvalue()


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else (None if np.isnan(x) else ("inf" if x > 0 else "-inf"))


RESOLUTION = 1e-9


def _z(values: np.ndarray, floor: float = 0.0, model_var: float | None = None):
    """Mean, standard error and z-score of ``values``.

    ``model_var`` is the expected squared increment implied by the
    predictable quadratic variation; the larger of it and the sample
    variance is used, so rare large jumps that happen not to occur in the
    sample cannot shrink the error bar. ``floor`` bounds the standard error
    from below so floating-point residue (for example ``Q f`` of a constant
    ``f``) is not read as a significant drift.
    """
    m = float(values.mean())
    var = float(values.var(ddof=1))
    if model_var is not None:
        var = max(var, model_var)
    se = float(np.sqrt(var / values.size))
    scale = max(se, floor)
    if scale == 0.0:
        return m, se, 0.0 if m == 0.0 else float(np.sign(m) * np.inf)
    return m, se, m / scale


def _stratified_test(values: np.ndarray, states_at: Callable[[float], np.ndarray],
                     checkpoints: Sequence[float], z_max: float, alternative: str,
                     qv: np.ndarray | None = None) -> MartingaleTestResult:
    """z-tests of ``values[:, b] - values[:, a]`` given the state at ``checkpoints[a]``.

    ``qv`` holds the predictable quadratic variation of the martingale part
    at each checkpoint; its mean increment over a cell is the model variance
    of that cell.
    """
    cells, skipped = [], []
    C = len(checkpoints)
    floor = RESOLUTION * max(1.0, float(np.abs(values).max(initial=0.0)))
    for a in range(C):
        cond = states_at(checkpoints[a])
        for b in range(a + 1, C):
            inc = values[:, b] - values[:, a]
            groups = [(None, np.ones(inc.size, dtype=bool))]
            groups += [(int(i), cond == i) for i in np.unique(cond)]
            for state, sel in groups:
                cnt = int(sel.sum())
                if cnt < 2:
                    skipped.append({"s": float(checkpoints[a]), "t": float(checkpoints[b]),
                                    "state": state, "count": cnt})
                    continue
                model_var = None if qv is None else float((qv[sel, b] - qv[sel, a]).mean())
                m, se, z = _z(inc[sel], floor, model_var)
                cells.append({"s": float(checkpoints[a]), "t": float(checkpoints[b]), "state": state,
                              "count": cnt, "mean": m, "se": se, "z": z})
    return MartingaleTestResult([float(c) for c in checkpoints], cells, float(z_max), alternative, skipped)


def _path_process(batch: PathBatch, phi, antiderivative, jump_term, checkpoints) -> np.ndarray:
    """``phi(c, X_c) - phi(0, X_0) - C-integral - epoch terms`` for each checkpoint ``c``."""
    path, start, end, seg_state, is_first = batch.segments()
    P = len(batch)
    # pre-jump state of every event = state of the preceding segment
    ev_seg = np.flatnonzero(~is_first)
    pre_state = seg_state[ev_seg - 1]
    ev_path = path[ev_seg]
    x0 = batch.initial
    out = np.empty((P, len(checkpoints)))
    at_start = antiderivative(start, seg_state)
    full = antiderivative(end, seg_state) - at_start
    for c_idx, c in enumerate(checkpoints):
        done = end <= c
        comp = np.zeros(P)
        comp += np.bincount(path[done], weights=full[done], minlength=P)
        cut = np.flatnonzero((start < c) & ~done)
        partial = antiderivative(np.full(cut.size, c), seg_state[cut]) - at_start[cut]
        comp += np.bincount(path[cut], weights=partial, minlength=P)
        sel = batch.at_epoch & (batch.times <= c)
        if sel.any():
            jt = jump_term(batch.times[sel], pre_state[sel])
            comp += np.bincount(ev_path[sel], weights=jt, minlength=P)
        xc = batch.states_at(c)
        out[:, c_idx] = phi(np.full(P, c), xc) - phi(np.zeros(P), x0) - comp
    return out


def _check_checkpoints(checkpoints, horizon):
    cps = [float(c) for c in checkpoints]
    if sorted(cps) != cps or len(set(cps)) != len(cps):
        raise ConfigurationError("checkpoints must be strictly increasing")
    if cps[0] < 0 or cps[-1] > horizon + 1e-12:
        raise ConfigurationError(f"checkpoints must lie in [0, {horizon}]")
    return cps


def _zero(t, x):
    return np.zeros(np.shape(x))


def _accumulate(batch: PathBatch, density, epoch_term, checkpoints) -> np.ndarray:
    """``int_0^c density(s, X_s) ds + sum_{epochs <= c} epoch_term(X_{tau-})`` per path."""
    return -_path_process(batch, _zero, density, epoch_term, checkpoints)


def _kernel_variance(spec: ProcessSpec, value_at):
    """Epoch term ``K(v^2) - (K v)^2`` of the quadratic variation, ``v = value_at(tau)``."""
    def term(times, pre):
        out = np.zeros(times.size)
        for tau in np.unique(times):
            K = spec.kernel_at(tau)
            if K is None:
                continue
            v = value_at(tau)
            sel = times == tau
            out[sel] = (K @ (v * v) - (K @ v) ** 2)[pre[sel]]
        return out

    return term


def quadratic_variation(batch: PathBatch, spec: ProcessSpec, f, checkpoints) -> np.ndarray:
    """Predictable quadratic variation of the martingale of ``f`` under ``spec``.

    The density is ``Q_s(f^2) - 2 f Q_s f``, the rate-weighted squared jump
    size, and is integrated exactly along each path.
    """
    fv = as_vector(f)
    nodes, sq_start, sq_end = spec.rates.integrand_pieces(fv * fv)
    _, lin_start, lin_end = spec.rates.integrand_pieces(fv)
    density = PiecewiseLinearAntiderivative(nodes, sq_start - 2 * fv * lin_start, sq_end - 2 * fv * lin_end)
    return _accumulate(batch, density, _kernel_variance(spec, lambda tau: fv), _check_checkpoints(
        checkpoints, batch.horizon))


def _spacetime_quadratic_variation(batch: PathBatch, spec: ProcessSpec, u: KnotSeries, checkpoints):
    """As ``quadratic_variation`` for a function linear in time between knots.

    The density is evaluated at the knots and interpolated linearly, which
    is accurate to second order in the knot spacing.
    """
    times, vals = u.times, u.values
    QR = spec.rates.rates_at(times[:-1])
    QL = spec.rates.rates_at(times[1:], left=True)

    def gamma(Q, v):
        return np.einsum("kij,kj->ki", Q, v * v) - 2 * v * np.einsum("kij,kj->ki", Q, v)

    density = PiecewiseLinearAntiderivative(times, gamma(QR, vals[:-1]), gamma(QL, vals[1:]))
    phi = _interp_series(u)
    return _accumulate(batch, density,
                       _kernel_variance(spec, lambda tau: phi(np.full(spec.n, tau), np.arange(spec.n))),
                       checkpoints)


def martingale_process(batch: PathBatch, spec: ProcessSpec, f, checkpoints) -> np.ndarray:
    """``M_c = f(X_c) - f(X_0) - int_0^c (Q_s f)(X_s) ds - sum_{epochs <= c} ((K - I) f)(X_{tau-})``."""
    fv = as_vector(f)
    C = spec.rates.drift_antiderivative(fv)

    def jump(times, pre):
        out = np.empty(times.size)
        for tau in np.unique(times):
            K = spec.kernel_at(tau)
            sel = times == tau
            # an epoch the compensating spec does not know is left uncompensated
            out[sel] = 0.0 if K is None else (K @ fv - fv)[pre[sel]]
        return out

    return _path_process(batch, lambda t, x: fv[x], C, jump, checkpoints)


def martingale_test(batch: PathBatch, spec: ProcessSpec, f, checkpoints: Sequence[float],
                    z_max: float = DEFAULT_Z_MAX) -> MartingaleTestResult:
    """Two-sided stratified test that the compensated process is a martingale.

    ``spec`` supplies the compensator; passing a spec other than the one
    that generated ``batch`` is how a wrong drift is detected.
    """
    cps = _check_checkpoints(checkpoints, batch.horizon)
    M = martingale_process(batch, spec, f, cps)
    qv = quadratic_variation(batch, spec, f, cps)
    res = _stratified_test(M, batch.states_at, cps, z_max, "two-sided", qv)
    res.notes.append("bounded processes: local martingale = martingale; conditioning on X_s by the Markov property")
    return res


def _spacetime_pieces(spec: ProcessSpec, u: KnotSeries):
    times, vals = u.times, u.values
    QR = spec.rates.rates_at(times[:-1])
    QL = spec.rates.rates_at(times[1:], left=True)
    start = np.einsum("kij,kj->ki", QR, vals[:-1])
    end = np.einsum("kij,kj->ki", QL, vals[1:])
    return PiecewiseLinearAntiderivative(times, start, end)


def _interp_series(u: KnotSeries):
    times, vals = u.times, u.values

    def phi(t, x):
        k = np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2)
        w = (t - times[k]) / (times[k + 1] - times[k])
        return (1 - w) * vals[k, x] + w * vals[k + 1, x]

    return phi


def spacetime_martingale_test(batch: PathBatch, spec: ProcessSpec, u: KnotSeries,
                              checkpoints: Sequence[float], z_max: float = DEFAULT_Z_MAX,
                              alternative: str = "two-sided") -> MartingaleTestResult:
    """Test for ``u(c, X_c) - u(0, X_0) - int_0^c (d/ds + A_s) u(s, X_s) ds``.

    ``u`` is linear in time between its knots, so the time derivative is the
    one-sided knot difference and ``(Q_s u(s))(x)`` is linear on each knot
    interval for piecewise-constant rates; the compensator is then exact.
    """
    cps = _check_checkpoints(checkpoints, batch.horizon)
    if u.times[0] > 0 or u.times[-1] < cps[-1] - 1e-12:
        raise GridError("u must cover [0, last checkpoint]")
    phi = _interp_series(u)
    H = _spacetime_pieces(spec, u)

    def antiderivative(t, x):
        return phi(t, x) - phi(np.zeros_like(t), x) + H(t, x)

    def jump(times, pre):
        out = np.empty(times.size)
        for tau in np.unique(times):
            K = spec.kernel_at(tau)
            sel = times == tau
            if K is None:
                out[sel] = 0.0
                continue
            v = phi(np.full(spec.n, tau), np.arange(spec.n))
            out[sel] = (K @ v - v)[pre[sel]]
        return out

    M = _path_process(batch, phi, antiderivative, jump, cps)
    qv = _spacetime_quadratic_variation(batch, spec, u, cps)
    res = _stratified_test(M, batch.states_at, cps, z_max, alternative, qv)
    res.notes.append("space-time compensator: one-sided knot differences in time plus Q_s u(s)")
    return res


def linking_supermartingale_test(batch_y: PathBatch, ev_x: EvolutionSystem, f, t: float,
                                 checkpoints: Sequence[float], z_max: float = DEFAULT_Z_MAX,
                                 alternative: str = "super", spec_y: ProcessSpec | None = None
                                 ) -> MartingaleTestResult:
    """One-sided test of ``E[L_b - L_a | Y_a] <= 0`` for ``L_s = T^X_{s,t} f(Y_s)``.

    ``alternative="sub"`` tests the reverse inequality and ``"two-sided"``
    the martingale case. Checkpoints must be knots of ``ev_x`` in ``[0, t]``.
    With ``spec_y`` given, the quadratic variation of ``L`` under ``Y``
    bounds the error bars from below. The path means of ``L`` at the first
    and last checkpoint estimate the
    linking curve at those times and are reported with their standard errors.
    """
    fv = as_vector(f)
    cps = _check_checkpoints(checkpoints, t)
    u = ev_x.backward(fv, t)
    L = np.empty((len(batch_y), len(cps)))
    for c_idx, c in enumerate(cps):
        L[:, c_idx] = u[ev_x.index(c)][batch_y.states_at(c)]
    qv = None
    if spec_y is not None:
        j = ev_x.index(t)
        qv = _spacetime_quadratic_variation(batch_y, spec_y, KnotSeries(ev_x.knots[: j + 1], u[: j + 1]), cps)
    res = _stratified_test(L, batch_y.states_at, cps, z_max, alternative, qv)
    for key, col in (("g_first", L[:, 0]), ("g_last", L[:, -1])):
        mean, se, _ = _z(col)
        res.extra.update({key: mean, key + "_se": se})
    return res
