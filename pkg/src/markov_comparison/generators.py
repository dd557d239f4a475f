"""One-sided generators of an evolution system and space-time generators.

``estimate_generator`` recovers ``Q_s`` (right) or ``Q_{s-}`` (left) from
difference quotients of freshly solved sub-blocks, with one Richardson step.
``apply_generator`` is the exact counterpart used by the comparison checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridError
from .evolution import EvolutionSystem, KnotSeries
from .rates import ProcessSpec
from .states import as_vector

CONVERGENCE_TOL = 1e-6
LEVELS = 4
_FLAT_GAP = 1e-12


@dataclass(frozen=True)
class GeneratorEstimate:
    s: float
    side: str
    matrix: np.ndarray
    table: list  # (h, quotient, Cauchy gap against previous h; nan for the first)
    error_estimate: float
    converged: bool
    diverged: bool

    def gap_rows(self):
        for h, _, gap in self.table:
            yield float(h), float(gap)


def estimate_generator(ev: EvolutionSystem, s: float, side: str = "right",
                       h0: float | None = None) -> GeneratorEstimate:
    """Difference quotients along ``h0, h0/2, h0/4, h0/8``.

    ``h0`` defaults to the knot spacing on the requested side, shortened so
    that the leading remainder ``(h0/4)^2 |Q|^3 / 12`` stays below a tenth
    of the convergence tolerance. The estimate
    is ``2 D(h0/8) - D(h0/4)``; its error is estimated as a third of the
    distance to the previous extrapolant (the Richardson remainder is
    ``O(h^2)``). Non-decreasing Cauchy gaps mark the estimate as diverged;
    that is reported, not raised.
    """
    if side not in ("right", "left"):
        raise ValueError(f"side must be 'right' or 'left', got {side!r}")
    k = ev.index(s)
    knots = ev.knots
    if side == "right" and k == knots.size - 1:
        raise GridError(f"no right neighbour of knot {s}")
    if side == "left" and k == 0:
        raise GridError("the left generator is undefined at time 0")
    spacing = knots[k + 1] - knots[k] if side == "right" else knots[k] - knots[k - 1]
    if h0 is None:
        scale = float(np.abs(ev.spec.rates.rate_at(s, left=(side == "left"))).sum(axis=1).max())
        h0 = spacing
        if scale > 0:
            h0 = min(spacing, 4.0 * np.sqrt(12.0 * 0.1 * CONVERGENCE_TOL / scale ** 3))
    h0 = min(float(h0), spacing)
    eye = np.eye(ev.n)
    table = []
    quotients = []
    for level in range(LEVELS):
        h = h0 / 2 ** level
        if side == "right":
            T = ev.sub_block(s, s + h)
        else:
            T = ev.sub_block(s - h, s)
        D = (T - eye) / h
        gap = float(np.abs(D - quotients[-1]).max()) if quotients else float("nan")
        quotients.append(D)
        table.append((h, D, gap))
    gaps = [g for _, _, g in table[1:]]
    diverged = any(b > a and b > _FLAT_GAP for a, b in zip(gaps, gaps[1:]))
    prev = 2 * quotients[-2] - quotients[-3]
    est = 2 * quotients[-1] - quotients[-2]
    err = float(np.abs(est - prev).max()) / 3.0
    return GeneratorEstimate(float(s), side, est, table, err,
                             converged=(not diverged and err <= CONVERGENCE_TOL), diverged=diverged)


def apply_generator(spec: ProcessSpec, s: float, f, side: str = "right", jump: bool = False) -> np.ndarray:
    """``Q_s f`` (or ``Q_{s-} f``); with ``jump=True`` the epoch part ``(K - I) f``.

    The jump part is the generator with respect to the counting component
    of the integrator ``F`` and vanishes off the jump epochs.
    """
    f = as_vector(f)
    if jump:
        K = spec.kernel_at(s)
        return np.zeros_like(f) if K is None else K @ f - f
    return spec.rates.rate_at(s, left=(side == "left")) @ f


def spacetime_apply(spec: ProcessSpec, s: float, F: KnotSeries, side: str = "right") -> np.ndarray:
    """``(d/ds + A_s) F(s, .)`` with a one-sided knot difference in time."""
    times = F.times
    hit = np.flatnonzero(np.abs(times - s) <= 1e-12 * max(1.0, abs(s)))
    if not hit.size:
        raise GridError(f"series has no knot at {s}")
    k = int(hit[0])
    if side == "right":
        if k + 1 >= times.size:
            raise GridError(f"no right neighbour of {s} in the series")
        dt = (F.values[k + 1] - F.values[k]) / (times[k + 1] - times[k])
    elif side == "left":
        if k == 0:
            raise GridError(f"no left neighbour of {s} in the series")
        dt = (F.values[k] - F.values[k - 1]) / (times[k] - times[k - 1])
    else:
        raise ValueError(f"side must be 'right' or 'left', got {side!r}")
    return dt + apply_generator(spec, s, F.values[k], side=side)
