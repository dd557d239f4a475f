"""Matrix exponential by scaling and squaring of a truncated Taylor series.

For rate matrices the series is taken of the shifted matrix ``A + lam*I``
with ``lam = max_i -A[i, i]``, which is entrywise nonnegative, so every
partial sum and every squaring stays nonnegative. The result is
``exp(-lam) * exp(A + lam*I)``.
"""

from __future__ import annotations

import math

import numpy as np

SCALED_NORM = 0.5
REMAINDER_TOL = 1e-16
MAX_ORDER = 30


def taylor_order(norm: float, tol: float = REMAINDER_TOL) -> int:
    """Smallest ``p`` with ``norm^(p+1)/(p+1)! * e^norm <= tol``."""
    term = 1.0
    for p in range(MAX_ORDER):
        term *= norm / (p + 1)
        if term * math.exp(norm) <= tol:
            return p
    return MAX_ORDER


def expm(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    norm = float(np.max(np.abs(A).sum(axis=1))) if n else 0.0
    squarings = 0
    if norm > SCALED_NORM:
        squarings = int(math.ceil(math.log2(norm / SCALED_NORM)))
    S = A / 2.0 ** squarings
    lam = max(0.0, float(np.max(-np.diag(S))))
    B = S + lam * np.eye(n)
    p = taylor_order(float(np.max(np.abs(B).sum(axis=1))))
    # Horner: I + B(I + B/2(I + B/3(...)))
    E = np.eye(n)
    for k in range(p, 0, -1):
        E = np.eye(n) + (B @ E) / k
    E *= math.exp(-lam)
    for _ in range(squarings):
        E = E @ E
    return E
