"""Antiderivatives of piecewise-linear, vector-valued integrands."""

from __future__ import annotations

import numpy as np


class PiecewiseLinearAntiderivative:
    """``C(t, i) = int_0^t h(s, i) ds`` for ``h`` linear on each node interval.

    ``start[k]`` is the value of ``h`` just after ``nodes[k]`` and ``end[k]``
    the value just before ``nodes[k + 1]``, so jumps at the nodes are allowed.
    """

    def __init__(self, nodes, start, end):
        self.nodes = np.asarray(nodes, dtype=float)
        self.start = np.asarray(start, dtype=float)
        self.end = np.asarray(end, dtype=float)
        widths = np.diff(self.nodes)
        pieces = 0.5 * (self.start + self.end) * widths[:, None]
        self.cumulative = np.vstack([np.zeros((1, self.start.shape[1])), np.cumsum(pieces, axis=0)])
        self._widths = widths

    def __call__(self, t, states) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        states = np.asarray(states, dtype=np.intp)
        k = np.clip(np.searchsorted(self.nodes, t, side="right") - 1, 0, len(self._widths) - 1)
        dt = t - self.nodes[k]
        width = self._widths[k]
        a = self.start[k, states]
        b = self.end[k, states]
        return self.cumulative[k, states] + a * dt + (b - a) * dt * dt / (2.0 * width)
