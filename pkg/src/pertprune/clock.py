"""Clocks for pruning-time measurement.

Importance code calls ``clock.charge(n)`` after each gradient evaluation
over ``n`` layers. A wall clock ignores the charge; the layer-evaluation
clock advances by exactly ``n`` units, which makes timing curves exact.
"""
from __future__ import annotations

import time


class WallClock:
    def now(self) -> float:
        return time.perf_counter()

    def charge(self, layers: int) -> None:
        pass


class LayerEvalClock:
    """Deterministic clock: one unit per layer per gradient evaluation."""

    def __init__(self, cost_per_layer: float = 1.0):
        self.cost_per_layer = cost_per_layer
        self.units = 0.0
        self.evaluations = 0

    def now(self) -> float:
        return self.units

    def charge(self, layers: int) -> None:
        self.units += self.cost_per_layer * layers
        self.evaluations += 1
