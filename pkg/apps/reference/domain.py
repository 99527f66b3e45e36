# apps/reference/domain.py
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from apps.dynamics.domain import StateLayout

LINEAR = "linear"
QUADRATIC = "quadratic"
COST_CHOICES = [(LINEAR, "Linear (travel-time weighted l1)"), (QUADRATIC, "Quadratic (travel-time weighted l2)")]


@dataclass(frozen=True)
class EquilibriumReference:
    """
    Fixed point of the lag model under d = lambda:
      W = 0, V = lambda, F = diag(T)(lambda + R), P = any non-negative split.
    """

    W: np.ndarray
    P: np.ndarray
    F: np.ndarray
    V: np.ndarray
    R: np.ndarray
    lam: np.ndarray
    T: np.ndarray
    cost: str = LINEAR
    objective: float = 0.0

    @property
    def min_fleet(self) -> float:
        return float(self.F.sum())

    @property
    def n(self) -> int:
        return self.P.size

    def x_bar(self) -> np.ndarray:
        return StateLayout(self.n).join_state(self.W, self.P, self.F)

    def v_bar(self) -> np.ndarray:
        return StateLayout(self.n).join_input(self.V, self.R)
