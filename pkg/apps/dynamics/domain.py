# apps/dynamics/domain.py
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from apps.core.exceptions import DimensionMismatch


@dataclass(frozen=True)
class StateLayout:
    """
    Flat vector layouts shared by every controller:
      state x = (W, P, F)  sizes (m, n, m)   -> 2n^2 - n
      input v = (V, R)     sizes (m, m)      -> 2n(n-1)
    """

    n: int

    @property
    def m(self) -> int:
        return self.n * (self.n - 1)

    @property
    def nx(self) -> int:
        return 2 * self.m + self.n

    @property
    def nu(self) -> int:
        return 2 * self.m

    @property
    def W(self) -> slice:
        return slice(0, self.m)

    @property
    def P(self) -> slice:
        return slice(self.m, self.m + self.n)

    @property
    def F(self) -> slice:
        return slice(self.m + self.n, self.nx)

    @property
    def V(self) -> slice:
        return slice(0, self.m)

    @property
    def R(self) -> slice:
        return slice(self.m, self.nu)

    def split_state(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self.check(x, self.nx, "state")
        return x[self.W], x[self.P], x[self.F]

    def join_state(self, W, P, F) -> np.ndarray:
        return self.check(np.concatenate([np.ravel(W), np.ravel(P), np.ravel(F)]).astype(float), self.nx, "state")

    def split_input(self, v) -> tuple[np.ndarray, np.ndarray]:
        v = self.check(v, self.nu, "input")
        return v[self.V], v[self.R]

    def join_input(self, V, R) -> np.ndarray:
        return self.check(np.concatenate([np.ravel(V), np.ravel(R)]).astype(float), self.nu, "input")

    @staticmethod
    def check(vec, size: int, what: str) -> np.ndarray:
        arr = np.asarray(vec, dtype=float)
        if arr.shape != (size,):
            raise DimensionMismatch(f"{what} vector has shape {arr.shape}, expected ({size},)")
        return arr


@dataclass(frozen=True)
class LtiModel:
    """x(t+1) = A x(t) + B v(t) + L d(t), with T in steps."""

    A: np.ndarray
    B: np.ndarray
    L: np.ndarray
    T: np.ndarray
    E_in: np.ndarray
    E_out: np.ndarray
    layout: StateLayout

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def m(self) -> int:
        return self.layout.m

    @property
    def F_block(self) -> np.ndarray:
        s = self.layout.F
        return self.A[s, s]
