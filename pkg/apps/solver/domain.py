# apps/solver/domain.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERIC_FAILURE = "numeric_failure"

STATUS_CHOICES = [
    (OPTIMAL, "Optimal"),
    (INFEASIBLE, "Infeasible"),
    (UNBOUNDED, "Unbounded"),
    (NUMERIC_FAILURE, "Numeric failure"),
]

# Feasibility tolerance for accepting a solution (scaled by 1 + |rhs|_inf)
FEASIBILITY_TOL = 1e-6
# Flow-balance equalities E(R + lambda) = 0
BALANCE_TOL = 1e-8


def _csr(a, shape) -> sp.csr_matrix:
    if a is None:
        return sp.csr_matrix(shape)
    return sp.csr_matrix(a, dtype=float)


def _vec(v, size, fill) -> np.ndarray:
    if v is None:
        return np.full(size, fill, dtype=float)
    out = np.broadcast_to(np.asarray(v, dtype=float), (size,))
    return np.array(out, copy=True)


@dataclass
class ConvexProgram:
    """
    minimize    1/2 x'Qx + c'x + offset
    subject to  A_eq x  = b_eq
                A_ub x <= b_ub
                lb <= x <= ub

    Q zero (no stored entries) means the LP path.
    """

    c: np.ndarray
    Q: sp.csr_matrix
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    offset: float = 0.0
    names: list[str] = field(default_factory=list)

    @classmethod
    def build(
        cls,
        c,
        *,
        Q=None,
        A_eq=None,
        b_eq=None,
        A_ub=None,
        b_ub=None,
        lb=None,
        ub=None,
        offset: float = 0.0,
        names=None,
    ) -> "ConvexProgram":
        c = np.asarray(c, dtype=float).ravel()
        n = c.size
        b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
        b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
        prog = cls(
            c=c,
            Q=_csr(Q, (n, n)),
            A_eq=_csr(A_eq, (b_eq.size, n)),
            b_eq=b_eq,
            A_ub=_csr(A_ub, (b_ub.size, n)),
            b_ub=b_ub,
            lb=_vec(lb, n, -np.inf),
            ub=_vec(ub, n, np.inf),
            offset=float(offset),
            names=list(names) if names else [f"x{i}" for i in range(n)],
        )
        prog.validate()
        return prog

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def is_lp(self) -> bool:
        return self.Q.count_nonzero() == 0

    @property
    def is_diagonal(self) -> bool:
        coo = self.Q.tocoo()
        return bool((coo.row == coo.col).all())

    def validate(self) -> None:
        n = self.n
        if self.Q.shape != (n, n):
            raise ValueError(f"Q must be {n}x{n}, got {self.Q.shape}.")
        if self.A_eq.shape != (self.b_eq.size, n):
            raise ValueError("A_eq / b_eq dimensions disagree.")
        if self.A_ub.shape != (self.b_ub.size, n):
            raise ValueError("A_ub / b_ub dimensions disagree.")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("Bounds need one entry per variable.")
        if (self.lb > self.ub).any():
            raise ValueError("Lower bound above upper bound.")
        if len(self.names) != n:
            raise ValueError("One name per variable.")
        if self.Q.nnz and abs(self.Q - self.Q.T).max() > 1e-12:
            raise ValueError("Q must be symmetric.")
        if self.is_diagonal:
            if (self.Q.diagonal() < -1e-12).any():
                raise ValueError("Q must be positive semidefinite.")
        elif n <= 600 and np.linalg.eigvalsh(self.Q.toarray()).min() < -1e-9:
            raise ValueError("Q must be positive semidefinite.")

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.Q @ x) + self.c @ x + self.offset)

    def residual(self, x) -> float:
        """Largest violation of any constraint or bound at x."""
        x = np.asarray(x, dtype=float)
        parts = [0.0]
        if self.b_eq.size:
            parts.append(np.abs(self.A_eq @ x - self.b_eq).max())
        if self.b_ub.size:
            parts.append(np.maximum(self.A_ub @ x - self.b_ub, 0).max())
        parts.append(np.maximum(self.lb - x, 0).max())
        parts.append(np.maximum(x - self.ub, 0).max())
        return float(max(parts))

    def rhs_scale(self) -> float:
        finite = [np.abs(v[np.isfinite(v)]) for v in (self.b_eq, self.b_ub, self.lb, self.ub)]
        top = max((v.max() for v in finite if v.size), default=0.0)
        return 1.0 + float(top)


@dataclass(frozen=True)
class Solution:
    status: str
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    dual_objective: Optional[float] = None
    max_residual: Optional[float] = None
    solve_seconds: float = 0.0
    backend: str = ""
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "dual_objective": self.dual_objective,
            "max_residual": self.max_residual,
            "solve_seconds": self.solve_seconds,
            "backend": self.backend,
            "message": self.message,
        }
