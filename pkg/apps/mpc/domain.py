# apps/mpc/domain.py
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from apps.core.exceptions import ConfigError
from apps.reference.domain import COST_CHOICES, LINEAR, QUADRATIC

HARD_ZERO = "hard_zero"
SOFT_PENALTY = "soft_penalty"
TERMINAL_CHOICES = [(HARD_ZERO, "Hard terminal equality"), (SOFT_PENALTY, "Soft quadratic terminal penalty")]

# StepDiagnostics.fallback values
SOFT_RETRY = "soft_terminal"
ZERO_ACTION = "zero_action"
FEASIBLE_POINT = "feasible_point"
# steps where the controller could not use its own plan
FAILED_STEP_FALLBACKS = (ZERO_ACTION, FEASIBLE_POINT)

# ---- Controller names ----
QMPC_QREF = "QMPC_QRef"
QMPC_LREF = "QMPC_LRef"
LMPC_QREF = "LMPC_QRef"
LMPC_LREF = "LMPC_LRef"
IARR = "IARR"

# name -> (stage cost kind, reference cost kind)
MPC_VARIANTS = {
    QMPC_QREF: (QUADRATIC, QUADRATIC),
    QMPC_LREF: (QUADRATIC, LINEAR),
    LMPC_QREF: (LINEAR, QUADRATIC),
    LMPC_LREF: (LINEAR, LINEAR),
}

CONTROLLER_CHOICES = [
    (QMPC_QREF, "Quadratic MPC, quadratic reference"),
    (QMPC_LREF, "Quadratic MPC, linear reference"),
    (LMPC_QREF, "Linear MPC, quadratic reference"),
    (LMPC_LREF, "Linear MPC, linear reference"),
    (IARR, "Improved adaptive real-time rebalancing"),
]

_COSTS = {c for c, _ in COST_CHOICES}
_TERMINALS = {t for t, _ in TERMINAL_CHOICES}


@dataclass(frozen=True)
class MpcConfig:
    horizon: int
    cost_kind: str = QUADRATIC
    reference_kind: str = QUADRATIC
    terminal_mode: str = HARD_ZERO
    soft_weight: Optional[float] = None  # queue weight; None: factor * max(max lambda, max T)
    serve_first: bool = True
    rounding_seed: int = 0

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be at least 1.")
        if self.cost_kind not in _COSTS or self.reference_kind not in _COSTS:
            raise ConfigError(f"cost kinds must be one of {sorted(_COSTS)}.")
        if self.terminal_mode not in _TERMINALS:
            raise ConfigError(f"terminal_mode must be one of {sorted(_TERMINALS)}.")
        if self.soft_weight is not None and not self.soft_weight > 0:
            raise ConfigError("soft terminal weight must be positive.")

    @classmethod
    def for_variant(cls, name: str, horizon: int, **kwargs) -> "MpcConfig":
        try:
            cost_kind, reference_kind = MPC_VARIANTS[name]
        except KeyError:
            raise ConfigError(f"Unknown MPC variant {name!r}; expected one of {sorted(MPC_VARIANTS)}.") from None
        return cls(horizon=horizon, cost_kind=cost_kind, reference_kind=reference_kind, **kwargs)

    @property
    def variant(self) -> str:
        for name, kinds in MPC_VARIANTS.items():
            if kinds == (self.cost_kind, self.reference_kind):
                return name
        return f"{self.cost_kind}/{self.reference_kind}"


@dataclass(frozen=True)
class Weights:
    """Diagonals of Q (on the W block) and S (on the R block); zero elsewhere."""

    q: np.ndarray  # active lambda
    s: np.ndarray  # travel steps T

    def Q(self, layout) -> np.ndarray:
        d = np.zeros(layout.nx)
        d[layout.W] = self.q
        return np.diag(d)

    def S(self, layout) -> np.ndarray:
        d = np.zeros(layout.nu)
        d[layout.R] = self.s
        return np.diag(d)


@dataclass(frozen=True)
class FractionalAction:
    V: np.ndarray
    R: np.ndarray

    @classmethod
    def zero(cls, m: int) -> "FractionalAction":
        return cls(np.zeros(m), np.zeros(m))


@dataclass(frozen=True)
class HorizonIndex:
    """Variable layout z = (dv_0 .. dv_{N-1}, dx_1 .. dx_N)."""

    N: int
    nu: int
    nx: int

    @property
    def size(self) -> int:
        return self.N * (self.nu + self.nx)

    def dv(self, i: int) -> slice:
        return slice(i * self.nu, (i + 1) * self.nu)

    def dx(self, i: int) -> slice:
        # i in 1..N
        start = self.N * self.nu + (i - 1) * self.nx
        return slice(start, start + self.nx)


@dataclass(frozen=True)
class HorizonSolution:
    status: str
    terminal_mode: str
    objective: Optional[float] = None
    dv: Optional[np.ndarray] = None  # (N, nu)
    dx: Optional[np.ndarray] = None  # (N, nx): dx_1 .. dx_N
    terminal_residual: Optional[float] = None
    solve_seconds: float = 0.0

    @property
    def dv0(self) -> np.ndarray:
        return self.dv[0]


@dataclass
class StepDiagnostics:
    step: int
    controller: str
    status: str
    objective: Optional[float] = None
    terminal_mode: str = ""
    terminal_residual: Optional[float] = None
    solve_seconds: float = 0.0
    fallback: str = ""
    repaired: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(out.pop("extra"))
        return out
