# apps/core/exceptions.py
from __future__ import annotations

from typing import Any, Optional


class RebalanceError(Exception):
    """
    Base for every domain error raised by the toolkit.
    Mirrors DRF's APIException shape: a default detail/code per subclass,
    overridable per instance, rendered as a machine-readable envelope.
    """

    default_detail = "Rebalancing toolkit error."
    default_code = "error"

    def __init__(self, detail: Any = None, *, code: Optional[str] = None, step: Optional[int] = None):
        self.detail = self.default_detail if detail is None else detail
        self.code = code or self.default_code
        self.step = step
        super().__init__(self.detail)

    def __str__(self) -> str:
        if self.step is None:
            return str(self.detail)
        return f"step {self.step}: {self.detail}"

    def as_dict(self) -> dict:
        body = {"type": type(self).__name__, "code": self.code, "detail": self.detail}
        if self.step is not None:
            body["step"] = self.step
        return {"error": body}


# ---- network ----

class NotStronglyConnected(RebalanceError):
    default_detail = "Road network is not strongly connected."
    default_code = "not_strongly_connected"


class RoadNetworkFormatError(RebalanceError):
    default_detail = "Road network file is malformed."
    default_code = "road_network_format"


class InvalidK(RebalanceError):
    default_detail = "Zone count k must satisfy 2 <= k <= number of distinct points."
    default_code = "invalid_k"


# ---- demand ----

class StepOutOfRange(RebalanceError):
    default_detail = "Step is outside the demand scenario."
    default_code = "step_out_of_range"


# ---- plant / model ----

class InfeasibleAction(RebalanceError):
    default_detail = "Control action violates plant constraints."
    default_code = "infeasible_action"


class FleetConservationError(RebalanceError):
    default_detail = "Fleet size changed during simulation."
    default_code = "fleet_conservation"


class DimensionMismatch(RebalanceError):
    default_detail = "Vector dimensions do not match the model layout."
    default_code = "dimension_mismatch"


# ---- reference / solver ----

class NotBalanced(RebalanceError):
    default_detail = "Rebalancing flow does not satisfy E(R + lambda) = 0."
    default_code = "not_balanced"


class ReferenceInfeasible(RebalanceError):
    default_detail = "Equilibrium reference program is infeasible."
    default_code = "reference_infeasible"


class SolverFailure(RebalanceError):
    default_detail = "Convex program solver failed."
    default_code = "solver_failure"


# ---- controllers ----

class InfeasibleHorizon(RebalanceError):
    default_detail = "Horizon program is infeasible under the hard terminal constraint."
    default_code = "infeasible_horizon"


class RefreshNotDue(RebalanceError):
    default_detail = "Reference refresh requested off a refresh boundary."
    default_code = "refresh_not_due"


# ---- harness ----

class ConfigError(RebalanceError):
    default_detail = "Invalid configuration."
    default_code = "config_error"


class MismatchedConfigs(RebalanceError):
    default_detail = "Compared configurations must differ only in controller."
    default_code = "mismatched_configs"


class SimulationError(RebalanceError):
    default_detail = "Simulation failed."
    default_code = "simulation_error"
