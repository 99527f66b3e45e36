# apps/reference/services.py
from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from apps.core.exceptions import ConfigError, NotBalanced, ReferenceInfeasible, SolverFailure
from apps.network.domain import CompleteNetwork
from apps.solver.domain import BALANCE_TOL, INFEASIBLE, ConvexProgram
from apps.solver.services import solve

from .domain import COST_CHOICES, LINEAR, QUADRATIC, EquilibriumReference

logger = logging.getLogger(__name__)


def _check_lambda(net: CompleteNetwork, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (net.m,):
        raise ConfigError(f"lambda needs {net.m} entries, got {lam.shape}.")
    if not np.isfinite(lam).all() or (lam < 0).any():
        raise ConfigError("lambda must be finite and non-negative.")
    return lam


def rebalance_program(net: CompleteNetwork, lam, cost: str = LINEAR) -> ConvexProgram:
    """
    min J(R)  s.t.  E R = -E lambda,  R >= 0
    linear:    J = T'R             (= |diag(T) R|_1 on R >= 0)
    quadratic: J = R' diag(T) R    (Q = 2 diag(T) in the 1/2 x'Qx convention)
    """
    lam = _check_lambda(net, lam)
    T = net.T.astype(float)
    common = dict(A_eq=net.E, b_eq=-(net.E @ lam), lb=0.0, names=[f"R_{r}_{s}" for r, s in net.links])
    if cost == LINEAR:
        return ConvexProgram.build(T, **common)
    if cost == QUADRATIC:
        return ConvexProgram.build(np.zeros(net.m), Q=np.diag(2.0 * T), **common)
    raise ConfigError(f"Unknown reference cost {cost!r}; expected one of {[c for c, _ in COST_CHOICES]}.")


def _polish_quadratic(net: CompleteNetwork, lam: np.ndarray, R: np.ndarray) -> np.ndarray:
    """
    Re-solve the equality-constrained QP on the support of an interior-point
    answer so the balance holds to machine precision. Keeps the original if
    the polished point leaves the orthant.
    """
    free = R > 1e-7
    if not free.any():
        return np.zeros_like(R)
    T = net.T.astype(float)
    E_f = net.E[:, free]
    b = -(net.E @ lam)
    # stationarity 2 T_f R_f = E_f' mu with E_f R_f = b
    K = E_f @ np.diag(1.0 / (2.0 * T[free])) @ E_f.T
    mu = np.linalg.lstsq(K, b, rcond=None)[0]
    polished = np.zeros_like(R)
    polished[free] = (E_f.T @ mu) / (2.0 * T[free])
    if (polished < -1e-12).any() or np.abs(net.E @ (polished + lam)).max() > np.abs(net.E @ (R + lam)).max():
        return R
    return np.maximum(polished, 0.0)


def solve_reference(
    net: CompleteNetwork,
    lam,
    cost: str = LINEAR,
    *,
    fleet_size: Optional[float] = None,
) -> EquilibriumReference:
    lam = _check_lambda(net, lam)
    if not lam.any():
        R = np.zeros(net.m)
        objective = 0.0
    else:
        sol = solve(rebalance_program(net, lam, cost))
        if sol.status == INFEASIBLE:
            # cannot happen on a complete digraph; kept as a guard on the inputs
            raise ReferenceInfeasible(f"Rebalancing program infeasible ({sol.message}).")
        if not sol.ok:
            raise SolverFailure(f"Reference {cost} solve ended with {sol.status}: {sol.message}")
        R = np.maximum(sol.x, 0.0)
        if cost == QUADRATIC:
            R = _polish_quadratic(net, lam, R)
        objective = float(net.T @ R) if cost == LINEAR else float(R @ (net.T * R))

    ref = equilibrium_from_rebalance(net, lam, R, fleet_size=fleet_size, cost=cost, objective=objective)
    logger.info(
        "reference solved",
        extra={"cost": cost, "min_fleet": ref.min_fleet, "objective": objective, "rebalance_total": float(R.sum())},
    )
    return ref


def balance_residual(net: CompleteNetwork, lam, R) -> float:
    return float(np.abs(net.E @ (np.asarray(R, dtype=float) + np.asarray(lam, dtype=float))).max())


def equilibrium_from_rebalance(
    net: CompleteNetwork,
    lam,
    R,
    *,
    fleet_size: Optional[float] = None,
    cost: str = LINEAR,
    objective: Optional[float] = None,
) -> EquilibriumReference:
    lam = _check_lambda(net, lam)
    R = np.asarray(R, dtype=float)
    if R.shape != (net.m,):
        raise ConfigError(f"R needs {net.m} entries.")
    if (R < 0).any():
        raise NotBalanced("Rebalancing flow must be non-negative.")
    resid = balance_residual(net, lam, R)
    if resid > BALANCE_TOL:
        raise NotBalanced(f"|E(R + lambda)|_inf = {resid:.3e} exceeds {BALANCE_TOL:g}.")

    T = net.T.astype(float)
    F = T * (lam + R)
    min_fleet = float(F.sum())
    P = distribute_slack(net.n, min_fleet, fleet_size)
    if objective is None:
        objective = float(T @ R) if cost == LINEAR else float(R @ (T * R))
    return EquilibriumReference(
        W=np.zeros(net.m), P=P, F=F, V=lam.copy(), R=R.copy(), lam=lam.copy(), T=T, cost=cost, objective=objective
    )


def distribute_slack(n: int, min_fleet: float, fleet_size: Optional[float]) -> np.ndarray:
    """Idle vehicles at equilibrium: the slack M - M_min split evenly across zones."""
    if fleet_size is None:
        return np.zeros(n)
    slack = fleet_size - min_fleet
    if slack < 0:
        logger.warning(
            "fleet below equilibrium minimum",
            extra={"fleet_size": fleet_size, "min_fleet": min_fleet},
        )
        return np.zeros(n)
    return np.full(n, slack / n)


def min_fleet_size(ref: EquilibriumReference) -> float:
    return float(ref.T @ (ref.lam + ref.R))


def with_fleet(ref: EquilibriumReference, fleet_size: Optional[float]) -> EquilibriumReference:
    return EquilibriumReference(
        W=ref.W, P=distribute_slack(ref.n, ref.min_fleet, fleet_size), F=ref.F, V=ref.V, R=ref.R,
        lam=ref.lam, T=ref.T, cost=ref.cost, objective=ref.objective,
    )


# ---- Serialization ----

def reference_to_dict(ref: EquilibriumReference, net: Optional[CompleteNetwork] = None) -> dict:
    out = {
        "cost": ref.cost,
        "objective": ref.objective,
        "min_fleet": ref.min_fleet,
        "W": ref.W.tolist(),
        "P": ref.P.tolist(),
        "F": ref.F.tolist(),
        "V": ref.V.tolist(),
        "R": ref.R.tolist(),
        "lambda": ref.lam.tolist(),
        "T": ref.T.tolist(),
    }
    if net is not None:
        out["links"] = [list(l) for l in net.links]
    return out


def reference_from_dict(data: dict) -> EquilibriumReference:
    arr = {k: np.asarray(data[k], dtype=float) for k in ("W", "P", "F", "V", "R", "lambda", "T")}
    return EquilibriumReference(
        W=arr["W"], P=arr["P"], F=arr["F"], V=arr["V"], R=arr["R"], lam=arr["lambda"], T=arr["T"],
        cost=data.get("cost", LINEAR), objective=float(data.get("objective", 0.0)),
    )
