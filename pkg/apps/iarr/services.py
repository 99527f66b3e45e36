# apps/iarr/services.py
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
from django.conf import settings

from apps.demand.domain import ArrivalBatch, DemandScenario
from apps.demand.services import active_lambda
from apps.mpc.domain import FEASIBLE_POINT, IARR, StepDiagnostics
from apps.mpc.rounding import project_to_state, round_and_repair
from apps.network.domain import CompleteNetwork
from apps.plant.domain import ControlAction, SystemState
from apps.solver.domain import OPTIMAL, ConvexProgram
from apps.solver.services import solve

from .domain import IarrAction

logger = logging.getLogger(__name__)

# small reward per served customer so the availability row counts them
SERVICE_TIE_BREAK = 1e-3


def anticipated_idle(net: CompleteNetwork, state: SystemState) -> np.ndarray:
    """P + E_in T^-1 F: idle vehicles plus the lag model's expected arrivals."""
    return np.asarray(state.P, dtype=float) + net.E_in @ (np.asarray(state.F, dtype=float) / net.T)


def excess_vehicles(net: CompleteNetwork, state: SystemState) -> tuple[np.ndarray, np.ndarray]:
    """Per-zone excess (anticipated idle minus outstanding requests) and the uniform desired level."""
    v_e = anticipated_idle(net, state) - net.E_out @ np.asarray(state.W, dtype=float)
    v_d = np.full(net.n, max(0.0, np.floor(v_e.sum() / net.n)))
    return v_e, v_d


def shortage_weight(net: CompleteNetwork) -> float:
    return float(settings.REBALANCE_IARR_SHORTAGE_WEIGHT) * float(net.T.max())


def iarr_program(net: CompleteNetwork, state: SystemState, lam) -> ConvexProgram:
    """
    Variables (R, U, V', s):

      min   T'R - lambda'U - eps 1'V' + w 1's
      s.t.  V' - U <= 0
            E_out (V' + R) <= P + E_in T^-1 F
            v_e + E R + s >= v_d
            R >= 0,  lambda <= U <= max(W, lambda),  0 <= V' <= W,  s >= 0
    """
    m, n = net.m, net.n
    lam = np.asarray(lam, dtype=float)
    W = np.asarray(state.W, dtype=float)
    I_m = sp.identity(m, format="csr")
    Z_mn = sp.csr_matrix((m, n))
    E_out = sp.csr_matrix(net.E_out)
    E = sp.csr_matrix(net.E)
    v_e, v_d = excess_vehicles(net, state)

    A_ub = sp.vstack([
        sp.hstack([sp.csr_matrix((m, m)), -I_m, I_m, Z_mn]),
        sp.hstack([E_out, sp.csr_matrix((n, m)), E_out, sp.csr_matrix((n, n))]),
        sp.hstack([-E, sp.csr_matrix((n, 2 * m)), -sp.identity(n)]),
    ], format="csr")
    b_ub = np.concatenate([np.zeros(m), anticipated_idle(net, state), v_e - v_d])

    c = np.concatenate([net.T, -lam, np.full(m, -SERVICE_TIE_BREAK), np.full(n, shortage_weight(net))])
    lb = np.concatenate([np.zeros(m), lam, np.zeros(m), np.zeros(n)])
    ub = np.concatenate([np.full(m, np.inf), np.maximum(W, lam), W, np.full(n, np.inf)])
    names = (
        [f"R_{r}_{s}" for r, s in net.links]
        + [f"U_{r}_{s}" for r, s in net.links]
        + [f"Vlp_{r}_{s}" for r, s in net.links]
        + [f"short_{z}" for z in net.zones]
    )
    return ConvexProgram.build(c, A_ub=A_ub, b_ub=b_ub, lb=lb, ub=ub, names=names)


def iarr_feasible_fallback(net: CompleteNetwork, state: SystemState, lam) -> IarrAction:
    """R = 0, U = lambda, V' = 0; always satisfies the LP's constraints."""
    lam = np.asarray(lam, dtype=float)
    W = np.asarray(state.W, dtype=float)
    v_e, v_d = excess_vehicles(net, state)
    return IarrAction(
        R=np.zeros(net.m),
        U=lam.copy(),
        V=np.minimum(W, lam),
        V_lp=np.zeros(net.m),
        shortage=np.maximum(v_d - v_e, 0.0),
        status="fallback",
    )


def iarr_constraint_residual(net: CompleteNetwork, state: SystemState, lam, action: IarrAction) -> float:
    lam = np.asarray(lam, dtype=float)
    W = np.asarray(state.W, dtype=float)
    v_e, v_d = excess_vehicles(net, state)
    shortage = np.zeros(net.n) if action.shortage is None else action.shortage
    parts = [
        np.maximum(lam - action.U, 0),
        np.maximum(-action.R, 0),
        np.maximum(action.V_lp - W, 0),
        np.maximum(action.V_lp - action.U, 0),
        np.maximum(-action.V_lp, 0),
        np.maximum(net.E_out @ (action.V_lp + action.R) - anticipated_idle(net, state), 0),
        np.maximum(v_d - v_e - net.E @ action.R - shortage, 0),
    ]
    return float(max(p.max(initial=0.0) for p in parts))


def solve_iarr_step(net: CompleteNetwork, state: SystemState, lam) -> IarrAction:
    lam = np.asarray(lam, dtype=float)
    sol = solve(iarr_program(net, state, lam))
    if not sol.ok:
        # the fallback point is feasible, so this is numerical trouble
        logger.warning("iarr solve failed, using fallback", extra={"status": sol.status, "detail": sol.message})
        return iarr_feasible_fallback(net, state, lam)

    m = net.m
    R = np.maximum(sol.x[:m], 0.0)
    U = sol.x[m:2 * m]
    V_lp = sol.x[2 * m:3 * m]
    W = np.asarray(state.W, dtype=float)
    return IarrAction(
        R=R,
        U=U,
        V=np.minimum(W, U),
        V_lp=V_lp,
        shortage=sol.x[3 * m:],
        status=sol.status,
        objective=sol.objective,
        solve_seconds=sol.solve_seconds,
    )


class IarrController:
    """Myopic per-step LP; same act() interface as the MPC controller."""

    name = IARR

    def __init__(self, net: CompleteNetwork, scenario: DemandScenario, *, rounding_seed: int = 0):
        self.net = net
        self.scenario = scenario
        self.rng = np.random.default_rng(rounding_seed)
        self.diagnostics: list[dict] = []
        self.lag_overdraws = 0

    def act(self, step: int, state: SystemState, arrivals: ArrivalBatch) -> ControlAction:
        post = SystemState(W=state.W + arrivals.counts, P=state.P, F=state.F)
        lam = active_lambda(self.scenario, step)
        result = solve_iarr_step(self.net, post, lam)

        # the lag term may promise vehicles the plant does not have yet
        over = self.net.E_out @ (result.V + result.R) > np.asarray(post.P) + 1e-9
        if over.any():
            self.lag_overdraws += 1
        frac = project_to_state(result.V, result.R, post)
        action, repaired = round_and_repair(frac, post, self.rng)
        if repaired or over.any():
            logger.debug("iarr action repaired", extra={"step": step, "removed": repaired, "zones_over": int(over.sum())})

        diag = StepDiagnostics(
            step=step,
            controller=IARR,
            status=result.status,
            objective=result.objective,
            solve_seconds=result.solve_seconds,
            fallback="" if result.status == OPTIMAL else FEASIBLE_POINT,
            repaired=repaired,
            extra={"zones_over": int(over.sum())},
        )
        self.diagnostics.append(diag.as_dict())
        return action
