# apps/mpc/services.py
from __future__ import annotations

import logging
from typing import Optional

import numpy as np
import scipy.sparse as sp
from django.conf import settings

from apps.core.exceptions import InfeasibleHorizon, RefreshNotDue
from apps.demand.domain import ArrivalBatch, DemandScenario
from apps.demand.services import active_lambda
from apps.dynamics.domain import LtiModel, StateLayout
from apps.dynamics.services import build_lti
from apps.network.domain import CompleteNetwork
from apps.plant.domain import ControlAction, SystemState
from apps.reference.domain import LINEAR, QUADRATIC, EquilibriumReference
from apps.reference.services import solve_reference
from apps.solver.domain import INFEASIBLE, ConvexProgram
from apps.solver.services import l1_epigraph, solve

from .domain import (
    HARD_ZERO,
    SOFT_PENALTY,
    SOFT_RETRY,
    ZERO_ACTION,
    FractionalAction,
    HorizonIndex,
    HorizonSolution,
    MpcConfig,
    StepDiagnostics,
    Weights,
)
from .rounding import project_to_state, round_and_repair, serve_waiting

logger = logging.getLogger(__name__)


# ---- Weights ----

def weights_for(ref: EquilibriumReference) -> Weights:
    return Weights(q=ref.lam.copy(), s=ref.T.copy())


def soft_terminal_weight(ref: EquilibriumReference, cfg: MpcConfig) -> float:
    """Weight on the terminal queues."""
    if cfg.soft_weight is not None:
        return float(cfg.soft_weight)
    top = max(float(ref.lam.max(initial=0.0)), float(ref.T.max(initial=1.0)), 1.0)
    return float(settings.REBALANCE_SOFT_TERMINAL_FACTOR) * top


def stock_terminal_weight(ref: EquilibriumReference) -> float:
    """Weight on the terminal zone stock, in the units of the R stage weights."""
    return float(settings.REBALANCE_SOFT_STOCK_FACTOR) * float(ref.T.mean()) if ref.T.size else 0.0


def zone_stock(model: LtiModel, x) -> np.ndarray:
    """Vehicles idle at or driving towards each zone: P + E_in F."""
    _, P, F = model.layout.split_state(x)
    return P + model.E_in @ F


# ---- Horizon program ----

def _selectors(model: LtiModel):
    lay = model.layout
    m, n = lay.m, lay.n
    I_m = sp.identity(m, format="csr")
    S_V = sp.hstack([I_m, sp.csr_matrix((m, m))], format="csr")
    S_W = sp.hstack([I_m, sp.csr_matrix((m, n + m))], format="csr")
    S_P = sp.hstack([sp.csr_matrix((n, m)), sp.identity(n), sp.csr_matrix((n, m))], format="csr")
    E_out = sp.csr_matrix(model.E_out)
    out_v = sp.hstack([E_out, E_out], format="csr")
    return S_V, S_W, S_P, out_v


def build_horizon_program(
    model: LtiModel,
    ref: EquilibriumReference,
    x_now,
    cfg: MpcConfig,
    *,
    d_now=None,
    terminal_mode: Optional[str] = None,
) -> tuple[ConvexProgram, HorizonIndex]:
    """
    Deviation-coordinate program around (x_bar, v_bar) over N steps:

      dx_{i+1} = A dx_i + B dv_i + L (d_i - lambda),  d_0 = d_now, d_i = lambda after
      V_0 <= W(t) + d_now,  V_i <= W_i + lambda (i >= 1)
      E_out (V_i + R_i) <= P_i
      x_bar + dx_i >= 0,  v_bar + dv_i >= 0

    Cost per cfg.cost_kind on dW (weights lambda) and dR (weights T), stages
    0 .. N-1, the dx_0 term entering as a constant.

    Terminal, hard: dx_N = 0. Soft: rho_W |dW_N|^2 + rho_S |dP_N + E_in dF_N|^2.
    The soft form leaves out how each zone's stock splits between idle and
    in-transit vehicles; under the lag model F only decays towards F_bar and
    cannot be placed within N steps. The stock deviation is carried by n
    extra variables after the horizon block.
    """
    lay = model.layout
    m, n, nx, nu = lay.m, lay.n, lay.nx, lay.nu
    N = int(cfg.horizon)
    idx = HorizonIndex(N=N, nu=nu, nx=nx)
    terminal_mode = terminal_mode or cfg.terminal_mode

    x_bar, v_bar = ref.x_bar(), ref.v_bar()
    lam = ref.lam
    x_now = lay.check(x_now, nx, "state")
    d_now = lam if d_now is None else lay.check(d_now, m, "disturbance")
    dx0 = x_now - x_bar
    W_now, P_now, _ = lay.split_state(x_now)

    # dynamics
    A, B, L = sp.csr_matrix(model.A), sp.csr_matrix(model.B), sp.csr_matrix(model.L)
    dyn_v = -sp.kron(sp.identity(N), B)
    dyn_x = sp.identity(N * nx) - sp.kron(sp.eye(N, k=-1), A)
    A_eq = sp.hstack([dyn_v, dyn_x], format="csr")
    b_eq = np.zeros(N * nx)
    b_eq[:nx] = model.A @ dx0 + L @ (d_now - lam)

    if terminal_mode == HARD_ZERO:
        pick_N = sp.hstack([sp.csr_matrix((nx, N * nu + (N - 1) * nx)), sp.identity(nx)], format="csr")
        A_eq = sp.vstack([A_eq, pick_N], format="csr")
        b_eq = np.concatenate([b_eq, np.zeros(nx)])

    # service and availability, one block per stage
    S_V, S_W, S_P, out_v = _selectors(model)
    G_v = sp.vstack([S_V, out_v], format="csr")
    G_x = sp.vstack([S_W, S_P], format="csr")
    A_ub = sp.hstack([
        sp.kron(sp.identity(N), G_v),
        sp.kron(sp.eye(N, k=-1), -G_x),
    ], format="csr")
    outflow_bar = model.E_out @ (ref.V + ref.R)
    b_ub = np.tile(np.concatenate([np.zeros(m), ref.P - outflow_bar]), N)
    b_ub[:m] = W_now + d_now - lam
    b_ub[m:m + n] = P_now - outflow_bar

    lb = np.concatenate([np.tile(-v_bar, N), np.tile(-x_bar, N)])
    names = [f"dv{i}_{j}" for i in range(N) for j in range(nu)] + [f"dx{i}_{j}" for i in range(1, N + 1) for j in range(nx)]

    size = idx.size
    if terminal_mode == SOFT_PENALTY:
        # s = dP_N + E_in dF_N
        to_stock = sp.hstack([
            sp.csr_matrix((n, N * nu + (N - 1) * nx + m)),
            sp.identity(n),
            sp.csr_matrix(model.E_in),
            -sp.identity(n),
        ], format="csr")
        A_eq = sp.vstack([sp.hstack([A_eq, sp.csr_matrix((A_eq.shape[0], n))]), to_stock], format="csr")
        b_eq = np.concatenate([b_eq, np.zeros(n)])
        A_ub = sp.hstack([A_ub, sp.csr_matrix((A_ub.shape[0], n))], format="csr")
        lb = np.concatenate([lb, np.full(n, -np.inf)])
        names += [f"stock_{z}" for z in range(n)]
        size += n

    # cost
    w = weights_for(ref)
    R_idx = np.concatenate([np.arange(idx.dv(i).start, idx.dv(i).stop)[lay.R] for i in range(N)])
    W_idx = np.concatenate(
        [np.arange(idx.dx(i).start, idx.dx(i).stop)[lay.W] for i in range(1, N)]
    ) if N > 1 else np.zeros(0, dtype=int)
    q_stage = np.tile(w.q, N - 1)
    r_stage = np.tile(w.s, N)

    qdiag = np.zeros(size)
    if terminal_mode == SOFT_PENALTY:
        qdiag[np.arange(idx.dx(N).start, idx.dx(N).stop)[lay.W]] = 2.0 * soft_terminal_weight(ref, cfg)
        qdiag[idx.size:] = 2.0 * stock_terminal_weight(ref)

    if cfg.cost_kind == QUADRATIC:
        qdiag[R_idx] += 2.0 * r_stage
        qdiag[W_idx] += 2.0 * q_stage
        offset = float(w.q @ dx0[lay.W] ** 2)
    else:
        offset = float(w.q @ np.abs(dx0[lay.W]))

    program = ConvexProgram.build(
        np.zeros(size),
        Q=sp.diags(qdiag, format="csr") if qdiag.any() else None,
        A_eq=A_eq,
        b_eq=b_eq,
        A_ub=A_ub,
        b_ub=b_ub,
        lb=lb,
        offset=offset,
        names=names,
    )
    if cfg.cost_kind == LINEAR:
        coeff = np.concatenate([r_stage, q_stage])
        cols = np.concatenate([R_idx, W_idx])
        keep = coeff > 0
        program = l1_epigraph(program, coeff[keep], cols[keep])
    return program, idx


def stage_cost(ref: EquilibriumReference, dx, dv, kind: str) -> float:
    """l(dx, dv) on the W block of dx and the R block of dv."""
    lay = StateLayout(ref.n)
    dW = np.asarray(dx)[lay.W]
    dR = np.asarray(dv)[lay.R]
    if kind == QUADRATIC:
        return float(ref.lam @ dW**2 + ref.T @ dR**2)
    return float(ref.lam @ np.abs(dW) + ref.T @ np.abs(dR))


def trajectory_cost(ref: EquilibriumReference, x_now, sol: HorizonSolution, kind: str) -> float:
    """Stage costs 0 .. N-1 of a solved trajectory under either cost kind (no terminal term)."""
    dx0 = np.asarray(x_now, dtype=float) - ref.x_bar()
    states = [dx0] + [sol.dx[i] for i in range(sol.dx.shape[0] - 1)]
    return float(sum(stage_cost(ref, dx, dv, kind) for dx, dv in zip(states, sol.dv)))


def solve_horizon(
    model: LtiModel,
    ref: EquilibriumReference,
    x_now,
    cfg: MpcConfig,
    *,
    d_now=None,
    terminal_mode: Optional[str] = None,
) -> HorizonSolution:
    terminal_mode = terminal_mode or cfg.terminal_mode
    program, idx = build_horizon_program(model, ref, x_now, cfg, d_now=d_now, terminal_mode=terminal_mode)
    sol = solve(program)
    if sol.status == INFEASIBLE and terminal_mode == HARD_ZERO:
        raise InfeasibleHorizon(f"Hard terminal unreachable within {idx.N} steps.")
    if not sol.ok:
        return HorizonSolution(status=sol.status, terminal_mode=terminal_mode, solve_seconds=sol.solve_seconds)

    z = sol.x[: idx.size]
    dv = z[: idx.N * idx.nu].reshape(idx.N, idx.nu)
    dx = z[idx.N * idx.nu:].reshape(idx.N, idx.nx)
    return HorizonSolution(
        status=sol.status,
        terminal_mode=terminal_mode,
        objective=sol.objective,
        dv=dv,
        dx=dx,
        terminal_residual=float(np.abs(dx[-1]).max()),
        solve_seconds=sol.solve_seconds,
    )


# ---- One control step ----

def solve_mpc_step(
    model: LtiModel,
    ref: EquilibriumReference,
    x_now,
    cfg: MpcConfig,
    *,
    d_now=None,
    step: int = 0,
) -> tuple[FractionalAction, StepDiagnostics]:
    """
    First action v_bar + dv_0 of the horizon solution, projected onto the true
    state (V <= W + d_now, availability per zone). Hard terminal first, soft
    on InfeasibleHorizon; any other failure yields the zero action.

    With cfg.serve_first the action boards every waiting customer the zone's
    idle vehicles can carry, and the planned rebalancing takes what is left.
    """
    lay = model.layout
    x_now = lay.check(x_now, lay.nx, "state")
    d = ref.lam if d_now is None else np.asarray(d_now, dtype=float)
    fallback = ""
    try:
        result = solve_horizon(model, ref, x_now, cfg, d_now=d)
    except InfeasibleHorizon:
        result = None
    if result is None or (result.dv is None and result.terminal_mode == HARD_ZERO):
        fallback = SOFT_RETRY
        logger.debug(
            "hard terminal failed, retrying soft",
            extra={"step": step, "controller": cfg.variant, "status": result.status if result else INFEASIBLE},
        )
        result = solve_horizon(model, ref, x_now, cfg, d_now=d, terminal_mode=SOFT_PENALTY)

    diag = StepDiagnostics(
        step=step,
        controller=cfg.variant,
        status=result.status,
        objective=result.objective,
        terminal_mode=result.terminal_mode,
        terminal_residual=result.terminal_residual,
        solve_seconds=result.solve_seconds,
        fallback=fallback,
    )
    if result.dv is None:
        diag.fallback = ZERO_ACTION
        logger.warning(
            "mpc solve failed, holding fleet",
            extra={"step": step, "controller": cfg.variant, "status": result.status},
        )
        return FractionalAction.zero(lay.m), diag

    V, R = lay.split_input(ref.v_bar() + result.dv0)
    W, P, F = lay.split_state(x_now)
    true_state = SystemState(W=W + d, P=P, F=F)
    if cfg.serve_first:
        return serve_waiting(R, true_state), diag
    return project_to_state(V, R, true_state), diag


# ---- Reference schedule ----

def refresh_reference(
    scenario: DemandScenario,
    step: int,
    net: CompleteNetwork,
    cfg: MpcConfig,
    *,
    refresh_steps: int,
    fleet_size: Optional[float] = None,
) -> EquilibriumReference:
    if refresh_steps < 1 or step % refresh_steps:
        raise RefreshNotDue(f"refresh every {refresh_steps} steps", step=step)
    lam = active_lambda(scenario, step)
    ref = solve_reference(net, lam, cfg.reference_kind, fleet_size=fleet_size)
    logger.info("reference refreshed", extra={"step": step, "cost": cfg.reference_kind, "min_fleet": ref.min_fleet})
    return ref


class MpcController:
    """
    Receding-horizon controller for one run: owns the lag model, the current
    reference, and the rounding generator.
    """

    def __init__(
        self,
        net: CompleteNetwork,
        scenario: DemandScenario,
        cfg: MpcConfig,
        *,
        fleet_size: Optional[float] = None,
        refresh_steps: Optional[int] = None,
    ):
        self.net = net
        self.scenario = scenario
        self.cfg = cfg
        self.fleet_size = fleet_size
        self.refresh_steps = int(refresh_steps or scenario.duration or 1)
        self.model = build_lti(net)
        self.rng = np.random.default_rng(cfg.rounding_seed)
        self.reference: Optional[EquilibriumReference] = None
        self.diagnostics: list[dict] = []
        self.refreshes: list[dict] = []

    @property
    def name(self) -> str:
        return self.cfg.variant

    def refresh(self, step: int) -> EquilibriumReference:
        # first call may land off the schedule; align it to the last boundary
        boundary = step - step % self.refresh_steps
        self.reference = refresh_reference(
            self.scenario, boundary, self.net, self.cfg,
            refresh_steps=self.refresh_steps, fleet_size=self.fleet_size,
        )
        self.refreshes.append({
            "step": int(step),
            "cost": self.reference.cost,
            "min_fleet": self.reference.min_fleet,
            "rebalance_total": float(self.reference.R.sum()),
        })
        return self.reference

    def act(self, step: int, state: SystemState, arrivals: ArrivalBatch) -> ControlAction:
        if self.reference is None or step % self.refresh_steps == 0:
            self.refresh(step)
        d = np.asarray(arrivals.counts, dtype=float)
        frac, diag = solve_mpc_step(self.model, self.reference, state.as_vector(), self.cfg, d_now=d, step=step)
        post = SystemState(W=state.W + arrivals.counts, P=state.P, F=state.F)
        action, diag.repaired = round_and_repair(frac, post, self.rng)
        self.diagnostics.append(diag.as_dict())
        return action
