# apps/solver/services.py
from __future__ import annotations

import logging
import time
from dataclasses import replace
from pathlib import Path

import cvxpy as cp
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .domain import (
    FEASIBILITY_TOL,
    INFEASIBLE,
    NUMERIC_FAILURE,
    OPTIMAL,
    UNBOUNDED,
    ConvexProgram,
    Solution,
)

logger = logging.getLogger(__name__)

# scipy linprog status codes
_LINPROG_STATUS = {0: OPTIMAL, 1: NUMERIC_FAILURE, 2: INFEASIBLE, 3: UNBOUNDED, 4: NUMERIC_FAILURE}

_CVXPY_STATUS = {
    cp.OPTIMAL: OPTIMAL,
    cp.OPTIMAL_INACCURATE: OPTIMAL,  # accepted only if the residual check passes
    cp.INFEASIBLE: INFEASIBLE,
    cp.INFEASIBLE_INACCURATE: INFEASIBLE,
    cp.UNBOUNDED: UNBOUNDED,
    cp.UNBOUNDED_INACCURATE: UNBOUNDED,
}

CLARABEL_SETTINGS = {"tol_gap_abs": 1e-9, "tol_gap_rel": 1e-9, "tol_feas": 1e-9, "max_iter": 500}


# ---- Solve ----

def solve(program: ConvexProgram) -> Solution:
    """
    Solve an LP or convex QP. Never raises on solver trouble: the status says
    what happened. An 'optimal' answer whose constraint residual exceeds
    FEASIBILITY_TOL * (1 + |rhs|_inf) is downgraded to numeric_failure.
    """
    t0 = time.perf_counter()
    try:
        if program.is_lp:
            sol = _solve_lp(program)
        else:
            sol = _solve_qp(program)
    except (ValueError, ArithmeticError, cp.error.SolverError) as exc:
        sol = Solution(status=NUMERIC_FAILURE, message=str(exc))
    elapsed = time.perf_counter() - t0

    if sol.status == OPTIMAL:
        resid = program.residual(sol.x)
        if resid > FEASIBILITY_TOL * program.rhs_scale():
            sol = Solution(
                status=NUMERIC_FAILURE,
                x=sol.x,
                max_residual=resid,
                backend=sol.backend,
                message=f"residual {resid:.3e} above tolerance",
            )
        else:
            sol = Solution(
                status=OPTIMAL,
                x=sol.x,
                objective=program.objective(sol.x),
                dual_objective=sol.dual_objective,
                max_residual=resid,
                backend=sol.backend,
                message=sol.message,
            )

    sol = replace(sol, solve_seconds=elapsed)
    if not sol.ok:
        logger.debug("solve not optimal", extra={"status": sol.status, "backend": sol.backend, "detail": sol.message})
    return sol


def _solve_lp(program: ConvexProgram) -> Solution:
    res = linprog(
        c=program.c,
        A_ub=program.A_ub if program.b_ub.size else None,
        b_ub=program.b_ub if program.b_ub.size else None,
        A_eq=program.A_eq if program.b_eq.size else None,
        b_eq=program.b_eq if program.b_eq.size else None,
        bounds=np.column_stack([
            np.where(np.isfinite(program.lb), program.lb, -np.inf),
            np.where(np.isfinite(program.ub), program.ub, np.inf),
        ]),
        method="highs",
    )
    status = _LINPROG_STATUS.get(res.status, NUMERIC_FAILURE)
    if status != OPTIMAL:
        return Solution(status=status, backend="highs", message=res.message)
    return Solution(
        status=OPTIMAL,
        x=np.asarray(res.x, dtype=float),
        dual_objective=_lp_dual_objective(program, res),
        backend="highs",
        message=res.message,
    )


def _lp_dual_objective(program: ConvexProgram, res) -> float | None:
    """Lagrangian dual bound from HiGHS marginals (sensitivities of the optimum to each rhs)."""
    try:
        total = program.offset
        if program.b_eq.size:
            total += float(res.eqlin.marginals @ program.b_eq)
        if program.b_ub.size:
            total += float(res.ineqlin.marginals @ program.b_ub)
        for bound, marg in ((program.lb, res.lower.marginals), (program.ub, res.upper.marginals)):
            finite = np.isfinite(bound)
            total += float(np.asarray(marg)[finite] @ bound[finite])
        return total
    except AttributeError:
        return None


def _solve_qp(program: ConvexProgram) -> Solution:
    n = program.n
    x = cp.Variable(n)
    if program.is_diagonal:
        quad = 0.5 * cp.sum(cp.multiply(program.Q.diagonal(), cp.square(x)))
    else:
        quad = 0.5 * cp.quad_form(x, cp.psd_wrap(program.Q.toarray()))
    objective = cp.Minimize(quad + program.c @ x + program.offset)

    constraints = []
    if program.b_eq.size:
        constraints.append(cp.Constant(program.A_eq) @ x == program.b_eq)
    if program.b_ub.size:
        constraints.append(cp.Constant(program.A_ub) @ x <= program.b_ub)
    lo = np.flatnonzero(np.isfinite(program.lb))
    hi = np.flatnonzero(np.isfinite(program.ub))
    if lo.size:
        constraints.append(x[lo] >= program.lb[lo])
    if hi.size:
        constraints.append(x[hi] <= program.ub[hi])

    prob = cp.Problem(objective, constraints)
    prob.solve(solver=cp.CLARABEL, **CLARABEL_SETTINGS)
    status = _CVXPY_STATUS.get(prob.status, NUMERIC_FAILURE)
    if status != OPTIMAL or x.value is None:
        return Solution(status=status if status != OPTIMAL else NUMERIC_FAILURE, backend="clarabel", message=str(prob.status))
    return Solution(status=OPTIMAL, x=np.asarray(x.value, dtype=float), backend="clarabel", message=str(prob.status))


# ---- Reformulations ----

def l1_epigraph(program: ConvexProgram, coeff, variables) -> ConvexProgram:
    """
    Add sum_i |a_i x_i| over the selected variables to the objective through
    auxiliary t_i with -t_i <= a_i x_i <= t_i. The returned program has the
    t_i appended after the original variables.
    """
    idx = np.arange(program.n)[variables] if isinstance(variables, slice) else np.asarray(variables, dtype=int)
    a = np.broadcast_to(np.asarray(coeff, dtype=float), idx.shape).copy()
    n, k = program.n, idx.size

    pick = sp.csr_matrix((a, (np.arange(k), idx)), shape=(k, n))
    eye = sp.identity(k, format="csr")
    # a_i x_i - t_i <= 0 and -a_i x_i - t_i <= 0
    new_rows = sp.vstack([sp.hstack([pick, -eye]), sp.hstack([-pick, -eye])], format="csr")
    old_rows = sp.hstack([program.A_ub, sp.csr_matrix((program.b_ub.size, k))], format="csr")

    return ConvexProgram.build(
        np.concatenate([program.c, np.ones(k)]),
        Q=sp.block_diag([program.Q, sp.csr_matrix((k, k))], format="csr"),
        A_eq=sp.hstack([program.A_eq, sp.csr_matrix((program.b_eq.size, k))], format="csr"),
        b_eq=program.b_eq,
        A_ub=sp.vstack([old_rows, new_rows], format="csr"),
        b_ub=np.concatenate([program.b_ub, np.zeros(2 * k)]),
        lb=np.concatenate([program.lb, np.zeros(k)]),
        ub=np.concatenate([program.ub, np.full(k, np.inf)]),
        offset=program.offset,
        names=program.names + [f"t_{program.names[i]}" for i in idx],
    )


# ---- Export ----

def _terms(row: sp.csr_matrix, names) -> str:
    coo = row.tocoo()
    parts = []
    for j, v in sorted(zip(coo.col, coo.data)):
        if v == 0:
            continue
        parts.append(f"{'-' if v < 0 else '+'} {abs(v):.12g} {names[j]}")
    return " ".join(parts) if parts else "0 " + names[0]


def dump_lp(program: ConvexProgram, path: str | Path) -> Path:
    """Write the program in CPLEX LP text format."""
    names = program.names
    lines = ["\\ generated by apps.solver.dump_lp", "Minimize", f" obj: {_terms(sp.csr_matrix(program.c), names)}"]
    if not program.is_lp:
        coo = sp.triu(program.Q).tocoo()
        quad = []
        for i, j, v in sorted(zip(coo.row, coo.col, coo.data)):
            coef = v if i == j else 2 * v
            term = f"{names[i]} ^ 2" if i == j else f"{names[i]} * {names[j]}"
            quad.append(f"{'-' if coef < 0 else '+'} {abs(coef):.12g} {term}")
        lines[-1] += " + [ " + " ".join(quad) + " ] / 2"
    if program.offset:
        lines[-1] += f" {'-' if program.offset < 0 else '+'} {abs(program.offset):.12g}"

    lines.append("Subject To")
    for i in range(program.b_eq.size):
        lines.append(f" e{i}: {_terms(program.A_eq[i], names)} = {program.b_eq[i]:.12g}")
    for i in range(program.b_ub.size):
        lines.append(f" u{i}: {_terms(program.A_ub[i], names)} <= {program.b_ub[i]:.12g}")

    lines.append("Bounds")
    for j, name in enumerate(names):
        lo, hi = program.lb[j], program.ub[j]
        lo_s = "-inf" if not np.isfinite(lo) else f"{lo:.12g}"
        hi_s = "+inf" if not np.isfinite(hi) else f"{hi:.12g}"
        lines.append(f" {lo_s} <= {name} <= {hi_s}")
    lines.append("End")

    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p
