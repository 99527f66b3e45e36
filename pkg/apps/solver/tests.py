import itertools

import numpy as np
import pytest

from apps.solver.domain import INFEASIBLE, OPTIMAL, UNBOUNDED, ConvexProgram
from apps.solver.services import dump_lp, l1_epigraph, solve


def _vertex_optimum(c, A, b):
    """Brute force: every basic point of {Ax <= b}, keep the feasible minimum."""
    n = len(c)
    best = np.inf
    for rows in itertools.combinations(range(len(b)), n):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, b[list(rows)])
        if (A @ x <= b + 1e-9).all():
            best = min(best, float(c @ x))
    return best


def test_lower_bound_lp():
    sol = solve(ConvexProgram.build([1.0], lb=[3.0]))
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(3.0)
    assert sol.objective == pytest.approx(3.0)


def test_unconstrained_least_squares():
    c = np.array([1.5, -2.0, 0.25])
    # |x - c|^2 = 1/2 x'(2I)x - 2c'x + c'c
    prog = ConvexProgram.build(-2 * c, Q=2 * np.eye(3), offset=float(c @ c))
    sol = solve(prog)
    assert sol.status == OPTIMAL
    np.testing.assert_allclose(sol.x, c, atol=1e-6)
    assert sol.objective == pytest.approx(0.0, abs=1e-8)


def test_dense_qp_path():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    prog = ConvexProgram.build([-1.0, -1.0], Q=Q, A_eq=[[1.0, 1.0]], b_eq=[1.0])
    sol = solve(prog)
    assert sol.status == OPTIMAL
    # stationarity on the line x0 + x1 = 1: grad components equal
    g = Q @ sol.x - 1.0
    assert g[0] == pytest.approx(g[1], abs=1e-6)
    assert sol.x.sum() == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("seed", range(8))
def test_random_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4))
    A = rng.normal(size=(4, n))
    b = rng.uniform(1, 4, size=4)
    c = rng.normal(size=n)
    sol = solve(ConvexProgram.build(c, A_ub=A, b_ub=b, lb=0.0, ub=5.0))
    assert sol.status == OPTIMAL

    full_A = np.vstack([A, -np.eye(n), np.eye(n)])
    full_b = np.concatenate([b, np.zeros(n), np.full(n, 5.0)])
    assert sol.objective == pytest.approx(_vertex_optimum(c, full_A, full_b), abs=1e-6)
    assert sol.dual_objective == pytest.approx(sol.objective, abs=1e-6)


def _rows_through(rng, x0, n_eq, n_ub, n):
    """Random equality rows tight at x0 and inequality rows with slack at x0."""
    A_eq = rng.normal(size=(n_eq, n))
    A_ub = rng.normal(size=(n_ub, n))
    return A_eq, A_eq @ x0, A_ub, A_ub @ x0 + rng.uniform(0.1, 1.0, size=n_ub)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("shape", ["box", "orthant", "free"])
def test_lp_duality_gap_closes(seed, shape):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(3, 7))
    if shape == "free":
        x0 = rng.uniform(-1.0, 1.0, size=n)
    else:
        x0 = rng.uniform(0.0, 2.0, size=n)
    A_eq, b_eq, A_ub, b_ub = _rows_through(rng, x0, 2, 3, n)
    c = rng.uniform(0.1, 1.0, size=n) if shape == "orthant" else rng.normal(size=n)
    kwargs = {"lb": 0.0, "ub": 3.0} if shape == "box" else {"lb": 0.0} if shape == "orthant" else {}
    if shape == "free":
        # |x_j| <= 5 as rows, not bounds
        A_ub = np.vstack([A_ub, np.eye(n), -np.eye(n)])
        b_ub = np.concatenate([b_ub, np.full(2 * n, 5.0)])

    sol = solve(ConvexProgram.build(c, A_eq=A_eq, b_eq=b_eq, A_ub=A_ub, b_ub=b_ub, offset=1.5, **kwargs))
    assert sol.status == OPTIMAL
    assert sol.dual_objective is not None
    assert abs(sol.objective - sol.dual_objective) <= 1e-6 * (1.0 + abs(sol.objective))


def test_adding_constraint_never_improves():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(6, 4))
    b = rng.uniform(1, 3, size=6)
    c = rng.normal(size=4)
    values = []
    for k in range(1, 7):
        sol = solve(ConvexProgram.build(c, A_ub=A[:k], b_ub=b[:k], lb=-2.0, ub=2.0))
        assert sol.status == OPTIMAL
        values.append(sol.objective)
    assert all(later >= earlier - 1e-9 for earlier, later in zip(values, values[1:]))


def test_infeasible_lp():
    sol = solve(ConvexProgram.build([1.0], lb=[2.0], A_ub=[[1.0]], b_ub=[1.0]))
    assert sol.status == INFEASIBLE
    assert sol.x is None


def test_unbounded_qp():
    # flat direction in x1 with a decreasing linear term
    prog = ConvexProgram.build([0.0, -1.0], Q=np.diag([1.0, 0.0]), lb=[-np.inf, 0.0])
    assert solve(prog).status == UNBOUNDED


def test_infeasible_qp_does_not_raise():
    prog = ConvexProgram.build([0.0, 0.0], Q=np.eye(2), A_eq=[[1.0, 1.0], [1.0, 1.0]], b_eq=[1.0, 2.0])
    assert solve(prog).status == INFEASIBLE


def test_l1_epigraph_abs_value():
    prog = l1_epigraph(ConvexProgram.build([0.0], lb=[2.0]), [1.0], slice(0, 1))
    sol = solve(prog)
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(2.0)
    assert sol.objective == pytest.approx(2.0)


def test_l1_epigraph_zero_coeff():
    prog = l1_epigraph(ConvexProgram.build([0.0, 0.0], lb=[-3.0, 1.0], ub=[3.0, 4.0]), 0.0, [0, 1])
    sol = solve(prog)
    assert sol.objective == pytest.approx(0.0, abs=1e-9)


def test_l1_epigraph_weighted():
    # min 2|x0| + 3|x1|  s.t. x0 + x1 = 1  -> all weight on x0
    base = ConvexProgram.build([0.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[1.0])
    sol = solve(l1_epigraph(base, [2.0, 3.0], slice(0, 2)))
    assert sol.objective == pytest.approx(2.0)
    assert sol.x[:2] == pytest.approx([1.0, 0.0], abs=1e-9)


def test_non_psd_rejected():
    with pytest.raises(ValueError):
        ConvexProgram.build([0.0, 0.0], Q=[[1.0, 0.0], [0.0, -1.0]])


def test_dimension_checks():
    with pytest.raises(ValueError):
        ConvexProgram.build([0.0, 0.0], A_eq=[[1.0, 1.0, 1.0]], b_eq=[1.0])


def test_solve_is_deterministic():
    rng = np.random.default_rng(5)
    prog = ConvexProgram.build(rng.normal(size=5), Q=np.diag(rng.uniform(1, 2, 5)), lb=-1.0, ub=1.0)
    a, b = solve(prog), solve(prog)
    np.testing.assert_array_equal(a.x, b.x)


def test_dump_lp(tmp_path):
    prog = ConvexProgram.build(
        [1.0, -2.0], Q=np.diag([2.0, 0.0]), A_eq=[[1.0, 1.0]], b_eq=[3.0], A_ub=[[1.0, -1.0]], b_ub=[1.0], lb=0.0,
        names=["a", "b"],
    )
    text = dump_lp(prog, tmp_path / "p.lp").read_text()
    assert text.splitlines()[1] == "Minimize"
    assert "[ + 2 a ^ 2 ] / 2" in text
    assert " e0: + 1 a + 1 b = 3" in text
    assert " u0: + 1 a - 1 b <= 1" in text
    assert " 0 <= b <= +inf" in text
    assert text.rstrip().endswith("End")
