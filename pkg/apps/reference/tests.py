import itertools
import json
from io import StringIO
from pathlib import Path

import numpy as np
import pytest
from django.conf import settings
from django.core.management import call_command

from apps.core.exceptions import NotBalanced
from apps.demand.services import balanced_rates
from apps.dynamics.services import build_lti, step_approx
from apps.network.domain import CompleteNetwork
from apps.reference.domain import LINEAR, QUADRATIC
from apps.reference.services import (
    equilibrium_from_rebalance,
    min_fleet_size,
    reference_from_dict,
    reference_to_dict,
    solve_reference,
)

SAMPLES = Path(settings.BASE_DIR) / "samples"


def _net(n, T):
    return CompleteNetwork.build(tuple(range(1, n + 1)), T)


def _lp_vertex_optimum(net, lam):
    """Enumerate basic feasible points of {E R = -E lam, R >= 0} (one redundant row dropped)."""
    A = net.E[:-1]
    b = -(net.E @ lam)[:-1]
    rank = A.shape[0]
    best = np.inf
    for cols in itertools.combinations(range(net.m), rank):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        R = np.zeros(net.m)
        R[list(cols)] = np.linalg.solve(B, b)
        if (R >= -1e-12).all() and np.abs(net.E @ (R + lam)).max() < 1e-9:
            best = min(best, float(net.T @ R))
    return best


def _qp_dual_ascent(net, lam, iters=200_000):
    """Projected-gradient ascent on the dual of min R'diag(T)R, E R = b, R >= 0."""
    T = net.T.astype(float)
    b = -(net.E @ lam)
    mu = np.zeros(net.n)
    step = 2.0 * T.min() / np.linalg.norm(net.E, 2) ** 2
    R = np.zeros(net.m)
    for _ in range(iters):
        R = np.maximum(net.E.T @ mu, 0.0) / (2.0 * T)
        g = b - net.E @ R
        if np.abs(g).max() < 1e-11:
            break
        mu += step * g
    return float(R @ (T * R))


@pytest.mark.parametrize("cost", [LINEAR, QUADRATIC])
def test_balanced_demand_needs_no_rebalancing(cost):
    net = _net(4, np.random.default_rng(0).integers(1, 8, size=12))
    ref = solve_reference(net, balanced_rates(4, 1.3), cost)
    assert np.abs(ref.R).sum() <= 1e-8
    assert ref.objective == pytest.approx(0.0, abs=1e-8)


@pytest.mark.parametrize("cost", [LINEAR, QUADRATIC])
def test_two_zone_hand_solution(cost):
    ref = solve_reference(_net(2, [1, 1]), [2.0, 5.0], cost)
    np.testing.assert_allclose(ref.R, [3.0, 0.0], atol=1e-7)


def test_min_fleet_two_zone():
    ref = solve_reference(_net(2, [5, 5]), [2.0, 5.0], LINEAR)
    assert min_fleet_size(ref) == pytest.approx(50.0)
    assert ref.min_fleet == pytest.approx(50.0)


def test_zero_lambda_zero_reference():
    ref = solve_reference(_net(3, [2] * 6), np.zeros(6), QUADRATIC, fleet_size=9)
    assert min_fleet_size(ref) == 0
    np.testing.assert_array_equal(ref.R, np.zeros(6))
    np.testing.assert_allclose(ref.P, [3.0, 3.0, 3.0])


def test_min_fleet_is_homogeneous():
    rng = np.random.default_rng(1)
    net = _net(4, rng.integers(1, 6, size=12))
    lam = rng.uniform(0, 2, size=12)
    base = solve_reference(net, lam, LINEAR).min_fleet
    assert solve_reference(net, 2.5 * lam, LINEAR).min_fleet == pytest.approx(2.5 * base, rel=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    net = _net(3, rng.integers(1, 6, size=6))
    lam = rng.integers(0, 9, size=6) / 4.0
    ref = solve_reference(net, lam, LINEAR)
    assert ref.objective == pytest.approx(_lp_vertex_optimum(net, lam), abs=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_qp_matches_projected_gradient(seed):
    rng = np.random.default_rng(10 + seed)
    net = _net(3, rng.integers(1, 6, size=6))
    lam = rng.integers(0, 9, size=6) / 4.0
    ref = solve_reference(net, lam, QUADRATIC)
    assert ref.objective == pytest.approx(_qp_dual_ascent(net, lam), abs=1e-5)


@pytest.mark.parametrize("seed", range(5))
def test_quadratic_is_never_better_in_l1(seed):
    rng = np.random.default_rng(20 + seed)
    net = _net(4, rng.integers(1, 6, size=12))
    lam = rng.uniform(0, 2, size=12)
    lin = solve_reference(net, lam, LINEAR)
    quad = solve_reference(net, lam, QUADRATIC)
    assert net.T @ quad.R >= net.T @ lin.R - 1e-7


def test_equilibrium_fixed_point_random_instances():
    rng = np.random.default_rng(42)
    for i in range(50):
        n = int(rng.integers(2, 7))
        net = _net(n, rng.integers(1, 11, size=n * (n - 1)))
        lam = rng.uniform(0, 3, size=net.m)
        cost = LINEAR if i % 2 == 0 else QUADRATIC
        ref = solve_reference(net, lam, cost, fleet_size=float(rng.uniform(0, 2)) * net.T @ lam + 50)
        x_bar = ref.x_bar()
        x_next = step_approx(build_lti(net), x_bar, ref.v_bar(), lam)
        assert np.abs(x_next - x_bar).max() <= 1e-9, (i, n, cost)


def test_equilibrium_from_rebalance_consistency():
    rng = np.random.default_rng(3)
    net = _net(3, rng.integers(1, 5, size=6))
    lam = rng.uniform(0, 2, size=6)
    solved = solve_reference(net, lam, LINEAR, fleet_size=40)
    rebuilt = equilibrium_from_rebalance(net, lam, solved.R, fleet_size=40)
    np.testing.assert_array_equal(rebuilt.F, solved.F)
    np.testing.assert_array_equal(rebuilt.P, solved.P)
    np.testing.assert_array_equal(rebuilt.F, net.T * (lam + solved.R))


def test_unbalanced_flow_rejected():
    with pytest.raises(NotBalanced):
        equilibrium_from_rebalance(_net(2, [1, 1]), [2.0, 5.0], [1.0, 0.0])


def test_fleet_below_minimum_keeps_zero_idle():
    ref = solve_reference(_net(2, [5, 5]), [2.0, 5.0], LINEAR, fleet_size=30)
    np.testing.assert_array_equal(ref.P, [0.0, 0.0])


def test_reference_round_trip():
    net = _net(3, [1, 2, 3, 1, 2, 3])
    ref = solve_reference(net, np.arange(6) / 3.0, LINEAR, fleet_size=20)
    back = reference_from_dict(json.loads(json.dumps(reference_to_dict(ref, net))))
    for attr in ("W", "P", "F", "V", "R", "lam", "T"):
        np.testing.assert_array_equal(getattr(back, attr), getattr(ref, attr))
    assert back.cost == ref.cost


def test_reference_command_balanced(tmp_path):
    lam = tmp_path / "lam.json"
    lam.write_text(json.dumps({"zones": [1, 2, 3, 4], "per": "step",
                               "rates": [[0 if i == j else 0.5 for j in range(4)] for i in range(4)]}))
    out = StringIO()
    call_command("reference", str(SAMPLES / "four_stations.json"), "--lambda", str(lam), "--format", "json",
                 stdout=out)
    doc = json.loads(out.getvalue())
    assert sum(doc["R"]) == pytest.approx(0.0, abs=1e-8)
    assert doc["min_fleet"] > 0
