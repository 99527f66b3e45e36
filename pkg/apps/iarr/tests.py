import numpy as np
import pytest

from apps.demand.services import constant_scenario, sample_arrivals
from apps.iarr.services import (
    IarrController,
    iarr_constraint_residual,
    iarr_feasible_fallback,
    solve_iarr_step,
)
from apps.network.domain import CompleteNetwork
from apps.plant.domain import SystemState
from apps.plant.services import Plant


def _net(n, T):
    return CompleteNetwork.build(tuple(range(1, n + 1)), T)


def _state(W, P, F=None):
    W = np.asarray(W, dtype=np.int64)
    return SystemState(W=W, P=np.asarray(P, dtype=np.int64), F=np.zeros_like(W) if F is None else np.asarray(F))


def _random_case(rng):
    n = int(rng.integers(2, 6))
    m = n * (n - 1)
    net = _net(n, rng.integers(1, 6, size=m))
    state = _state(rng.integers(0, 5, size=m), rng.integers(0, 7, size=n), rng.integers(0, 4, size=m))
    return net, state, rng.uniform(0, 1, size=m)


def test_idle_balanced_fleet_does_nothing():
    net = _net(3, [2] * 6)
    lam = np.full(6, 0.4)
    out = solve_iarr_step(net, _state(np.zeros(6), [5, 5, 5]), lam)
    assert out.status == "optimal"
    np.testing.assert_allclose(out.R, 0.0, atol=1e-9)
    np.testing.assert_allclose(out.U, lam, atol=1e-9)
    np.testing.assert_array_equal(out.V, np.zeros(6))


def test_two_zone_moves_idle_vehicles_to_the_queue():
    net = _net(2, [1, 1])
    out = solve_iarr_step(net, _state([0, 3], [10, 0]), [0.5, 0.5])
    # excess (10, -3), desired 3 per zone: six vehicles go 1 -> 2
    assert out.R[0] == pytest.approx(6.0, abs=1e-7)
    assert out.R[1] == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(out.V, [0.0, 3.0])


def test_availability_row_binds():
    net = _net(2, [1, 1])
    state = _state([4, 0], [2, 0])
    out = solve_iarr_step(net, state, [1.0, 0.2])
    assert (net.E_out @ (out.V_lp + out.R) <= np.array([2.0, 0.0]) + 1e-7).all()


def test_random_states_solve_optimally():
    rng = np.random.default_rng(0)
    for i in range(1000):
        net, state, lam = _random_case(rng)
        out = solve_iarr_step(net, state, lam)
        assert out.status == "optimal", i
        assert iarr_constraint_residual(net, state, lam, out) <= 1e-6, i
        assert (out.U >= lam - 1e-9).all()


def test_fallback_is_feasible_on_random_states():
    rng = np.random.default_rng(1)
    for _ in range(200):
        net, state, lam = _random_case(rng)
        fb = iarr_feasible_fallback(net, state, lam)
        assert iarr_constraint_residual(net, state, lam, fb) <= 1e-9
        np.testing.assert_array_equal(fb.V, np.minimum(state.W, lam))


def test_fallback_of_zero_state_is_zero_action():
    net = _net(3, [1] * 6)
    fb = iarr_feasible_fallback(net, _state(np.zeros(6), np.zeros(3)), np.zeros(6))
    assert not fb.R.any() and not fb.V.any()


def test_controller_never_overdraws_the_plant():
    rng = np.random.default_rng(4)
    net = _net(4, rng.integers(1, 5, size=12))
    sc = constant_scenario(rng.uniform(0, 0.6, size=12), 60, seed=3)
    ctrl = IarrController(net, sc, rounding_seed=9)
    plant = Plant(net, [3, 3, 3, 3])
    for t in range(60):
        batch = sample_arrivals(sc, t)
        plant.step(ctrl.act(t, plant.state, batch), batch)
        plant.check_conservation()
    assert len(ctrl.diagnostics) == 60
    assert all(d["controller"] == "IARR" for d in ctrl.diagnostics)
