import logging

import numpy as np
import pytest

from apps.core.exceptions import ConfigError, RefreshNotDue
from apps.demand.domain import DemandBlock, DemandScenario
from apps.demand.services import constant_scenario, sample_arrivals
from apps.dynamics.services import build_lti, step_approx
from apps.mpc.domain import (
    HARD_ZERO,
    LMPC_LREF,
    MPC_VARIANTS,
    QMPC_QREF,
    SOFT_PENALTY,
    FractionalAction,
    MpcConfig,
)
from apps.mpc.rounding import project_to_state, randomized_round, serve_waiting
from apps.mpc.services import (
    MpcController,
    refresh_reference,
    solve_horizon,
    solve_mpc_step,
    stage_cost,
    trajectory_cost,
    zone_stock,
)
from apps.network.domain import CompleteNetwork
from apps.plant.domain import SystemState
from apps.plant.services import Plant
from apps.reference.domain import LINEAR, QUADRATIC
from apps.reference.services import balance_residual, solve_reference


def _net(n, T):
    return CompleteNetwork.build(tuple(range(1, n + 1)), T)


def _state(W, P, F=None):
    W = np.asarray(W, dtype=np.int64)
    return SystemState(W=W, P=np.asarray(P, dtype=np.int64), F=np.zeros_like(W) if F is None else np.asarray(F))


# ---- config ----

def test_config_validation():
    with pytest.raises(ConfigError):
        MpcConfig(horizon=0)
    with pytest.raises(ConfigError):
        MpcConfig(horizon=3, terminal_mode="sometimes")
    with pytest.raises(ConfigError):
        MpcConfig(horizon=3, terminal_mode=SOFT_PENALTY, soft_weight=0.0)
    with pytest.raises(ConfigError):
        MpcConfig.for_variant("PID", 8)


def test_variant_names_round_trip():
    for name, (cost, ref) in MPC_VARIANTS.items():
        cfg = MpcConfig.for_variant(name, 8)
        assert (cfg.cost_kind, cfg.reference_kind) == (cost, ref)
        assert cfg.variant == name


# ---- horizon program ----

@pytest.mark.parametrize("variant", sorted(MPC_VARIANTS))
@pytest.mark.parametrize("terminal", [HARD_ZERO, SOFT_PENALTY])
def test_equilibrium_is_held_for_fifty_steps(variant, terminal):
    rng = np.random.default_rng(0)
    net = _net(3, rng.integers(1, 5, size=6))
    lam = rng.uniform(0.5, 1.5, size=6)
    cfg = MpcConfig.for_variant(variant, 4, terminal_mode=terminal)
    ref = solve_reference(net, lam, cfg.reference_kind, fleet_size=1000)
    model = build_lti(net)
    x, v_bar = ref.x_bar(), ref.v_bar()
    for t in range(50):
        frac, diag = solve_mpc_step(model, ref, x, cfg, d_now=lam, step=t)
        assert diag.status == "optimal" and diag.fallback == ""
        v = np.concatenate([frac.V, frac.R])
        assert np.abs(v - v_bar).max() <= 1e-5, t
        x = step_approx(model, x, v, lam)
    assert np.abs(x[: net.m]).max() <= 1e-4


def test_no_waiting_customers_means_no_service():
    net = _net(3, [2] * 6)
    ref = solve_reference(net, np.full(6, 0.5), QUADRATIC, fleet_size=60)
    x = ref.x_bar()
    frac, _ = solve_mpc_step(build_lti(net), ref, x, MpcConfig(horizon=3), d_now=np.zeros(6))
    np.testing.assert_array_equal(frac.V, np.zeros(6))


def test_empty_zone_dispatches_nothing():
    net = _net(3, [1] * 6)
    ref = solve_reference(net, np.full(6, 0.5), QUADRATIC, fleet_size=30)
    model = build_lti(net)
    lay = model.layout
    W = np.full(6, 2.0)
    P = np.array([0.0, 15.0, 15.0])
    x = lay.join_state(W, P, np.zeros(6))
    frac, _ = solve_mpc_step(model, ref, x, MpcConfig(horizon=3, terminal_mode=SOFT_PENALTY), d_now=np.zeros(6))
    out = net.E_out @ (frac.V + frac.R)
    assert out[0] == 0
    assert (out <= P + 1e-9).all()


def test_two_zone_excess_vehicle_moves_across():
    net = _net(2, [1, 1])
    ref = solve_reference(net, [1.0, 1.0], QUADRATIC, fleet_size=20)
    model = build_lti(net)
    x = model.layout.join_state([0, 0], [10, 8], ref.F)
    sol = solve_horizon(model, ref, x, MpcConfig(horizon=6))
    assert sol.status == "optimal"
    assert sol.terminal_residual <= 1e-6
    # R block starts at m = 2: column 2 is 1->2, column 3 is 2->1
    assert (sol.dv[:, 2] - sol.dv[:, 3]).sum() == pytest.approx(1.0, abs=1e-5)


def _perturbed_start(seed=3):
    rng = np.random.default_rng(seed)
    net = _net(3, [1] * 6)
    lam = rng.uniform(0.5, 1.5, size=6)
    return net, lam


@pytest.mark.parametrize("kind", [QUADRATIC, LINEAR])
def test_receding_horizon_cost_decreases(kind):
    net, lam = _perturbed_start()
    ref = solve_reference(net, lam, LINEAR, fleet_size=60)
    model = build_lti(net)
    cfg = MpcConfig(horizon=6, cost_kind=kind)
    dx0 = np.zeros(model.layout.nx)
    dx0[0] = dx0[1] = 1.0
    dx0[model.layout.P] = [2.0, -2.0, 0.0]
    x0 = ref.x_bar() + dx0

    first = solve_horizon(model, ref, x0, cfg)
    assert first.status == "optimal"
    l0 = stage_cost(ref, dx0, first.dv0, kind)
    x1 = step_approx(model, x0, ref.v_bar() + first.dv0, lam)
    second = solve_horizon(model, ref, x1, cfg)
    assert second.objective <= first.objective - l0 + 1e-5


def test_linear_optimum_below_l1_cost_of_quadratic_plan():
    net, lam = _perturbed_start(seed=4)
    ref = solve_reference(net, lam, QUADRATIC, fleet_size=60)
    model = build_lti(net)
    x0 = ref.x_bar().copy()
    x0[model.layout.P] += [3.0, -1.0, -2.0]
    x0[:3] += 2.0
    lin = solve_horizon(model, ref, x0, MpcConfig(horizon=6, cost_kind=LINEAR))
    quad = solve_horizon(model, ref, x0, MpcConfig(horizon=6, cost_kind=QUADRATIC))
    assert lin.status == quad.status == "optimal"
    assert lin.objective <= trajectory_cost(ref, x0, quad, LINEAR) + 1e-6


def test_soft_fallback_when_fleet_disagrees_with_reference():
    net = _net(2, [1, 1])
    ref = solve_reference(net, [1.0, 1.0], LINEAR, fleet_size=20)
    model = build_lti(net)
    # ten vehicles short of the reference fleet: the hard terminal cannot be met
    x = model.layout.join_state([0, 0], [4, 4], ref.F)
    frac, diag = solve_mpc_step(model, ref, x, MpcConfig.for_variant(LMPC_LREF, 4), d_now=np.zeros(2))
    assert diag.fallback == "soft_terminal"
    assert diag.terminal_mode == SOFT_PENALTY
    assert diag.status == "optimal"
    assert (net.E_out @ (frac.V + frac.R) <= np.array([4, 4]) + 1e-9).all()


@pytest.mark.parametrize("kind", [QUADRATIC, LINEAR])
def test_soft_terminal_ignores_how_stock_splits_between_idle_and_in_transit(kind):
    net = _net(3, [2] * 6)
    lam = np.full(6, 0.5)
    ref = solve_reference(net, lam, LINEAR, fleet_size=60)
    model = build_lti(net)
    # nothing on the road yet, but every zone holds its equilibrium stock as idle vehicles
    x = model.layout.join_state(np.zeros(6), ref.P + model.E_in @ ref.F, np.zeros(6))
    np.testing.assert_allclose(zone_stock(model, x), zone_stock(model, ref.x_bar()))
    cfg = MpcConfig(horizon=4, cost_kind=kind, terminal_mode=SOFT_PENALTY)

    sol = solve_horizon(model, ref, x, cfg, d_now=lam)
    assert sol.status == "optimal"
    assert np.abs(sol.dv[:, model.layout.R]).max() <= 1e-5

    frac, diag = solve_mpc_step(model, ref, x, cfg, d_now=lam)
    assert diag.fallback == ""
    np.testing.assert_allclose(frac.V, lam)
    assert frac.R.max() <= 1e-5


@pytest.mark.parametrize("kind", [QUADRATIC, LINEAR])
def test_soft_terminal_moves_surplus_stock_towards_the_short_zone(kind):
    net = _net(2, [1, 1])
    ref = solve_reference(net, [1.0, 1.0], LINEAR, fleet_size=20)
    model = build_lti(net)
    x = model.layout.join_state([0, 0], [14, 4], ref.F)
    sol = solve_horizon(model, ref, x, MpcConfig(horizon=4, cost_kind=kind, terminal_mode=SOFT_PENALTY))
    assert sol.status == "optimal"
    # column 2 is 1->2, column 3 is 2->1
    moved = (sol.dv[:, 2] - sol.dv[:, 3]).sum()
    assert 1.0 < moved <= 5.0 + 1e-6


# ---- projection and rounding ----

def test_projection_scales_rebalancing_before_service():
    state = _state([2, 0], [3, 0])
    out = project_to_state([2.0, 0.0], [4.0, 0.0], state)
    np.testing.assert_allclose(out.V, [2.0, 0.0])
    np.testing.assert_allclose(out.R, [1.0, 0.0])
    out = project_to_state([2.0, 0.0], [4.0, 0.0], _state([2, 0], [1, 0]))
    np.testing.assert_allclose(out.V, [1.0, 0.0])
    np.testing.assert_allclose(out.R, [0.0, 0.0])


def test_serve_waiting_boards_customers_before_rebalancing():
    out = serve_waiting([4.0, 0.0], _state([2, 0], [3, 0]))
    np.testing.assert_allclose(out.V, [2.0, 0.0])
    np.testing.assert_allclose(out.R, [1.0, 0.0])
    out = serve_waiting([4.0, 0.0], _state([2, 0], [1, 0]))
    np.testing.assert_allclose(out.V, [1.0, 0.0])
    np.testing.assert_allclose(out.R, [0.0, 0.0])


@pytest.mark.parametrize("serve_first", [True, False])
def test_mpc_step_serves_the_whole_queue_when_idle_vehicles_suffice(serve_first):
    net = _net(2, [1, 1])
    ref = solve_reference(net, [1.0, 1.0], LINEAR, fleet_size=20)
    model = build_lti(net)
    x = model.layout.join_state([3, 0], [10, 8], ref.F)
    cfg = MpcConfig(horizon=4, serve_first=serve_first)
    frac, diag = solve_mpc_step(model, ref, x, cfg, d_now=np.zeros(2))
    assert diag.status == "optimal"
    assert (frac.V <= np.array([3.0, 0.0]) + 1e-9).all()
    assert (net.E_out @ (frac.V + frac.R) <= np.array([10, 8]) + 1e-9).all()
    if serve_first:
        np.testing.assert_array_equal(frac.V, [3.0, 0.0])


def test_whole_numbers_are_kept():
    rng = np.random.default_rng(0)
    state = _state([5, 5], [100, 100])
    for _ in range(100):
        a = randomized_round(FractionalAction(np.array([2.0, 0.0]), np.array([0.0, 3.0])), state, rng)
        assert a.V.tolist() == [2, 0] and a.R.tolist() == [0, 3]


def test_rounding_is_unbiased():
    rng = np.random.default_rng(1)
    state = _state([5, 0], [100, 100])
    frac = FractionalAction(np.array([1.3, 0.0]), np.zeros(2))
    draws = np.array([randomized_round(frac, state, rng).V[0] for _ in range(10_000)])
    assert set(draws.tolist()) <= {1, 2}
    assert abs(draws.mean() - 1.3) <= 3 * np.sqrt(0.21 / draws.size)


def test_repair_respects_single_idle_vehicle():
    rng = np.random.default_rng(2)
    state = _state([1, 0], [1, 0])
    frac = FractionalAction(np.array([0.8, 0.0]), np.array([0.8, 0.0]))
    for _ in range(500):
        a = randomized_round(frac, state, rng)
        assert a.V[0] + a.R[0] <= 1
        assert a.V[0] <= 1


# ---- reference schedule ----

def test_constant_scenario_refreshes_identically():
    net = _net(3, [1, 2, 3, 1, 2, 3])
    sc = constant_scenario(np.linspace(0.2, 1.2, 6), 40, seed=0)
    cfg = MpcConfig(horizon=4, reference_kind=LINEAR)
    a = refresh_reference(sc, 0, net, cfg, refresh_steps=10)
    b = refresh_reference(sc, 30, net, cfg, refresh_steps=10)
    np.testing.assert_array_equal(a.R, b.R)


def test_two_block_reference_switches_at_boundary():
    net = _net(3, [2] * 6)
    first = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    second = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    sc = DemandScenario(blocks=(DemandBlock(10, first), DemandBlock(10, second)), seed=0)
    cfg = MpcConfig(horizon=4, reference_kind=LINEAR)
    a = refresh_reference(sc, 0, net, cfg, refresh_steps=10)
    b = refresh_reference(sc, 10, net, cfg, refresh_steps=10)
    assert not np.allclose(a.R, b.R)
    assert balance_residual(net, first, a.R) <= 1e-8
    assert balance_residual(net, second, b.R) <= 1e-8
    with pytest.raises(RefreshNotDue):
        refresh_reference(sc, 5, net, cfg, refresh_steps=10)


# ---- closed loop on the exact plant ----

@pytest.mark.parametrize("variant", [QMPC_QREF, LMPC_LREF])
def test_controller_actions_are_always_plant_feasible(variant):
    rng = np.random.default_rng(7)
    net = _net(3, rng.integers(1, 4, size=6))
    sc = constant_scenario(np.full(6, 0.3), 30, seed=11)
    ctrl = MpcController(net, sc, MpcConfig.for_variant(variant, 4, rounding_seed=5), fleet_size=12, refresh_steps=10)
    plant = Plant(net, [4, 4, 4])
    for t in range(30):
        batch = sample_arrivals(sc, t)
        plant.step(ctrl.act(t, plant.state, batch), batch)
        plant.check_conservation()
    assert len(ctrl.diagnostics) == 30
    assert {d["controller"] for d in ctrl.diagnostics} == {variant}


# ---- scalability ----

@pytest.mark.slow
def test_horizon_solve_time_stays_within_n_to_the_seventh():
    sizes = (3, 4, 5, 6, 8)
    medians = {}
    for n in sizes:
        rng = np.random.default_rng(n)
        m = n * (n - 1)
        net = _net(n, rng.integers(1, 5, size=m))
        lam = rng.uniform(0.1, 0.6, size=m)
        base = solve_reference(net, lam, LINEAR)
        ref = solve_reference(net, lam, LINEAR, fleet_size=float(np.ceil(base.min_fleet)) + 5 * n)
        model = build_lti(net)
        lay = model.layout
        cfg = MpcConfig(horizon=8, terminal_mode=SOFT_PENALTY)
        times = []
        for _ in range(5):
            x = ref.x_bar().copy()
            x[lay.W] += rng.integers(0, 3, size=m)
            x[lay.P] += rng.integers(-2, 3, size=n)
            sol = solve_horizon(model, ref, x, cfg)
            assert sol.status == "optimal"
            times.append(sol.solve_seconds)
        medians[n] = float(np.median(times))

    logging.getLogger(__name__).info("horizon solve time by zone count", extra={"median_seconds": medians})
    slope = np.polyfit(np.log(sizes), np.log([medians[n] for n in sizes]), 1)[0]
    assert slope <= 7.0
    for n in sizes:
        assert medians[n] <= 10.0 * medians[3] * (n / 3) ** 7
