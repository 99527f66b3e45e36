import numpy as np
import pytest

from apps.core.exceptions import InfeasibleAction
from apps.demand.domain import ArrivalBatch
from apps.network.domain import CompleteNetwork
from apps.plant.domain import ControlAction, CustomerRecord
from apps.plant.services import (
    Plant,
    empty_distance,
    empty_distance_from_cohorts,
    perturb_travel_time,
    step_exact,
    waiting_metrics,
)


def _batch(t, counts):
    return ArrivalBatch(step=t, counts=np.asarray(counts, dtype=np.int64))


def _random_feasible_action(plant, rng):
    m = plant.net.m
    V = rng.integers(0, plant.W + 1)
    R = np.zeros(m, dtype=np.int64)
    for i, z in enumerate(plant.net.zones):
        out_links = [k for k, (r, _) in enumerate(plant.net.links) if r == z]
        budget = int(plant.P[i])
        for k in out_links:
            take = min(int(V[k]), budget)
            V[k] = take
            budget -= take
        for k in out_links:
            extra = int(rng.integers(0, budget + 1)) if budget else 0
            R[k] = extra
            budget -= extra
    return ControlAction.of(V, R)


def test_zero_action_leaves_state_alone():
    net = CompleteNetwork.build((1, 2, 3), [2] * 6)
    plant = Plant(net, [3, 1, 2])
    before = plant.state
    after = step_exact(plant, ControlAction.zero(net.m), _batch(0, np.zeros(net.m)))
    np.testing.assert_array_equal(before.P, after.P)
    np.testing.assert_array_equal(before.W, after.W)
    np.testing.assert_array_equal(before.F, after.F)


def test_two_zone_hand_trace():
    net = CompleteNetwork.build((1, 2), [3, 3])
    plant = Plant(net, [1, 0], W0=[1, 0])
    zero = _batch(0, [0, 0])
    plant.step(ControlAction.of([1, 0], [0, 0]), zero)
    assert plant.P.tolist() == [0, 0] and plant.F.tolist() == [1, 0]
    plant.step(ControlAction.zero(2), zero)
    assert plant.P.tolist() == [0, 0]
    plant.step(ControlAction.zero(2), zero)
    assert plant.P.tolist() == [0, 1]
    assert plant.F.tolist() == [0, 0]
    assert plant.records[0].board_step == 0


def test_cohort_lands_exactly_after_travel_time():
    net = CompleteNetwork.build((1, 2, 3), [1, 4, 2, 2, 3, 5])
    plant = Plant(net, [5, 0, 0])
    k = net.link_index(1, 3)
    R = np.zeros(net.m, dtype=int)
    R[k] = 2
    plant.step(ControlAction.of(np.zeros(net.m, dtype=int), R), _batch(0, np.zeros(net.m)))
    for t in range(1, 4):
        assert plant.P[2] == 0, t
        plant.step(ControlAction.zero(net.m), _batch(t, np.zeros(net.m)))
    assert plant.t == 4
    assert plant.P[2] == 2


def test_arrivals_can_board_same_step():
    net = CompleteNetwork.build((1, 2), [2, 2])
    plant = Plant(net, [2, 2])
    plant.step(ControlAction.of([1, 0], [0, 0]), _batch(0, [1, 0]))
    assert plant.records[0].wait_steps == 0
    assert plant.W.tolist() == [0, 0]


def test_conservation_over_random_rollout():
    rng = np.random.default_rng(0)
    net = CompleteNetwork.build((1, 2, 3, 4), rng.integers(1, 6, size=12))
    plant = Plant(net, [5, 5, 5, 5], perturbation=0.3, rng=np.random.default_rng(1))
    for t in range(100):
        plant.admit(_batch(t, rng.poisson(0.4, size=net.m)))
        plant.advance(_random_feasible_action(plant, rng))
        plant.check_conservation()
        assert plant.P.sum() + plant.F.sum() == 20
        assert plant.state.is_nonnegative()


def test_fifo_boarding():
    net = CompleteNetwork.build((1, 2), [1, 1])
    plant = Plant(net, [10, 10])
    plant.step(ControlAction.zero(2), _batch(0, [2, 0]))
    plant.step(ControlAction.of([1, 0], [0, 0]), _batch(1, [1, 0]))
    plant.step(ControlAction.of([2, 0], [0, 0]), _batch(2, [0, 0]))
    boards = [r.board_step for r in plant.records]
    assert boards == [1, 2, 2]
    arrivals = [r.arrival_step for r in plant.records]
    assert arrivals == sorted(arrivals)


def test_rejects_serving_more_than_waiting():
    net = CompleteNetwork.build((1, 2), [1, 1])
    plant = Plant(net, [3, 3])
    with pytest.raises(InfeasibleAction) as exc:
        plant.step(ControlAction.of([1, 0], [0, 0]), _batch(0, [0, 0]))
    assert exc.value.step == 0


def test_rejects_overdrawing_zone():
    net = CompleteNetwork.build((1, 2), [1, 1])
    plant = Plant(net, [1, 0])
    with pytest.raises(InfeasibleAction):
        plant.step(ControlAction.of([1, 0], [1, 0]), _batch(0, [1, 0]))


def test_rejects_negative_and_fractional():
    net = CompleteNetwork.build((1, 2), [1, 1])
    plant = Plant(net, [1, 1])
    with pytest.raises(InfeasibleAction):
        plant.step(ControlAction.of([0, 0], [-1, 0]), _batch(0, [0, 0]))
    with pytest.raises(InfeasibleAction):
        ControlAction.of([0.5, 0.0], [0.0, 0.0])


# ---- perturbation ----

def test_perturb_identity_at_zero():
    rng = np.random.default_rng(0)
    assert all(perturb_travel_time(7, 0.0, rng) == 7 for _ in range(20))


def test_perturb_range_and_mean():
    rng = np.random.default_rng(3)
    draws = np.array([perturb_travel_time(10, 0.2, rng) for _ in range(10_000)])
    assert draws.min() >= 8 and draws.max() <= 12
    # uniform on [8, 12] rounded: sd about 1.2
    assert abs(draws.mean() - 10) <= 3 * 1.3 / np.sqrt(draws.size)


def test_perturb_never_below_one():
    rng = np.random.default_rng(4)
    assert min(perturb_travel_time(1, 5.0, rng) for _ in range(1000)) >= 1


# ---- metrics ----

def test_waiting_metrics_empty():
    m = waiting_metrics([], 2.0, duration=10, pairs=2)
    assert m.avg_queue_length == 0 and m.avg_wait_minutes == 0
    assert m.per_pair == {} and m.pooled.count == 0


def test_single_customer_wait():
    m = waiting_metrics([CustomerRecord(pair=0, arrival_step=3, board_step=5)], 2.0, duration=10, pairs=2)
    assert m.avg_wait_minutes == pytest.approx(4.0)
    assert m.avg_queue_length == pytest.approx(2 / 20)
    assert m.boarded == 1 and m.censored == 0


def test_censored_customers_reported_separately():
    recs = [CustomerRecord(0, 0, 1), CustomerRecord(1, 4)]
    m = waiting_metrics(recs, 3.0, duration=6, pairs=2)
    assert m.censored == 1 and m.boarded == 1
    assert m.avg_wait_minutes == pytest.approx(3.0)
    assert m.avg_queue_length == pytest.approx((1 + 2) / 12)


def test_queue_length_agrees_with_series():
    rng = np.random.default_rng(5)
    net = CompleteNetwork.build((1, 2, 3), rng.integers(1, 4, size=6))
    plant = Plant(net, [4, 4, 4])
    steps = 60
    for t in range(steps):
        plant.admit(_batch(t, rng.poisson(0.5, size=net.m)))
        plant.advance(_random_feasible_action(plant, rng))
    m = waiting_metrics(plant.records, 2.0, duration=steps, pairs=net.m, links=net.links)
    series_mean = np.mean([row.mean_queue for row in plant.series])
    assert m.avg_queue_length == pytest.approx(series_mean)
    assert set(m.per_pair) <= {f"{r}->{s}" for r, s in net.links}


def test_empty_distance_arithmetic():
    D = np.array([1.5, 2.0])
    assert empty_distance([], D) == 0
    assert empty_distance([np.array([3, 0])], D) == pytest.approx(4.5)


def test_empty_distance_matches_cohort_replay():
    rng = np.random.default_rng(6)
    net = CompleteNetwork.build((1, 2, 3), [2] * 6, rng.uniform(0.5, 3, size=6))
    plant = Plant(net, [6, 6, 6])
    for t in range(40):
        plant.admit(_batch(t, rng.poisson(0.3, size=net.m)))
        plant.advance(_random_feasible_action(plant, rng))
    logged = empty_distance(plant.action_log, net.D)
    assert logged == pytest.approx(empty_distance_from_cohorts(plant.cohort_log, net.D))
    assert logged == pytest.approx(plant.series[-1].cumulative_empty_miles)
