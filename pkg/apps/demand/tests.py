import json

import numpy as np
import pytest

from apps.core.exceptions import ConfigError, StepOutOfRange
from apps.demand.domain import DemandBlock, DemandScenario
from apps.demand.services import (
    active_lambda,
    arrival_log_hash,
    arrival_stream,
    balanced_rates,
    constant_scenario,
    load_lambda,
    load_scenario,
    peak_block,
    rates_from_matrix,
    sample_arrivals,
    scenario_from_rates,
    synthetic_peaked_scenario,
    total_expected_requests,
)
from apps.network.domain import CompleteNetwork


def _two_block(seed=0):
    return DemandScenario(
        blocks=(DemandBlock(60, np.array([1.0, 2.0])), DemandBlock(60, np.array([3.0, 0.5]))),
        seed=seed,
    )


def test_zero_rates_give_zero_batches():
    sc = constant_scenario(np.zeros(6), 50, seed=3)
    assert all(b.total == 0 for b in arrival_stream(sc))


def test_poisson_moments():
    sc = constant_scenario([3.0, 0.0], 10_000, seed=11)
    counts = np.array([b.counts[0] for b in arrival_stream(sc)])
    n = counts.size
    assert abs(counts.mean() - 3.0) <= 3 * np.sqrt(3.0 / n)
    # var of the sample variance for Poisson(l): (l(1 + 3l) - l^2) / n
    assert abs(counts.var(ddof=1) - 3.0) <= 3 * np.sqrt((3.0 * 10.0 - 9.0) / n)


def test_merged_pairs_are_poisson_with_summed_rate():
    sc = constant_scenario([1.0, 2.0], 10_000, seed=5)
    merged = np.array([b.counts.sum() for b in arrival_stream(sc)])
    n = merged.size
    assert abs(merged.mean() - 3.0) <= 3 * np.sqrt(3.0 / n)
    assert abs(merged.var(ddof=1) - 3.0) <= 3 * np.sqrt(21.0 / n)


def test_block_boundary():
    sc = _two_block()
    np.testing.assert_array_equal(active_lambda(sc, 59), [1.0, 2.0])
    np.testing.assert_array_equal(active_lambda(sc, 60), [3.0, 0.5])


def test_single_block_constant_lookup():
    sc = constant_scenario([0.2, 0.4], 30, seed=0)
    for t in (0, 15, 29):
        np.testing.assert_array_equal(active_lambda(sc, t), [0.2, 0.4])


@pytest.mark.parametrize("step", [-1, 120])
def test_step_out_of_range(step):
    with pytest.raises(StepOutOfRange):
        sample_arrivals(_two_block(), step)


def test_zero_rate_pair_never_arrives():
    sc = constant_scenario([0.0, 5.0], 200, seed=2)
    assert all(b.counts[0] == 0 for b in arrival_stream(sc))


def test_sampling_is_order_independent():
    sc = _two_block(seed=9)
    forward = [sample_arrivals(sc, t).counts for t in range(120)]
    backward = [sample_arrivals(sc, t).counts for t in reversed(range(120))][::-1]
    np.testing.assert_array_equal(np.array(forward), np.array(backward))
    assert arrival_log_hash(forward) == arrival_log_hash(backward)


def test_seed_changes_stream():
    a = [b.counts for b in arrival_stream(_two_block(seed=1))]
    b = [b.counts for b in arrival_stream(_two_block(seed=2))]
    assert arrival_log_hash(a) != arrival_log_hash(b)


def test_total_expected_requests():
    assert total_expected_requests(constant_scenario(np.zeros(2), 10, seed=0)) == 0
    one = constant_scenario([8.1667 / 2, 8.1667 / 2], 360, seed=0)
    assert total_expected_requests(one) == pytest.approx(2940.0, abs=0.02)
    two = DemandScenario(blocks=one.blocks * 2, seed=0)
    assert total_expected_requests(two) == pytest.approx(2 * total_expected_requests(one))


def test_scenario_from_rates_converts_units():
    sc = scenario_from_rates([(120, [[0, 0.5], [0.25, 0]])], 3.0, 4, zones=[1, 2])
    assert sc.duration == 40
    np.testing.assert_allclose(sc.blocks[0].rates, [1.5, 0.75])


def test_scenario_from_rates_rejects_partial_steps():
    with pytest.raises(ConfigError):
        scenario_from_rates([(100, [[0, 1], [1, 0]])], 3.0, 0, zones=[1, 2])


def test_balanced_rates_are_balanced():
    net = CompleteNetwork.build((1, 2, 3, 4), [1] * 12)
    np.testing.assert_allclose(net.E @ balanced_rates(4, 0.7), 0.0)


def test_synthetic_scenario_shape_and_total():
    net = CompleteNetwork.build(tuple(range(1, 7)), [3] * 30, step_minutes=2.0)
    sc = synthetic_peaked_scenario(net, seed=0)
    assert len(sc.blocks) == 6
    assert sc.duration == 360
    assert total_expected_requests(sc) == pytest.approx(2940.0)
    assert peak_block(sc) == 2  # 11:00-13:00
    assert (sc.blocks[0].rates >= 0).all()
    # imbalanced: E lambda != 0
    assert np.abs(net.E @ sc.blocks[0].rates).max() > 1e-3


def test_synthetic_scenario_three_minute_steps():
    net = CompleteNetwork.build(tuple(range(1, 7)), [2] * 30, step_minutes=3.0)
    sc = synthetic_peaked_scenario(net, seed=0)
    assert sc.duration == 240
    assert total_expected_requests(sc) == pytest.approx(2940.0)


def test_load_scenario_reorders_zones(tmp_path):
    p = tmp_path / "sc.json"
    p.write_text(json.dumps({
        "zones": [2, 1],
        "seed": 3,
        "blocks": [{"minutes": 60, "rates": [[0, 0.1], [0.4, 0]]}],
    }))
    sc = load_scenario(p, 2.0)
    # zone order (1, 2): link (1,2) rate is 0.4/min
    np.testing.assert_allclose(sc.blocks[0].rates, [0.8, 0.2])
    assert sc.seed == 3
    assert load_scenario(p, 2.0, seed=8).seed == 8


def test_load_scenario_rejects_unknown_and_bad_shape(tmp_path):
    p = tmp_path / "sc.json"
    p.write_text(json.dumps({"zones": [1, 2], "seed": 1, "mood": "x",
                             "blocks": [{"minutes": 60, "rates": [[0, 1]]}]}))
    with pytest.raises(ConfigError):
        load_scenario(p, 2.0)


def test_load_lambda_units(tmp_path):
    p = tmp_path / "lam.json"
    p.write_text(json.dumps({"zones": [1, 2], "per": "hour", "rates": [[0, 30], [60, 0]]}))
    np.testing.assert_allclose(load_lambda(p, zones=(1, 2), step_minutes=2.0), [1.0, 2.0])


def test_rates_from_matrix_link_order():
    mat = [[0, 1, 2], [3, 0, 4], [5, 6, 0]]
    np.testing.assert_array_equal(rates_from_matrix(mat, (1, 2, 3)), [1, 2, 3, 4, 5, 6])
