import json
import math
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from django.conf import settings
from django.core.management import call_command

from apps.core.exceptions import ConfigError, MismatchedConfigs, SimulationError
from apps.demand.services import balanced_rates, constant_scenario, peak_block, synthetic_peaked_scenario
from apps.harness import services
from apps.harness.domain import ExperimentConfig, RunReport
from apps.harness.models import ExperimentRun
from apps.harness.reports import SERIES_COLUMNS, emit, emit_comparison, jsonable, read_summary
from apps.harness.services import (
    compare,
    initial_idle,
    load_experiment,
    persist_report,
    run,
    with_overrides,
)
from apps.mpc.domain import IARR, LMPC_LREF, LMPC_QREF, MPC_VARIANTS, QMPC_QREF
from apps.network.domain import CompleteNetwork
from apps.network.services import complete, load_road_network
from apps.plant.domain import ControlAction
from apps.reference.domain import LINEAR
from apps.reference.services import solve_reference

SAMPLES = Path(settings.BASE_DIR) / "samples"
CONTROLLERS = sorted(MPC_VARIANTS) + [IARR]


def _net(n=3, T=None):
    T = [1, 2, 3, 1, 2, 3][: n * (n - 1)] if T is None else T
    return CompleteNetwork.build(tuple(range(1, n + 1)), T)


def _config(controller, **kw):
    base = dict(
        network="in-memory",
        controller=controller,
        step_minutes=2.0,
        horizon=4,
        fleet_size=12,
        duration_minutes=None,
        duration_steps=20,
        refresh_minutes=20.0,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def _experiment_file(tmp_path, name="exp.json", **kw):
    doc = {
        "network": str(SAMPLES / "four_stations.json"),
        "scenario": str(SAMPLES / "balanced_four.json"),
        "controller": LMPC_LREF,
        "step_minutes": 2,
        "horizon": 4,
        "fleet_size": 40,
        "duration_minutes": 40,
        "refresh_minutes": 20,
    }
    doc.update(kw)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


# ---- config ----

def test_initial_idle_gives_remainder_to_lowest_zones():
    assert initial_idle(10, 4).tolist() == [3, 3, 2, 2]
    assert initial_idle(125, 6).tolist() == [21, 21, 21, 21, 21, 20]
    assert initial_idle(0, 3).tolist() == [0, 0, 0]


def test_step_counts_follow_minutes():
    cfg = _config(IARR, duration_minutes=720.0, duration_steps=None, refresh_minutes=120.0)
    assert cfg.steps == 360 and cfg.refresh_steps == 60
    three = cfg.with_step_minutes(3.0)
    assert three.steps == 240 and three.refresh_steps == 40
    with pytest.raises(ConfigError):
        _config(IARR, refresh_minutes=5.0).refresh_steps


def test_experiment_file_resolves_paths_and_overrides(tmp_path):
    (tmp_path / "maps").mkdir()
    (tmp_path / "maps" / "net.json").write_text((SAMPLES / "four_stations.json").read_text())
    path = _experiment_file(tmp_path, network="maps/net.json")
    cfg = load_experiment(path, seed=7, horizon=6)
    assert Path(cfg.network) == (tmp_path / "maps" / "net.json").resolve()
    assert cfg.horizon == 6
    assert (cfg.demand_seed, cfg.rounding_seed, cfg.perturbation_seed) == (7, 8, 9)
    assert cfg.name == "exp"


def test_experiment_file_rejects_unknown_and_ambiguous_fields(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment(_experiment_file(tmp_path, colour="red"))
    with pytest.raises(ConfigError):
        load_experiment(_experiment_file(tmp_path, synthetic={"total_requests": 10}))
    with pytest.raises(ConfigError):
        with_overrides(_config("PID"))


# ---- run ----

@pytest.mark.parametrize("controller", CONTROLLERS)
def test_zero_demand_leaves_the_fleet_alone(controller):
    net = _net()
    sc = constant_scenario(np.zeros(6), 20, seed=0)
    report = run(_config(controller), net=net, scenario=sc)
    assert report.duration == 20
    assert all(row.waiting == 0 and row.idle == 12 for row in report.series)
    assert report.summary["total_empty_miles"] == 0.0
    assert report.summary["requests"] == 0


@pytest.mark.parametrize("controller", [QMPC_QREF, IARR])
def test_fleet_is_conserved_every_step(controller):
    net = _net()
    sc = constant_scenario(np.full(6, 0.3), 40, seed=5)
    report = run(_config(controller, duration_steps=40), net=net, scenario=sc)
    assert all(row.idle + row.in_transit == 12 for row in report.series)
    assert report.summary["requests"] == sum(row.arrivals for row in report.series)


def test_same_config_and_seeds_give_the_same_report():
    net = _net()
    sc = constant_scenario(np.full(6, 0.3), 30, seed=2)
    cfg = _config(QMPC_QREF, duration_steps=30)
    a, b = run(cfg, net=net, scenario=sc), run(cfg, net=net, scenario=sc)
    assert [r.as_dict() for r in a.series] == [r.as_dict() for r in b.series]
    assert a.summary == b.summary
    assert a.diagnostics == b.diagnostics
    assert a.arrival_hash == b.arrival_hash
    assert "solve_seconds" not in a.diagnostics[0]


def test_balanced_demand_needs_no_reference_rebalancing():
    net = _net()
    sc = constant_scenario(balanced_rates(3, 0.3), 30, seed=1)
    report = run(_config(LMPC_LREF, duration_steps=30, refresh_minutes=20.0), net=net, scenario=sc)
    assert len(report.references) == 3
    assert all(abs(ref["rebalance_total"]) <= 1e-8 for ref in report.references)


def test_summary_is_consistent_with_the_series():
    net = _net()
    sc = constant_scenario(np.full(6, 0.4), 30, seed=9)
    report = run(_config(IARR, duration_steps=30), net=net, scenario=sc)
    queue = np.mean([row.mean_queue for row in report.series])
    assert report.summary["avg_queue_length"] == pytest.approx(queue, rel=1e-9, abs=1e-12)
    assert report.summary["boarded"] == len(report.wait_minutes)
    assert report.summary["boarded"] + report.summary["censored"] == report.summary["requests"]


def test_module_errors_carry_the_step(monkeypatch):
    class Greedy:
        diagnostics = []

        def act(self, step, state, arrivals):
            # one more pickup than anyone is waiting for
            V = state.W + arrivals.counts
            V[0] += 1
            return ControlAction.of(V, np.zeros_like(V))

    monkeypatch.setattr(services, "make_controller", lambda *a, **k: Greedy())
    net = _net()
    with pytest.raises(SimulationError) as err:
        run(_config(IARR), net=net, scenario=constant_scenario(np.zeros(6), 20, seed=0))
    assert err.value.step == 0
    assert "InfeasibleAction" in str(err.value.detail)


def test_routine_soft_terminal_steps_are_not_counted_as_fallbacks(monkeypatch):
    class Scripted:
        def __init__(self):
            self.diagnostics = []

        def act(self, step, state, arrivals):
            fallback = ["soft_terminal", "soft_terminal", "zero_action", ""][step % 4]
            self.diagnostics.append({"step": step, "fallback": fallback, "solve_seconds": 0.0})
            return ControlAction.of(np.zeros(6, dtype=np.int64), np.zeros(6, dtype=np.int64))

    monkeypatch.setattr(services, "make_controller", lambda *a, **k: Scripted())
    report = run(_config(IARR), net=_net(), scenario=constant_scenario(np.zeros(6), 20, seed=0))
    assert report.summary["soft_terminal_steps"] == 10
    assert report.summary["fallback_steps"] == 5


def test_run_longer_than_scenario_is_rejected():
    with pytest.raises(ConfigError):
        run(_config(IARR, duration_steps=50), net=_net(), scenario=constant_scenario(np.zeros(6), 20, seed=0))


def test_report_dict_round_trip():
    net = _net()
    report = run(_config(IARR), net=net, scenario=constant_scenario(np.full(6, 0.2), 20, seed=3))
    again = RunReport.from_dict(jsonable(report.as_dict()))
    assert again.series == report.series
    assert again.summary == jsonable(report.summary)


# ---- compare ----

def test_compare_pairs_controllers_on_one_stream(tmp_path):
    base = load_experiment(_experiment_file(tmp_path))
    table, reports = compare([base, base.with_controller(IARR)], seed=4)
    assert list(table.columns) == [LMPC_LREF, IARR]
    assert table.loc["Requests", LMPC_LREF] == table.loc["Requests", IARR]
    assert len({r.arrival_hash for r in reports}) == 1
    assert all(r.config["demand_seed"] == 4 for r in reports)


def test_identical_configs_give_identical_columns(tmp_path):
    base = load_experiment(_experiment_file(tmp_path))
    table, _ = compare([base, base])
    assert list(table.columns) == [LMPC_LREF, f"{LMPC_LREF}#2"]
    pd.testing.assert_series_equal(table.iloc[:, 0], table.iloc[:, 1], check_names=False)


def test_compare_rejects_configs_that_differ_beyond_controller(tmp_path):
    base = load_experiment(_experiment_file(tmp_path))
    other = with_overrides(base.with_controller(IARR), horizon=6)
    with pytest.raises(MismatchedConfigs):
        compare([base, other])


def test_parallel_compare_matches_serial(tmp_path):
    base = load_experiment(_experiment_file(tmp_path))
    configs = [base, base.with_controller(IARR)]
    serial, _ = compare(configs)
    parallel, _ = compare(configs, parallel=True)
    pd.testing.assert_frame_equal(serial, parallel)


def test_step_minute_sweep_builds_one_table_per_step(tmp_path):
    base = load_experiment(_experiment_file(tmp_path, duration_minutes=60, refresh_minutes=30))
    out = services.sweep_step_minutes([base, base.with_controller(IARR)], seed=1, values=(2, 3))
    assert sorted(out) == [2.0, 3.0]
    assert out[2.0][1][0].duration == 30
    assert out[3.0][1][0].duration == 20


# ---- emit ----

def test_emit_writes_one_row_per_step(tmp_path):
    report = run(_config(IARR), net=_net(), scenario=constant_scenario(np.full(6, 0.2), 20, seed=3))
    written = emit(report, tmp_path)
    series = pd.read_csv(written["series"])
    assert len(series) == 20
    assert list(series.columns) == SERIES_COLUMNS
    assert read_summary(tmp_path) == jsonable(report.summary)
    for key in ("queue_plot", "rebalancing_plot", "empty_distance_plot"):
        assert written[key].stat().st_size > 0


def test_emit_of_empty_report_keeps_headers(tmp_path):
    written = emit(RunReport(controller=IARR, config={"step_minutes": 2.0}), tmp_path)
    series = pd.read_csv(written["series"])
    assert series.empty
    assert list(series.columns) == SERIES_COLUMNS
    assert json.loads(written["summary"].read_text()) == {}


def test_emit_comparison_writes_table_and_runs(tmp_path):
    base = load_experiment(_experiment_file(tmp_path))
    table, reports = compare([base, base.with_controller(IARR)])
    out = tmp_path / "cmp"
    written = emit_comparison(table, reports, out)
    back = pd.read_csv(written["table_csv"], index_col=0)
    assert list(back.columns) == [LMPC_LREF, IARR]
    assert (out / IARR / "series.csv").exists()
    assert written["wait_boxplot"].exists()


# ---- persistence and commands ----

@pytest.mark.django_db
def test_persist_report_stores_a_row():
    report = run(_config(IARR), net=_net(), scenario=constant_scenario(np.full(6, 0.2), 20, seed=3))
    row = persist_report(jsonable_report(report), "runs/x")
    assert ExperimentRun.objects.count() == 1
    assert row.controller == IARR
    assert row.avg_wait_minutes == report.summary["avg_wait_minutes"]
    assert row.arrival_hash == report.arrival_hash


def jsonable_report(report):
    return RunReport.from_dict(jsonable(report.as_dict()))


def test_simulate_command_prints_summary(tmp_path):
    path = _experiment_file(tmp_path)
    out = StringIO()
    call_command("simulate", "--config", str(path), "--controller", IARR, "--format", "json", stdout=out)
    summary = json.loads(out.getvalue())
    assert summary["controller"] == IARR
    assert summary["steps"] == 20


def test_compare_command_outputs_table(tmp_path):
    path = _experiment_file(tmp_path)
    out = StringIO()
    call_command("compare", str(path), "--controllers", LMPC_LREF, IARR, "--format", "json", stdout=out)
    doc = json.loads(out.getvalue())
    assert sorted(doc["comparison"]) == sorted([LMPC_LREF, IARR])


# ---- long acceptance runs ----

def _campus():
    return complete(load_road_network(SAMPLES / "campus_six_zones.json"), 2.0)


@pytest.mark.slow
def test_two_thousand_step_run_conserves_the_fleet():
    net = _campus()
    peak = synthetic_peaked_scenario(net, seed=0)
    sc = constant_scenario(peak.blocks[peak_block(peak)].rates, 2000, seed=11)
    report = run(_config(IARR, fleet_size=125, duration_steps=2000, refresh_minutes=240.0), net=net, scenario=sc)
    assert all(row.idle + row.in_transit == 125 for row in report.series)


@pytest.mark.slow
@pytest.mark.parametrize("variant", sorted(MPC_VARIANTS))
def test_queue_stays_bounded_with_a_generous_fleet(variant):
    net = _campus()
    peak = synthetic_peaked_scenario(net, seed=0)
    lam = peak.blocks[peak_block(peak)].rates
    fleet = math.ceil(1.2 * solve_reference(net, lam, LINEAR).min_fleet) + net.n
    sc = constant_scenario(lam, 2000, seed=21)
    cfg = _config(variant, horizon=8, fleet_size=fleet, duration_steps=2000, refresh_minutes=240.0)
    queue = np.array([row.waiting for row in run(cfg, net=net, scenario=sc).series], dtype=float)
    early, late = queue[500:1000].mean(), queue[1000:2000].mean()
    assert late <= 1.1 * early + 0.5


@pytest.mark.slow
@pytest.mark.parametrize("step_minutes", [2.0, 3.0])
def test_mpc_beats_iarr_on_the_campus_day(step_minutes):
    base = with_overrides(load_experiment(SAMPLES / "campus_day.json"), step_minutes=step_minutes)
    configs = [base.with_controller(c) for c in CONTROLLERS]
    mean, _ = services.compare_over_seeds(configs, seeds=range(5))
    wait = mean.loc["Average waiting time (min)"]
    empty = mean.loc["Empty distance (mi)"]
    assert all(wait[c] < wait[IARR] for c in MPC_VARIANTS)
    assert empty[LMPC_LREF] < empty[QMPC_QREF]
    assert empty[LMPC_LREF] < empty[LMPC_QREF]
