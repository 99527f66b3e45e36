# apps/harness/services.py
from __future__ import annotations

import logging
import math
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from django.conf import settings

from apps.core.exceptions import ConfigError, MismatchedConfigs, RebalanceError, SimulationError
from apps.core.serializers import load_document
from apps.demand.domain import DemandScenario
from apps.demand.services import arrival_log_hash, load_scenario, peak_block, sample_arrivals, synthetic_peaked_scenario
from apps.iarr.services import IarrController
from apps.mpc.domain import FAILED_STEP_FALLBACKS, IARR, MPC_VARIANTS, SOFT_RETRY, MpcConfig
from apps.mpc.services import MpcController
from apps.network.domain import CompleteNetwork
from apps.network.services import complete, load_road_network
from apps.plant.services import Plant, waiting_metrics
from apps.reference.domain import LINEAR
from apps.reference.services import solve_reference

from .domain import ExperimentConfig, RunReport
from .serializers import ExperimentFileSerializer

logger = logging.getLogger(__name__)

# rows of the comparison table, in display order
METRICS = [
    ("avg_queue_length", "Average waiting customers"),
    ("avg_wait_minutes", "Average waiting time (min)"),
    ("total_empty_miles", "Empty distance (mi)"),
    ("requests", "Requests"),
    ("boarded", "Boarded"),
    ("censored", "Waiting at end"),
    ("rebalanced_vehicles", "Rebalancing trips"),
    ("fallback_steps", "Fallback steps"),
    ("soft_terminal_steps", "Soft terminal steps"),
]


# ---- Config ----

def load_experiment(path: str | Path, **overrides) -> ExperimentConfig:
    """Parse an experiment file; network and scenario paths resolve against the file's folder."""
    path = Path(path)
    data = dict(load_document(path, ExperimentFileSerializer))
    base = path.resolve().parent
    data["network"] = str(base / data["network"])
    if data.get("scenario"):
        data["scenario"] = str(base / data["scenario"])
    if data.get("synthetic") is not None:
        data["synthetic"] = dict(data["synthetic"])
    if not data.get("name"):
        data["name"] = path.stem
    return with_overrides(ExperimentConfig.from_dict(data), **overrides)


def with_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Apply command-line overrides; None means keep the file's value."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    if "seed" in changes:
        config = config.with_seed(changes.pop("seed"))
    if "step_minutes" in changes:
        config = config.with_step_minutes(changes.pop("step_minutes"))
    if changes:
        config = replace(config, **changes)
    check_config(config)
    return config


def check_config(config: ExperimentConfig) -> None:
    if config.controller != IARR and config.controller not in MPC_VARIANTS:
        raise ConfigError(f"Unknown controller {config.controller!r}.")
    if config.step_minutes <= 0:
        raise ConfigError("step_minutes must be positive.")
    if config.horizon < 1:
        raise ConfigError("horizon must be at least 1.")
    if config.fleet_size < 0:
        raise ConfigError("fleet_size must be non-negative.")
    if config.perturbation < 0:
        raise ConfigError("perturbation must be non-negative.")
    # both raise ConfigError when not a whole number of steps
    _ = (config.steps, config.refresh_steps)


# ---- Setup ----

def prepare(config: ExperimentConfig) -> tuple[CompleteNetwork, DemandScenario]:
    net = complete(load_road_network(config.network), config.step_minutes)
    if config.scenario:
        scenario = load_scenario(config.scenario, config.step_minutes, seed=config.demand_seed, zones=net.zones)
    else:
        scenario = synthetic_peaked_scenario(net, seed=config.demand_seed, **(config.synthetic or {}))
    if config.steps > scenario.duration:
        raise ConfigError(f"Run of {config.steps} steps outlasts the {scenario.duration}-step scenario.")
    return net, scenario


def initial_idle(fleet_size: int, n: int) -> np.ndarray:
    """M // n per zone; the remainder goes one each to the lowest-id zones."""
    P = np.full(n, fleet_size // n, dtype=np.int64)
    P[: fleet_size % n] += 1
    return P


def peak_reference_fleet(net: CompleteNetwork, scenario: DemandScenario, cost: str = LINEAR) -> float:
    lam = scenario.blocks[peak_block(scenario)].rates
    return solve_reference(net, lam, cost).min_fleet


def make_controller(config: ExperimentConfig, net: CompleteNetwork, scenario: DemandScenario):
    if config.controller == IARR:
        return IarrController(net, scenario, rounding_seed=config.rounding_seed)
    cfg = MpcConfig.for_variant(
        config.controller,
        config.horizon,
        terminal_mode=config.terminal_mode,
        rounding_seed=config.rounding_seed,
    )
    return MpcController(net, scenario, cfg, fleet_size=config.fleet_size, refresh_steps=config.refresh_steps)


# ---- Run ----

def run(
    config: ExperimentConfig,
    *,
    net: Optional[CompleteNetwork] = None,
    scenario: Optional[DemandScenario] = None,
) -> RunReport:
    if net is None or scenario is None:
        net, scenario = prepare(config)
    steps = config.steps
    if steps > scenario.duration:
        raise ConfigError(f"Run of {steps} steps outlasts the {scenario.duration}-step scenario.")

    cost = LINEAR if config.controller == IARR else MPC_VARIANTS[config.controller][1]
    peak_fleet = peak_reference_fleet(net, scenario, cost)
    if config.fleet_size < math.ceil(peak_fleet - 1e-9):
        logger.warning(
            "fleet below the peak reference minimum",
            extra={"fleet_size": config.fleet_size, "min_fleet": peak_fleet, "controller": config.controller},
        )

    controller = make_controller(config, net, scenario)
    plant = Plant(
        net,
        initial_idle(config.fleet_size, net.n),
        perturbation=config.perturbation,
        rng=np.random.default_rng(config.perturbation_seed),
    )
    logger.info("run started", extra={"controller": config.controller, "steps": steps, "n": net.n})

    counts = []
    started = time.perf_counter()
    for t in range(steps):
        try:
            batch = sample_arrivals(scenario, t)
            counts.append(batch.counts)
            plant.step(controller.act(t, plant.state, batch), batch)
            plant.check_conservation()
        except RebalanceError as exc:
            raise SimulationError(f"{type(exc).__name__}: {exc.detail}", step=t) from exc
    wall = time.perf_counter() - started

    # solve times vary run to run; keep them out of the deterministic part
    diagnostics = [dict(d) for d in controller.diagnostics]
    solve_times = [d.pop("solve_seconds", 0.0) for d in diagnostics]

    metrics = waiting_metrics(plant.records, config.step_minutes, duration=steps, pairs=net.m, links=net.links)
    series = list(plant.series)
    summary = {
        "controller": config.controller,
        "steps": steps,
        "step_minutes": config.step_minutes,
        "fleet_size": config.fleet_size,
        "peak_min_fleet": peak_fleet,
        "requests": int(sum(int(np.sum(c)) for c in counts)),
        "boarded": metrics.boarded,
        "censored": metrics.censored,
        "avg_queue_length": metrics.avg_queue_length,
        "avg_wait_minutes": metrics.avg_wait_minutes,
        "total_empty_miles": series[-1].cumulative_empty_miles if series else 0.0,
        "rebalanced_vehicles": int(sum(row.rebalanced for row in series)),
        "fallback_steps": sum(1 for d in diagnostics if d.get("fallback") in FAILED_STEP_FALLBACKS),
        "soft_terminal_steps": sum(1 for d in diagnostics if d.get("fallback") == SOFT_RETRY),
        "repaired_vehicles": int(sum(d.get("repaired", 0) for d in diagnostics)),
    }
    report = RunReport(
        controller=config.controller,
        config=config.as_dict(),
        series=series,
        summary=summary,
        boxplots={
            "pooled": metrics.pooled.as_dict(),
            "pair_means": metrics.pair_means.as_dict(),
            "per_pair": {k: v.as_dict() for k, v in metrics.per_pair.items()},
        },
        wait_minutes=[
            (r.board_step - r.arrival_step) * config.step_minutes for r in plant.records if r.board_step is not None
        ],
        diagnostics=diagnostics,
        references=list(getattr(controller, "refreshes", [])),
        arrival_hash=arrival_log_hash(counts),
        timing={
            "wall_seconds": wall,
            "mean_solve_seconds": float(np.mean(solve_times)) if solve_times else 0.0,
            "median_solve_seconds": float(np.median(solve_times)) if solve_times else 0.0,
            "max_solve_seconds": float(np.max(solve_times)) if solve_times else 0.0,
        },
    )
    check_report(report)
    logger.info(
        "run finished",
        extra={
            "controller": config.controller,
            "avg_wait_minutes": summary["avg_wait_minutes"],
            "total_empty_miles": summary["total_empty_miles"],
            "wall_seconds": round(wall, 3),
        },
    )
    return report


def check_report(report: RunReport) -> None:
    """The summary must be recomputable from the per-step series."""
    s, rows = report.summary, report.series
    if not rows:
        return
    queue = float(np.mean([r.mean_queue for r in rows]))
    problems = []
    if not math.isclose(queue, s["avg_queue_length"], rel_tol=1e-9, abs_tol=1e-9):
        problems.append(f"avg_queue_length {s['avg_queue_length']} vs series {queue}")
    miles = float(sum(r.empty_miles for r in rows))
    if not math.isclose(miles, s["total_empty_miles"], rel_tol=1e-9, abs_tol=1e-9):
        problems.append(f"total_empty_miles {s['total_empty_miles']} vs series {miles}")
    if sum(r.arrivals for r in rows) != s["requests"]:
        problems.append("request count disagrees with the series")
    if sum(r.dispatched for r in rows) != s["boarded"]:
        problems.append("boarded count disagrees with the series")
    if problems:
        raise SimulationError("; ".join(problems), step=len(rows) - 1)


# ---- Comparison ----

def _run_all(configs: Sequence[ExperimentConfig], parallel: bool) -> list[RunReport]:
    if not parallel:
        return [run(c) for c in configs]
    from celery import group

    from .tasks import run_experiment_task

    job = group(run_experiment_task.s(c.as_dict()) for c in configs)
    result = job.apply_async()
    return [RunReport.from_dict(r.get()) for r in result.results]


def _column_names(reports: Sequence[RunReport]) -> list[str]:
    seen: dict[str, int] = {}
    names = []
    for r in reports:
        seen[r.controller] = seen.get(r.controller, 0) + 1
        names.append(r.controller if seen[r.controller] == 1 else f"{r.controller}#{seen[r.controller]}")
    return names


def comparison_table(reports: Sequence[RunReport]) -> pd.DataFrame:
    """Rows are metrics, columns are controllers."""
    data = {name: [r.summary.get(key) for key, _ in METRICS] for name, r in zip(_column_names(reports), reports)}
    table = pd.DataFrame(data, index=[label for _, label in METRICS])
    table.index.name = "metric"
    return table


def compare(
    configs: Sequence[ExperimentConfig],
    *,
    seed: Optional[int] = None,
    parallel: bool = False,
) -> tuple[pd.DataFrame, list[RunReport]]:
    """Paired runs on one arrival stream. Configs may differ only in controller (and name)."""
    configs = list(configs)
    if not configs:
        raise ConfigError("Nothing to compare.")
    if seed is not None:
        configs = [c.with_seed(seed) for c in configs]
    first = configs[0].comparable()
    for c in configs[1:]:
        other = c.comparable()
        diff = sorted(k for k in first if first[k] != other[k])
        if diff:
            raise MismatchedConfigs(f"Configs for {configs[0].controller} and {c.controller} differ in {diff}.")

    logger.info("compare started", extra={"controllers": [c.controller for c in configs], "parallel": parallel})
    reports = _run_all(configs, parallel)
    hashes = {r.arrival_hash for r in reports}
    if len(hashes) != 1:
        raise MismatchedConfigs("Runs saw different arrival streams.")
    return comparison_table(reports), reports


def compare_over_seeds(
    configs: Sequence[ExperimentConfig],
    seeds: Sequence[int],
    *,
    parallel: bool = False,
) -> tuple[pd.DataFrame, dict[int, pd.DataFrame]]:
    """Mean table over seeds, plus the per-seed tables."""
    if not seeds:
        raise ConfigError("Give at least one seed.")
    tables = {int(s): compare(configs, seed=s, parallel=parallel)[0] for s in seeds}
    stacked = pd.concat(tables.values())
    mean = stacked.groupby(level=0, sort=False).mean()
    return mean, tables


def sweep_step_minutes(
    configs: Sequence[ExperimentConfig],
    *,
    seed: Optional[int] = None,
    values: Sequence[float] = (2.0, 3.0),
    parallel: bool = False,
) -> dict[float, tuple[pd.DataFrame, list[RunReport]]]:
    return {
        float(v): compare([c.with_step_minutes(v) for c in configs], seed=seed, parallel=parallel)
        for v in values
    }


# ---- Persistence ----

def default_output_dir(config: ExperimentConfig) -> Path:
    name = config.name or "run"
    return Path(settings.REBALANCE_OUTPUT_DIR) / f"{name}-{config.controller}-seed{config.demand_seed}"


def persist_report(report: RunReport, output_dir: str | Path = ""):
    from .models import ExperimentRun

    cfg = report.config
    return ExperimentRun.objects.create(
        name=cfg.get("name", ""),
        controller=report.controller,
        step_minutes=cfg["step_minutes"],
        demand_seed=cfg["demand_seed"],
        rounding_seed=cfg["rounding_seed"],
        perturbation_seed=cfg["perturbation_seed"],
        config=cfg,
        summary=report.summary,
        diagnostics=report.diagnostics,
        arrival_hash=report.arrival_hash,
        output_dir=str(output_dir),
    )
