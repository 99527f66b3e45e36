# apps/demand/services.py
from __future__ import annotations

import hashlib
import logging
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from apps.core.exceptions import ConfigError, StepOutOfRange
from apps.core.serializers import load_document
from apps.network.domain import CompleteNetwork, link_order

from .domain import ArrivalBatch, DemandBlock, DemandScenario
from .serializers import LambdaFileSerializer, ScenarioFileSerializer

logger = logging.getLogger(__name__)

# Shape of a campus day in 2-hour blocks from 07:00; the 11:00-13:00 block peaks
CAMPUS_DAY_PROFILE = (0.8, 1.0, 1.6, 1.2, 0.9, 0.5)
BLOCK_MINUTES = 120.0


# ---- Lookup & sampling ----

def _check_step(scenario: DemandScenario, step: int) -> int:
    step = int(step)
    if not (0 <= step < scenario.duration):
        raise StepOutOfRange(f"Step {step} outside [0, {scenario.duration}).", step=step)
    return step


def active_lambda(scenario: DemandScenario, step: int) -> np.ndarray:
    step = _check_step(scenario, step)
    return scenario.blocks[scenario.block_at(step)].rates


def sample_arrivals(scenario: DemandScenario, step: int) -> ArrivalBatch:
    """
    Poisson counts per OD pair. Each (seed, step, pair) owns its generator, so
    a count never depends on which other pairs or steps were sampled.
    """
    lam = active_lambda(scenario, step)
    counts = np.zeros(lam.size, dtype=np.int64)
    for i in np.flatnonzero(lam > 0):
        counts[i] = np.random.default_rng([scenario.seed, step, int(i)]).poisson(lam[i])
    return ArrivalBatch(step=int(step), counts=counts)


def arrival_stream(scenario: DemandScenario, steps: Optional[int] = None) -> Iterable[ArrivalBatch]:
    for t in range(scenario.duration if steps is None else steps):
        yield sample_arrivals(scenario, t)


def total_expected_requests(scenario: DemandScenario) -> float:
    return math.fsum(b.duration * math.fsum(b.rates.tolist()) for b in scenario.blocks)


def arrival_log_hash(counts) -> str:
    """sha256 over the stacked int64 arrival counts (rows = steps)."""
    if isinstance(counts, (list, tuple)) and counts and isinstance(counts[0], ArrivalBatch):
        counts = [b.counts for b in counts]
    arr = np.ascontiguousarray(np.asarray(counts, dtype=np.int64))
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


# ---- Construction ----

def rates_from_matrix(matrix, zones: Sequence[int]) -> np.ndarray:
    """n x n matrix (diagonal ignored) -> vector in link order."""
    mat = np.asarray(matrix, dtype=float)
    pos = {z: i for i, z in enumerate(zones)}
    return np.array([mat[pos[r], pos[s]] for r, s in link_order(tuple(zones))])


def rates_to_matrix(rates, zones: Sequence[int]) -> np.ndarray:
    n = len(zones)
    pos = {z: i for i, z in enumerate(zones)}
    mat = np.zeros((n, n))
    for k, (r, s) in enumerate(link_order(tuple(zones))):
        mat[pos[r], pos[s]] = rates[k]
    return mat


def _steps_in(minutes: float, step_minutes: float) -> int:
    steps = minutes / step_minutes
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        raise ConfigError(f"Block of {minutes} min is not a whole number of {step_minutes}-min steps.")
    return int(round(steps))


def scenario_from_rates(
    blocks_minutes: Sequence[tuple[float, object]],
    step_minutes: float,
    seed: int,
    *,
    zones: Sequence[int],
    name: str = "",
) -> DemandScenario:
    """
    Per-minute blocks (duration in minutes, n x n rates per minute) to the
    step-indexed scenario. The only place rates change units.
    """
    if not step_minutes > 0:
        raise ConfigError("step_minutes must be positive.")
    blocks = tuple(
        DemandBlock(_steps_in(minutes, step_minutes), rates_from_matrix(rates, zones) * step_minutes)
        for minutes, rates in blocks_minutes
    )
    return DemandScenario(blocks=blocks, seed=int(seed), name=name, step_minutes=float(step_minutes))


def load_scenario(path: str | Path, step_minutes: float, *, seed: Optional[int] = None, zones=None) -> DemandScenario:
    data = load_document(path, ScenarioFileSerializer)
    if zones is not None and tuple(sorted(data["zones"])) != tuple(sorted(zones)):
        raise ConfigError(f"{path}: scenario zones {data['zones']} do not match the network zones {list(zones)}.")
    if seed is None:
        if "seed" not in data:
            raise ConfigError(f"{path}: no seed in the scenario file and none given.")
        seed = data["seed"]
    # reorder to the network's (sorted) zone order
    order = sorted(data["zones"])
    idx = [data["zones"].index(z) for z in order]
    blocks = [(b["minutes"], np.asarray(b["rates"])[np.ix_(idx, idx)]) for b in data["blocks"]]
    return scenario_from_rates(blocks, step_minutes, seed, zones=order, name=data.get("name") or Path(path).stem)


def load_lambda(path: str | Path, *, zones: Sequence[int], step_minutes: float) -> np.ndarray:
    """Rate vector per control step in the network's link order."""
    data = load_document(path, LambdaFileSerializer)
    if tuple(sorted(data["zones"])) != tuple(sorted(zones)):
        raise ConfigError(f"{path}: zones {data['zones']} do not match the network zones {list(zones)}.")
    per_step = {"step": 1.0, "minute": step_minutes, "hour": step_minutes / 60.0}[data["per"]]
    order = sorted(data["zones"])
    idx = [data["zones"].index(z) for z in order]
    mat = np.asarray(data["rates"], dtype=float)[np.ix_(idx, idx)]
    return rates_from_matrix(mat, order) * per_step


def constant_scenario(rates, duration: int, *, seed: int, name: str = "constant") -> DemandScenario:
    return DemandScenario(blocks=(DemandBlock(duration, np.asarray(rates, dtype=float)),), seed=int(seed), name=name)


def balanced_rates(n: int, rate: float) -> np.ndarray:
    """Uniform all-pairs rates: every zone sends and receives the same flow, so E lambda = 0."""
    return np.full(n * (n - 1), float(rate))


def synthetic_peaked_scenario(
    net: CompleteNetwork,
    *,
    seed: int,
    total_requests: float = 2940.0,
    hours: int = 12,
    start_hour: int = 7,
    structure_seed: int = 0,
    profile: Sequence[float] = CAMPUS_DAY_PROFILE,
) -> DemandScenario:
    """
    Campus-day demand in 2-hour blocks. The OD field is a seeded gamma draw
    shaped by per-zone trip production and attraction, and drifts from the
    morning pattern to its transpose by the evening. Rates are scaled so the
    expected request count over the day equals total_requests.
    """
    blocks_n = int(hours * 60 // BLOCK_MINUTES)
    if blocks_n != len(profile):
        raise ConfigError(f"Profile has {len(profile)} blocks, {hours} h needs {blocks_n}.")
    steps = _steps_in(BLOCK_MINUTES, net.step_minutes)

    rng = np.random.default_rng([structure_seed, net.n])
    produce = rng.gamma(2.0, 1.0, size=net.n)
    attract = rng.gamma(2.0, 1.0, size=net.n)
    noise = rng.gamma(2.0, 0.5, size=(net.n, net.n))
    base = np.outer(produce, attract) * noise
    np.fill_diagonal(base, 0.0)

    fields = []
    for b, weight in enumerate(profile):
        mix = b / max(len(profile) - 1, 1)
        fields.append(weight * ((1 - mix) * base + mix * base.T))
    scale = total_requests / (steps * sum(f.sum() for f in fields))

    blocks = tuple(DemandBlock(steps, rates_from_matrix(f * scale, net.zones)) for f in fields)
    scenario = DemandScenario(
        blocks=blocks,
        seed=int(seed),
        name=f"campus day {start_hour:02d}:00-{start_hour + hours:02d}:00",
        step_minutes=net.step_minutes,
    )
    logger.debug(
        "synthetic scenario built",
        extra={"n": net.n, "blocks": len(blocks), "expected_requests": total_expected_requests(scenario)},
    )
    return scenario


def peak_block(scenario: DemandScenario) -> int:
    totals = [b.rates.sum() for b in scenario.blocks]
    return int(np.argmax(totals))
