# apps/demand/domain.py
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from apps.core.exceptions import ConfigError


@dataclass(frozen=True)
class DemandBlock:
    duration: int  # steps
    rates: np.ndarray  # customers per step, one entry per ordered OD pair

    def __post_init__(self):
        if int(self.duration) < 1:
            raise ConfigError("Block durations must be at least one step.")
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 1 or not np.isfinite(rates).all() or (rates < 0).any():
            raise ConfigError("Rates must be a finite non-negative vector.")
        rates = rates.copy()
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "duration", int(self.duration))


@dataclass(frozen=True)
class DemandScenario:
    """Piecewise-constant Poisson rates per ordered OD pair, indexed by control step."""

    blocks: tuple[DemandBlock, ...]
    seed: int = 0
    name: str = ""
    step_minutes: float | None = None

    def __post_init__(self):
        if not self.blocks:
            raise ConfigError("A scenario needs at least one block.")
        sizes = {b.rates.size for b in self.blocks}
        if len(sizes) != 1:
            raise ConfigError("Every block needs the same number of OD pairs.")
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def duration(self) -> int:
        return sum(b.duration for b in self.blocks)

    @property
    def m(self) -> int:
        return self.blocks[0].rates.size

    @property
    def starts(self) -> tuple[int, ...]:
        out, t = [], 0
        for b in self.blocks:
            out.append(t)
            t += b.duration
        return tuple(out)

    def block_at(self, step: int) -> int:
        t = 0
        for i, b in enumerate(self.blocks):
            t += b.duration
            if step < t:
                return i
        return len(self.blocks) - 1

    def with_seed(self, seed: int) -> "DemandScenario":
        return DemandScenario(blocks=self.blocks, seed=int(seed), name=self.name, step_minutes=self.step_minutes)


@dataclass(frozen=True)
class ArrivalBatch:
    step: int
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())
