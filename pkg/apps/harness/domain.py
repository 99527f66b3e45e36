# apps/harness/domain.py
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from apps.core.exceptions import ConfigError
from apps.mpc.domain import HARD_ZERO
from apps.plant.domain import StepRecord


@dataclass(frozen=True)
class ExperimentConfig:
    network: str
    controller: str
    scenario: Optional[str] = None
    synthetic: Optional[dict] = None
    name: str = ""
    step_minutes: float = 2.0
    horizon: int = 8
    fleet_size: int = 125
    duration_minutes: Optional[float] = 720.0
    duration_steps: Optional[int] = None
    refresh_minutes: float = 120.0
    perturbation: float = 0.0
    terminal_mode: str = HARD_ZERO
    demand_seed: int = 0
    rounding_seed: int = 1
    perturbation_seed: int = 2

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in dict(data).items() if k in known})

    def as_dict(self) -> dict:
        out = asdict(self)
        if out["synthetic"] is not None:
            out["synthetic"] = dict(out["synthetic"])
        return out

    # -- step arithmetic --

    def _steps(self, minutes: float, what: str) -> int:
        steps = minutes / self.step_minutes
        if not math.isclose(steps, round(steps), abs_tol=1e-9) or round(steps) < 1:
            raise ConfigError(f"{what} of {minutes} min is not a whole number of {self.step_minutes}-min steps.")
        return int(round(steps))

    @property
    def steps(self) -> int:
        if self.duration_steps is not None:
            return int(self.duration_steps)
        return self._steps(self.duration_minutes, "duration")

    @property
    def refresh_steps(self) -> int:
        return self._steps(self.refresh_minutes, "refresh interval")

    # -- variations --

    def with_controller(self, controller: str) -> "ExperimentConfig":
        return replace(self, controller=controller)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """One seed for the whole run: demand s, rounding s + 1, perturbation s + 2."""
        seed = int(seed)
        return replace(self, demand_seed=seed, rounding_seed=seed + 1, perturbation_seed=seed + 2)

    def with_step_minutes(self, step_minutes: float) -> "ExperimentConfig":
        minutes = self.duration_minutes if self.duration_steps is None else self.duration_steps * self.step_minutes
        return replace(self, step_minutes=float(step_minutes), duration_minutes=minutes, duration_steps=None)

    def comparable(self) -> dict:
        """Fields that must agree between runs being compared."""
        out = self.as_dict()
        for key in ("controller", "name"):
            out.pop(key)
        return out


@dataclass
class RunReport:
    controller: str
    config: dict
    series: list[StepRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    boxplots: dict = field(default_factory=dict)
    wait_minutes: list[float] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    references: list[dict] = field(default_factory=list)
    arrival_hash: str = ""
    timing: dict = field(default_factory=dict)

    @property
    def duration(self) -> int:
        return len(self.series)

    def as_dict(self) -> dict:
        return {
            "controller": self.controller,
            "config": self.config,
            "series": [row.as_dict() for row in self.series],
            "summary": self.summary,
            "boxplots": self.boxplots,
            "wait_minutes": self.wait_minutes,
            "diagnostics": self.diagnostics,
            "references": self.references,
            "arrival_hash": self.arrival_hash,
            "timing": self.timing,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(
            controller=data["controller"],
            config=data["config"],
            series=[StepRecord(**row) for row in data.get("series", [])],
            summary=data.get("summary", {}),
            boxplots=data.get("boxplots", {}),
            wait_minutes=list(data.get("wait_minutes", [])),
            diagnostics=list(data.get("diagnostics", [])),
            references=list(data.get("references", [])),
            arrival_hash=data.get("arrival_hash", ""),
            timing=data.get("timing", {}),
        )
