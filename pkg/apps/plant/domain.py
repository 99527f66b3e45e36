# apps/plant/domain.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from apps.core.exceptions import DimensionMismatch, InfeasibleAction


def _ints(vec, size: int, what: str) -> np.ndarray:
    arr = np.asarray(vec)
    if arr.shape != (size,):
        raise DimensionMismatch(f"{what} has shape {arr.shape}, expected ({size},)")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or not np.array_equal(arr, np.round(arr)):
            raise InfeasibleAction(f"{what} must hold whole numbers.")
    return arr.astype(np.int64)


@dataclass(frozen=True)
class SystemState:
    W: np.ndarray  # waiting customers per ordered OD pair
    P: np.ndarray  # idle vehicles per zone
    F: np.ndarray  # vehicles in transit per link

    @property
    def fleet(self) -> int:
        return int(self.P.sum() + self.F.sum())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.W, self.P, self.F]).astype(float)

    def is_nonnegative(self) -> bool:
        return bool((self.W >= 0).all() and (self.P >= 0).all() and (self.F >= 0).all())


@dataclass(frozen=True)
class ControlAction:
    V: np.ndarray  # customer-carrying dispatches
    R: np.ndarray  # rebalancing dispatches

    @classmethod
    def zero(cls, m: int) -> "ControlAction":
        return cls(np.zeros(m, dtype=np.int64), np.zeros(m, dtype=np.int64))

    @classmethod
    def of(cls, V, R) -> "ControlAction":
        m = np.asarray(V).size
        return cls(_ints(V, m, "V"), _ints(R, m, "R"))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.V, self.R]).astype(float)


@dataclass(frozen=True)
class InTransitCohort:
    link: int  # link index
    dispatch_step: int
    arrival_step: int
    count: int
    carrying: bool


@dataclass(slots=True)
class CustomerRecord:
    pair: int  # link index of the OD pair
    arrival_step: int
    board_step: Optional[int] = None

    @property
    def wait_steps(self) -> Optional[int]:
        return None if self.board_step is None else self.board_step - self.arrival_step


@dataclass(frozen=True)
class StepRecord:
    """State after step t -> t+1 was applied, plus what was dispatched at t."""

    t: int
    waiting: int
    mean_queue: float
    idle: int
    in_transit: int
    carrying_in_transit: int
    rebalancing_in_transit: int
    dispatched: int
    rebalanced: int
    arrivals: int
    empty_miles: float
    cumulative_empty_miles: float

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass
class BoxStats:
    count: int = 0
    mean: float = 0.0
    median: float = 0.0
    q1: float = 0.0
    q3: float = 0.0
    whisker_low: float = 0.0
    whisker_high: float = 0.0

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass
class WaitingMetrics:
    avg_queue_length: float = 0.0
    avg_wait_minutes: float = 0.0
    boarded: int = 0
    censored: int = 0
    pooled: BoxStats = field(default_factory=BoxStats)
    pair_means: BoxStats = field(default_factory=BoxStats)
    per_pair: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "avg_queue_length": self.avg_queue_length,
            "avg_wait_minutes": self.avg_wait_minutes,
            "boarded": self.boarded,
            "censored": self.censored,
            "pooled": self.pooled.as_dict(),
            "pair_means": self.pair_means.as_dict(),
            "per_pair": {k: v.as_dict() for k, v in self.per_pair.items()},
        }
