# apps/plant/services.py
from __future__ import annotations

import logging
from collections import defaultdict, deque
from typing import Iterable, Optional, Sequence

import numpy as np

from apps.core.exceptions import DimensionMismatch, FleetConservationError, InfeasibleAction
from apps.demand.domain import ArrivalBatch
from apps.network.domain import CompleteNetwork

from .domain import (
    BoxStats,
    ControlAction,
    CustomerRecord,
    InTransitCohort,
    StepRecord,
    SystemState,
    WaitingMetrics,
)

logger = logging.getLogger(__name__)


# ---- Travel-time noise ----

def perturb_travel_time(T_rs: int, magnitude: float, rng: np.random.Generator) -> int:
    """T plus a uniform relative error in [-magnitude*T, +magnitude*T], rounded, at least one step."""
    if magnitude < 0:
        raise ValueError("magnitude must be non-negative.")
    if magnitude == 0:
        return int(T_rs)
    delta = rng.uniform(-magnitude * T_rs, magnitude * T_rs)
    return max(1, int(np.rint(T_rs + delta)))


# ---- Exact delay plant ----

class Plant:
    """
    Integer fleet simulator with exact travel delays. Within step t:

      1. arrivals d(t) join the per-pair FIFO queues (W += d)
      2. the action is checked against the post-arrival state
      3. V customers board (FIFO), V + R vehicles leave their zones
      4. cohorts due at t + 1 reach their destination
    """

    def __init__(
        self,
        net: CompleteNetwork,
        P0,
        *,
        W0=None,
        perturbation: float = 0.0,
        rng: Optional[np.random.Generator] = None,
        start_step: int = 0,
    ):
        self.net = net
        m, n = net.m, net.n
        P0 = np.asarray(P0, dtype=np.int64)
        if P0.shape != (n,):
            raise DimensionMismatch(f"P0 needs {n} entries.")
        if (P0 < 0).any():
            raise InfeasibleAction("Initial idle vehicles must be non-negative.")
        if perturbation > 0 and rng is None:
            raise ValueError("A perturbed plant needs an rng.")

        self.t = int(start_step)
        self.P = P0.copy()
        self.F = np.zeros(m, dtype=np.int64)
        self.W = np.zeros(m, dtype=np.int64)
        self.perturbation = float(perturbation)
        self.rng = rng
        self.fleet_size = int(P0.sum())

        self.queues: list[deque[CustomerRecord]] = [deque() for _ in range(m)]
        self.records: list[CustomerRecord] = []
        self._due: dict[int, list[InTransitCohort]] = defaultdict(list)
        self.cohort_log: list[InTransitCohort] = []
        self.action_log: list[tuple[int, np.ndarray, np.ndarray]] = []
        self.series: list[StepRecord] = []
        self._carrying = np.zeros(m, dtype=np.int64)
        self._cum_empty = 0.0

        if W0 is not None:
            W0 = np.asarray(W0, dtype=np.int64)
            if W0.shape != (m,) or (W0 < 0).any():
                raise InfeasibleAction("Initial queue must be a non-negative vector per OD pair.")
            for k in np.flatnonzero(W0):
                for _ in range(int(W0[k])):
                    self._enqueue(int(k), self.t)

    # -- state --

    @property
    def state(self) -> SystemState:
        return SystemState(W=self.W.copy(), P=self.P.copy(), F=self.F.copy())

    def check_conservation(self) -> None:
        total = int(self.P.sum() + self.F.sum())
        if total != self.fleet_size:
            raise FleetConservationError(
                f"Fleet is {total}, expected {self.fleet_size}.", step=self.t
            )

    def _enqueue(self, pair: int, step: int) -> None:
        rec = CustomerRecord(pair=pair, arrival_step=step)
        self.queues[pair].append(rec)
        self.records.append(rec)
        self.W[pair] += 1

    # -- dynamics --

    def admit(self, arrivals: ArrivalBatch) -> None:
        """Queue this step's arrivals (idempotence is the caller's job)."""
        counts = np.asarray(arrivals.counts, dtype=np.int64)
        if counts.shape != self.W.shape:
            raise DimensionMismatch("Arrival batch does not match the OD pairs.")
        if (counts < 0).any():
            raise InfeasibleAction("Negative arrivals.", step=self.t)
        for k in np.flatnonzero(counts):
            for _ in range(int(counts[k])):
                self._enqueue(int(k), self.t)

    def check_action(self, action: ControlAction) -> None:
        V, R = np.asarray(action.V), np.asarray(action.R)
        m = self.net.m
        if V.shape != (m,) or R.shape != (m,):
            raise DimensionMismatch("Action does not match the link count.")
        if (V < 0).any() or (R < 0).any():
            raise InfeasibleAction("Dispatch counts must be non-negative.", step=self.t)
        over = np.flatnonzero(V > self.W)
        if over.size:
            k = int(over[0])
            raise InfeasibleAction(
                f"V{self.net.links[k]}={int(V[k])} exceeds the {int(self.W[k])} waiting.", step=self.t
            )
        out = self.net.E_out @ (V + R)
        short = np.flatnonzero(out > self.P + 1e-9)
        if short.size:
            i = int(short[0])
            raise InfeasibleAction(
                f"zone {self.net.zones[i]} dispatches {int(out[i])} with {int(self.P[i])} idle.", step=self.t
            )

    def advance(self, action: ControlAction, arrivals_total: int = 0) -> StepRecord:
        """Apply an action to the post-arrival state and move time forward one step."""
        self.check_action(action)
        net, t = self.net, self.t
        V = np.asarray(action.V, dtype=np.int64)
        R = np.asarray(action.R, dtype=np.int64)

        for k in np.flatnonzero(V):
            q = self.queues[k]
            for _ in range(int(V[k])):
                q.popleft().board_step = t
        self.W -= V
        self.P -= (net.E_out @ (V + R)).astype(np.int64)
        self.F += V + R

        for k in np.flatnonzero(V + R):
            for count, carrying in ((int(V[k]), True), (int(R[k]), False)):
                if count == 0:
                    continue
                travel = int(net.T[k])
                if self.perturbation > 0:
                    travel = perturb_travel_time(travel, self.perturbation, self.rng)
                cohort = InTransitCohort(int(k), t, t + travel, count, carrying)
                self._due[cohort.arrival_step].append(cohort)
                self.cohort_log.append(cohort)
                if carrying:
                    self._carrying[k] += count

        for cohort in self._due.pop(t + 1, []):
            dest = net.zone_index(net.links[cohort.link][1])
            self.P[dest] += cohort.count
            self.F[cohort.link] -= cohort.count
            if cohort.carrying:
                self._carrying[cohort.link] -= cohort.count

        empty = float(R @ net.D)
        self._cum_empty += empty
        self.action_log.append((t, V.copy(), R.copy()))
        self.t = t + 1

        carrying = int(self._carrying.sum())
        row = StepRecord(
            t=t,
            waiting=int(self.W.sum()),
            mean_queue=float(self.W.mean()),
            idle=int(self.P.sum()),
            in_transit=int(self.F.sum()),
            carrying_in_transit=carrying,
            rebalancing_in_transit=int(self.F.sum()) - carrying,
            dispatched=int(V.sum()),
            rebalanced=int(R.sum()),
            arrivals=int(arrivals_total),
            empty_miles=empty,
            cumulative_empty_miles=self._cum_empty,
        )
        self.series.append(row)
        return row

    def step(self, action: ControlAction, arrivals: ArrivalBatch) -> SystemState:
        self.admit(arrivals)
        self.advance(action, int(np.asarray(arrivals.counts).sum()))
        return self.state

    def pending_cohorts(self) -> list[InTransitCohort]:
        return sorted((c for lst in self._due.values() for c in lst), key=lambda c: (c.arrival_step, c.link))


def step_exact(plant: Plant, action: ControlAction, arrivals: ArrivalBatch) -> SystemState:
    return plant.step(action, arrivals)


# ---- Metrics ----

def empty_distance(action_log: Iterable, D) -> float:
    """Total rebalancing miles: sum over logged R vectors of R . D."""
    D = np.asarray(D, dtype=float)
    total = 0.0
    for entry in action_log:
        R = entry[2] if isinstance(entry, tuple) else entry
        total += float(np.asarray(R) @ D)
    return total


def empty_distance_from_cohorts(cohorts: Iterable[InTransitCohort], D) -> float:
    D = np.asarray(D, dtype=float)
    return float(sum(c.count * D[c.link] for c in cohorts if not c.carrying))


def box_stats(values: Sequence[float]) -> BoxStats:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return BoxStats()
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return BoxStats(
        count=int(v.size),
        mean=float(v.mean()),
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
    )


def waiting_metrics(
    records: Sequence[CustomerRecord],
    step_minutes: float,
    *,
    duration: int = 0,
    pairs: int = 0,
    links: Optional[Sequence[tuple[int, int]]] = None,
) -> WaitingMetrics:
    """
    avg_queue_length = waiting customer-steps / (duration * pairs), the time
    average of the post-dispatch mean queue. avg_wait_minutes covers boarded
    customers only; the rest are counted as censored.
    """
    out = WaitingMetrics()
    if not records:
        return out

    end = duration
    waited = 0
    by_pair: dict[int, list[float]] = defaultdict(list)
    pooled = []
    for rec in records:
        if rec.board_step is None:
            out.censored += 1
            waited += max(end - rec.arrival_step, 0)
            continue
        w = rec.board_step - rec.arrival_step
        waited += w
        minutes = w * step_minutes
        pooled.append(minutes)
        by_pair[rec.pair].append(minutes)

    out.boarded = len(pooled)
    if duration > 0 and pairs > 0:
        out.avg_queue_length = waited / (duration * pairs)
    if pooled:
        out.avg_wait_minutes = float(np.mean(pooled))
    out.pooled = box_stats(pooled)
    out.pair_means = box_stats([np.mean(v) for v in by_pair.values()])
    for k in sorted(by_pair):
        key = f"{links[k][0]}->{links[k][1]}" if links is not None else str(k)
        out.per_pair[key] = box_stats(by_pair[k])
    return out
