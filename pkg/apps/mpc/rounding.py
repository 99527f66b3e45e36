# apps/mpc/rounding.py
"""
Turning fractional dispatch plans into integer actions the plant accepts.

Shared by every controller so comparisons isolate the policy rather than the
integerization.
"""
from __future__ import annotations

import logging

import numpy as np

from apps.plant.domain import ControlAction, SystemState

from .domain import FractionalAction

logger = logging.getLogger(__name__)


def link_origins(n: int) -> np.ndarray:
    """Origin zone index per link under the lexicographic link order."""
    return np.repeat(np.arange(n), n - 1)


def project_to_state(V, R, state: SystemState) -> FractionalAction:
    """
    Clip V to [0, W] and R to >= 0, then per zone scale R down (and V only if
    R alone is not enough) until sum_s (V + R) <= P_r.
    """
    W = np.asarray(state.W, dtype=float)
    P = np.asarray(state.P, dtype=float)
    V = np.clip(np.asarray(V, dtype=float), 0.0, W)
    R = np.maximum(np.asarray(R, dtype=float), 0.0)
    origin = link_origins(P.size)

    for i in range(P.size):
        out = origin == i
        sv, sr = V[out].sum(), R[out].sum()
        if sv + sr <= P[i]:
            continue
        if sv <= P[i]:
            R[out] *= (P[i] - sv) / sr
        else:
            R[out] = 0.0
            V[out] *= P[i] / sv
    return FractionalAction(V=V, R=R)


def serve_waiting(R, state: SystemState) -> FractionalAction:
    """Plan V = W, so the projection boards as many waiting customers as idle vehicles allow before any R."""
    return project_to_state(np.asarray(state.W, dtype=float), R, state)


def _take(values: np.ndarray, frac: np.ndarray, links: np.ndarray, excess: int) -> int:
    # smallest fractional part first, ties by link index
    for k in sorted(links, key=lambda k: (frac[k], k)):
        if excess <= 0:
            break
        cut = min(int(values[k]), excess)
        values[k] -= cut
        excess -= cut
    return excess


def round_and_repair(action: FractionalAction, state: SystemState, rng: np.random.Generator) -> tuple[ControlAction, int]:
    """Randomized rounding plus repair; returns the action and the number of vehicles removed by repair."""
    frac_in = np.concatenate([np.asarray(action.V, dtype=float), np.asarray(action.R, dtype=float)])
    frac_in = np.maximum(frac_in, 0.0)
    base = np.floor(frac_in)
    frac = frac_in - base
    u = rng.random(frac.size)
    rounded = (base + (u < frac)).astype(np.int64)

    m = frac.size // 2
    V, R = rounded[:m].copy(), rounded[m:].copy()
    fV, fR = frac[:m], frac[m:]
    W = np.asarray(state.W, dtype=np.int64)
    P = np.asarray(state.P, dtype=np.int64)

    removed = int(np.maximum(V - W, 0).sum())
    V = np.minimum(V, W)
    origin = link_origins(P.size)
    for i in range(P.size):
        links = np.flatnonzero(origin == i)
        excess = int(V[links].sum() + R[links].sum() - P[i])
        if excess <= 0:
            continue
        removed += excess
        excess = _take(R, fR, links, excess)
        _take(V, fV, links, excess)

    if removed:
        logger.debug("rounding repaired", extra={"removed": removed})
    return ControlAction.of(V, R), removed


def randomized_round(action: FractionalAction, state: SystemState, rng: np.random.Generator) -> ControlAction:
    return round_and_repair(action, state, rng)[0]
