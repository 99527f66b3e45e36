# apps/dynamics/services.py
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from apps.core.exceptions import DimensionMismatch
from apps.network.domain import CompleteNetwork

from .domain import LtiModel, StateLayout

logger = logging.getLogger(__name__)


def assemble(T, E_in, E_out) -> LtiModel:
    """
    Global first-order-lag matrices from travel steps and incidence matrices:

        A = [[I, 0, 0          ],     B = [[-I,     0     ],     L = [[I],
             [0, I, E_in T^-1  ],          [-E_out, -E_out],          [0],
             [0, 0, I - T^-1   ]]          [ I,     I     ]]          [0]]
    """
    T = np.asarray(T, dtype=float)
    E_in = np.asarray(E_in, dtype=float)
    E_out = np.asarray(E_out, dtype=float)
    n, m = E_in.shape
    if E_out.shape != (n, m) or T.shape != (m,):
        raise DimensionMismatch("T, E_in and E_out disagree on the link count.")
    layout = StateLayout(n)
    if layout.m != m:
        raise DimensionMismatch(f"{n} zones need {layout.m} links, got {m}.")

    t_inv = np.diag(1.0 / T)
    I_m, I_n = np.eye(m), np.eye(n)
    Z_mn, Z_nm, Z_mm = np.zeros((m, n)), np.zeros((n, m)), np.zeros((m, m))

    A = np.block([
        [I_m, Z_mn, Z_mm],
        [Z_nm, I_n, E_in @ t_inv],
        [Z_mm, Z_mn, I_m - t_inv],
    ])
    B = np.block([
        [-I_m, Z_mm],
        [-E_out, -E_out],
        [I_m, I_m],
    ])
    L = np.vstack([I_m, Z_nm, Z_mm])
    for mat in (A, B, L):
        mat.setflags(write=False)
    return LtiModel(A=A, B=B, L=L, T=T, E_in=E_in, E_out=E_out, layout=layout)


def build_lti(net: CompleteNetwork) -> LtiModel:
    model = assemble(net.T, net.E_in, net.E_out)
    logger.debug("lti model built", extra={"n": net.n, "nx": model.layout.nx, "nu": model.layout.nu})
    return model


def step_approx(model: LtiModel, x, v, d) -> np.ndarray:
    """One step of the lag model; no clamping."""
    lay = model.layout
    x = lay.check(x, lay.nx, "state")
    v = lay.check(v, lay.nu, "input")
    d = lay.check(d, lay.m, "disturbance")
    return model.A @ x + model.B @ v + model.L @ d


def conservation_residual(model: LtiModel) -> float:
    """
    Largest change of 1'P + 1'F produced by any unit state or input under the
    lag model with d = 0. Zero (to rounding) for a well-formed model.
    """
    lay = model.layout
    count = np.zeros(lay.nx)
    count[lay.P] = 1.0
    count[lay.F] = 1.0
    from_state = count @ model.A - count
    from_input = count @ model.B
    return float(max(np.abs(from_state).max(), np.abs(from_input).max()))


def dump_matrices(model: LtiModel, directory: str | Path) -> list[Path]:
    """Row-major text dumps A.txt, B.txt, L.txt for cross-checking elsewhere."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("A", "B", "L"):
        p = out / f"{name}.txt"
        np.savetxt(p, getattr(model, name), fmt="%.17g")
        written.append(p)
    return written
