# apps/iarr/domain.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class IarrAction:
    """
    One step of the rebalancing LP. V_lp is the served-customer variable the
    availability row sees (V_lp <= W, V_lp <= U); V = min(W, U) is what the
    controller dispatches.
    """

    R: np.ndarray
    U: np.ndarray
    V: np.ndarray
    V_lp: np.ndarray
    shortage: Optional[np.ndarray] = None
    status: str = "optimal"
    objective: Optional[float] = None
    solve_seconds: float = 0.0
