# apps/harness/reports.py
# Files written for one run (emit) and for a comparison (emit_comparison).
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from apps.plant.domain import StepRecord  # noqa: E402

from .domain import RunReport  # noqa: E402

logger = logging.getLogger(__name__)

SERIES_COLUMNS = list(StepRecord.__dataclass_fields__)
DIAGNOSTIC_COLUMNS = [
    "step", "controller", "status", "objective", "terminal_mode", "terminal_residual", "fallback", "repaired",
]


def json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def jsonable(data):
    """Plain-Python copy of data (numpy scalars and arrays converted)."""
    return json.loads(json.dumps(data, default=json_default))


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=json_default) + "\n", encoding="utf-8")
    return path


def series_frame(report: RunReport) -> pd.DataFrame:
    return pd.DataFrame([row.as_dict() for row in report.series], columns=SERIES_COLUMNS)


def diagnostics_frame(report: RunReport) -> pd.DataFrame:
    extra = sorted({k for d in report.diagnostics for k in d} - set(DIAGNOSTIC_COLUMNS))
    return pd.DataFrame(report.diagnostics, columns=DIAGNOSTIC_COLUMNS + extra)


def _minutes(report: RunReport) -> np.ndarray:
    step = float(report.config.get("step_minutes", 1.0))
    return np.array([row.t for row in report.series], dtype=float) * step


def _line_plot(path: Path, curves: dict[str, tuple[np.ndarray, np.ndarray]], ylabel: str, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    for label, (x, y) in curves.items():
        ax.plot(x, y, label=label, linewidth=1.0)
    ax.set_xlabel("time (min)")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(curves) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# ---- single run ----

def emit(report: RunReport, out_dir: str | Path) -> dict[str, Path]:
    """series.csv, summary.json, boxplots.json, diagnostics.csv, timing.json and three plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = series_frame(report)
    written = {}

    written["series"] = out / "series.csv"
    series.to_csv(written["series"], index=False)
    written["diagnostics"] = out / "diagnostics.csv"
    diagnostics_frame(report).to_csv(written["diagnostics"], index=False)
    written["summary"] = write_json(out / "summary.json", report.summary)
    written["boxplots"] = write_json(out / "boxplots.json", report.boxplots)
    written["references"] = write_json(out / "references.json", report.references)
    written["config"] = write_json(out / "config.json", {**report.config, "arrival_hash": report.arrival_hash})
    written["timing"] = write_json(out / "timing.json", report.timing)

    x = _minutes(report)
    name = report.controller
    written["queue_plot"] = _line_plot(
        out / "queue.png", {name: (x, series["mean_queue"].to_numpy())},
        "mean waiting customers per OD pair", "Waiting customers",
    )
    written["rebalancing_plot"] = _line_plot(
        out / "rebalancing.png",
        {
            "customer-carrying": (x, series["carrying_in_transit"].to_numpy()),
            "rebalancing": (x, series["rebalancing_in_transit"].to_numpy()),
        },
        "vehicles in transit", "Vehicles in transit",
    )
    written["empty_distance_plot"] = _line_plot(
        out / "empty_distance.png", {name: (x, series["cumulative_empty_miles"].to_numpy())},
        "empty distance (mi)", "Cumulative empty distance",
    )
    logger.info("run report written", extra={"controller": name, "out_dir": str(out), "rows": len(series)})
    return written


def read_summary(out_dir: str | Path) -> dict:
    return json.loads((Path(out_dir) / "summary.json").read_text(encoding="utf-8"))


# ---- comparison ----

def emit_comparison(table: pd.DataFrame, reports: Sequence[RunReport], out_dir: str | Path) -> dict[str, Path]:
    """comparison.csv/json plus overlay plots and a waiting-time boxplot per controller."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    written["table_csv"] = out / "comparison.csv"
    table.to_csv(written["table_csv"])
    written["table_json"] = write_json(out / "comparison.json", jsonable(table.to_dict()))

    columns = list(table.columns)
    frames = {col: (_minutes(r), series_frame(r)) for col, r in zip(columns, reports)}
    overlays = {
        "queue": ("mean_queue", "mean waiting customers per OD pair", "Waiting customers"),
        "carrying": ("carrying_in_transit", "customer-carrying vehicles", "Customer-carrying vehicles"),
        "rebalancing": ("rebalancing_in_transit", "rebalancing vehicles", "Rebalancing vehicles"),
        "empty_distance": ("cumulative_empty_miles", "empty distance (mi)", "Cumulative empty distance"),
    }
    for key, (column, ylabel, title) in overlays.items():
        curves = {col: (x, frame[column].to_numpy()) for col, (x, frame) in frames.items()}
        written[f"{key}_plot"] = _line_plot(out / f"{key}.png", curves, ylabel, title)

    fig, ax = plt.subplots(figsize=(8, 4))
    data = [r.wait_minutes or [0.0] for r in reports]
    ax.boxplot(data, showfliers=False)
    ax.set_xticks(range(1, len(columns) + 1), columns, rotation=20)
    ax.set_ylabel("waiting time (min)")
    ax.set_title("Waiting time per customer")
    fig.tight_layout()
    written["wait_boxplot"] = out / "wait_boxplot.png"
    fig.savefig(written["wait_boxplot"], dpi=120)
    plt.close(fig)

    for col, r in zip(columns, reports):
        emit(r, out / col.replace("#", "_"))
    logger.info("comparison written", extra={"out_dir": str(out), "controllers": columns})
    return written
