# apps/harness/tasks.py
from __future__ import annotations

import logging

from celery import shared_task

from .domain import ExperimentConfig
from .reports import jsonable

logger = logging.getLogger(__name__)


@shared_task
def run_experiment_task(config: dict) -> dict:
    """Run one experiment from its config dict; returns the report as plain JSON data."""
    from .services import run

    cfg = ExperimentConfig.from_dict(config)
    logger.info("experiment task started", extra={"controller": cfg.controller, "demand_seed": cfg.demand_seed})
    return jsonable(run(cfg).as_dict())
