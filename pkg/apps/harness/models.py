from django.db import models

from apps.mpc.domain import CONTROLLER_CHOICES


class ExperimentRun(models.Model):
    """One persisted closed-loop run (written only with --persist)."""

    name = models.CharField(max_length=120, blank=True)
    controller = models.CharField(max_length=16, choices=CONTROLLER_CHOICES)
    step_minutes = models.FloatField()

    demand_seed = models.IntegerField()
    rounding_seed = models.IntegerField()
    perturbation_seed = models.IntegerField()

    config = models.JSONField(default=dict)
    summary = models.JSONField(default=dict)
    diagnostics = models.JSONField(default=list, blank=True)

    arrival_hash = models.CharField(max_length=64, db_index=True)
    output_dir = models.CharField(max_length=500, blank=True)

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ["-created_at"]
        indexes = [models.Index(fields=["controller", "demand_seed"], name="harness_run_ctrl_seed_idx")]

    def __str__(self):
        return f"{self.name or 'run'} [{self.controller}] seed {self.demand_seed}"

    @property
    def avg_wait_minutes(self):
        return self.summary.get("avg_wait_minutes")
