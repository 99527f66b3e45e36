# apps/harness/serializers.py
"""
Experiment file. Paths are relative to the file itself.

    {
      "name": "campus 2-min",
      "network": "campus_six_zones.json",
      "synthetic": {"total_requests": 2940, "hours": 12, "start_hour": 7},
      "controller": "QMPC_QRef",
      "step_minutes": 2,
      "horizon": 8,
      "fleet_size": 125,
      "duration_minutes": 720,
      "refresh_minutes": 120,
      "perturbation": 0.0,
      "seeds": {"demand": 0, "rounding": 1, "perturbation": 2}
    }

Give either "scenario" (a scenario file) or "synthetic", not both.
"""
from __future__ import annotations

from django.conf import settings
from rest_framework import serializers

from apps.core.serializers import StrictSerializer
from apps.mpc.domain import CONTROLLER_CHOICES, HARD_ZERO, TERMINAL_CHOICES


class SeedsSerializer(StrictSerializer):
    demand = serializers.IntegerField(required=False)
    rounding = serializers.IntegerField(required=False)
    perturbation = serializers.IntegerField(required=False)


class SyntheticSerializer(StrictSerializer):
    total_requests = serializers.FloatField(default=2940.0, min_value=0.0)
    hours = serializers.IntegerField(default=12, min_value=2)
    start_hour = serializers.IntegerField(default=7, min_value=0, max_value=23)
    structure_seed = serializers.IntegerField(default=0)


class ExperimentFileSerializer(StrictSerializer):
    name = serializers.CharField(required=False, allow_blank=True, default="")
    network = serializers.CharField()
    scenario = serializers.CharField(required=False)
    synthetic = SyntheticSerializer(required=False)
    controller = serializers.ChoiceField(choices=CONTROLLER_CHOICES)
    step_minutes = serializers.FloatField(required=False)
    horizon = serializers.IntegerField(required=False, min_value=1)
    fleet_size = serializers.IntegerField(required=False, min_value=0)
    duration_minutes = serializers.FloatField(required=False)
    duration_steps = serializers.IntegerField(required=False, min_value=1)
    refresh_minutes = serializers.FloatField(required=False)
    perturbation = serializers.FloatField(required=False, min_value=0.0)
    terminal_mode = serializers.ChoiceField(choices=TERMINAL_CHOICES, default=HARD_ZERO)
    seeds = SeedsSerializer(required=False)

    def validate_step_minutes(self, value):
        if value <= 0:
            raise serializers.ValidationError("Must be positive.")
        return value

    def validate(self, attrs):
        if ("scenario" in attrs) == ("synthetic" in attrs):
            raise serializers.ValidationError("Give exactly one of 'scenario' or 'synthetic'.")
        if "duration_minutes" in attrs and "duration_steps" in attrs:
            raise serializers.ValidationError("Give duration_minutes or duration_steps, not both.")
        for key in ("duration_minutes", "refresh_minutes"):
            if key in attrs and attrs[key] <= 0:
                raise serializers.ValidationError({key: "Must be positive."})

        seeds = attrs.pop("seeds", {}) or {}
        attrs["demand_seed"] = seeds.get("demand", settings.REBALANCE_DEMAND_SEED)
        attrs["rounding_seed"] = seeds.get("rounding", settings.REBALANCE_ROUNDING_SEED)
        attrs["perturbation_seed"] = seeds.get("perturbation", settings.REBALANCE_PERTURBATION_SEED)
        attrs.setdefault("step_minutes", settings.REBALANCE_STEP_MINUTES)
        attrs.setdefault("horizon", settings.REBALANCE_HORIZON)
        attrs.setdefault("fleet_size", settings.REBALANCE_FLEET_SIZE)
        attrs.setdefault("refresh_minutes", settings.REBALANCE_REFRESH_MINUTES)
        attrs.setdefault("perturbation", settings.REBALANCE_PERTURBATION)
        if "duration_steps" not in attrs:
            attrs.setdefault("duration_minutes", settings.REBALANCE_DURATION_MINUTES)
        return attrs
