# apps/demand/serializers.py
"""
Scenario file (rates are customers per minute, n x n, diagonal ignored):

    {
      "name": "campus day",
      "zones": [1, 2, 3],
      "seed": 7,
      "blocks": [
        {"minutes": 120, "rates": [[0, 0.02, 0.01], [0.03, 0, 0.02], [0.01, 0.01, 0]]}
      ]
    }

Lambda file (reference input):

    {"zones": [1, 2], "per": "minute", "rates": [[0, 0.5], [0.2, 0]]}
"""
from __future__ import annotations

from rest_framework import serializers

from apps.core.serializers import StrictSerializer


def _check_square(rates, n):
    if len(rates) != n or any(len(row) != n for row in rates):
        raise serializers.ValidationError(f"Rates must be a {n}x{n} matrix.")
    for row in rates:
        for v in row:
            if v < 0:
                raise serializers.ValidationError("Rates must be non-negative.")


class RateMatrixField(serializers.ListField):
    child = serializers.ListField(child=serializers.FloatField())


class BlockSerializer(StrictSerializer):
    minutes = serializers.FloatField()
    rates = RateMatrixField()

    def validate_minutes(self, value):
        if value <= 0:
            raise serializers.ValidationError("Must be positive.")
        return value


class ScenarioFileSerializer(StrictSerializer):
    name = serializers.CharField(required=False, allow_blank=True, default="")
    zones = serializers.ListField(child=serializers.IntegerField(), min_length=2)
    seed = serializers.IntegerField(required=False)
    blocks = BlockSerializer(many=True)

    def validate(self, attrs):
        if len(set(attrs["zones"])) != len(attrs["zones"]):
            raise serializers.ValidationError({"zones": "Zone ids must be unique."})
        if not attrs["blocks"]:
            raise serializers.ValidationError({"blocks": "At least one block is required."})
        n = len(attrs["zones"])
        for i, block in enumerate(attrs["blocks"]):
            try:
                _check_square(block["rates"], n)
            except serializers.ValidationError as exc:
                raise serializers.ValidationError({"blocks": {i: exc.detail}})
        return attrs


class LambdaFileSerializer(StrictSerializer):
    PER_CHOICES = [("step", "per control step"), ("minute", "per minute"), ("hour", "per hour")]

    zones = serializers.ListField(child=serializers.IntegerField(), min_length=2)
    per = serializers.ChoiceField(choices=PER_CHOICES, default="step")
    rates = RateMatrixField()

    def validate(self, attrs):
        _check_square(attrs["rates"], len(attrs["zones"]))
        return attrs
