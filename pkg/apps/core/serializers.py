# apps/core/serializers.py
# Shared helpers for the declarative JSON input files (network, points,
# scenario, lambda, experiment). Every file serializer rejects unknown keys.
from __future__ import annotations

import json
from collections.abc import Mapping
from pathlib import Path
from typing import Type

from rest_framework import serializers

from .exceptions import ConfigError, RebalanceError


class StrictFieldsMixin:
    """Reject keys the serializer does not declare (applies at every nesting level that uses it)."""

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ["Unknown field."] for key in unknown})
        return super().to_internal_value(data)


class StrictSerializer(StrictFieldsMixin, serializers.Serializer):
    pass


def read_json(path: str | Path, *, error_class: Type[RebalanceError] = ConfigError):
    p = Path(path)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise error_class(f"File not found: {p}")
    except json.JSONDecodeError as exc:
        raise error_class(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})")


def validate_document(
    data,
    serializer_class: Type[serializers.Serializer],
    *,
    error_class: Type[RebalanceError] = ConfigError,
    source: str = "document",
) -> dict:
    """Run a serializer over parsed JSON; raise error_class with DRF's error dict on failure."""
    ser = serializer_class(data=data)
    if not ser.is_valid():
        raise error_class({"source": source, "errors": _plain(ser.errors)})
    return ser.validated_data


def load_document(
    path: str | Path,
    serializer_class: Type[serializers.Serializer],
    *,
    error_class: Type[RebalanceError] = ConfigError,
) -> dict:
    return validate_document(
        read_json(path, error_class=error_class),
        serializer_class,
        error_class=error_class,
        source=str(path),
    )


def _plain(errors):
    # ErrorDetail -> str so the envelope is JSON-serialisable
    if isinstance(errors, Mapping):
        return {str(k): _plain(v) for k, v in errors.items()}
    if isinstance(errors, (list, tuple)):
        return [_plain(v) for v in errors]
    return str(errors)
