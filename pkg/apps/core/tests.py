import json
from io import StringIO
from pathlib import Path

import pytest
from django.conf import settings
from rest_framework import serializers

from apps.core import __version__
from apps.core.cli import main
from apps.core.exceptions import ConfigError, InfeasibleAction, RebalanceError, SimulationError
from apps.core.serializers import StrictSerializer, read_json, validate_document

SAMPLES = Path(settings.BASE_DIR) / "samples"


# ---- exceptions ----

def test_error_envelope_carries_type_code_and_step():
    err = InfeasibleAction("too many", step=4)
    assert str(err) == "step 4: too many"
    assert err.as_dict() == {
        "error": {"type": "InfeasibleAction", "code": "infeasible_action", "detail": "too many", "step": 4}
    }


def test_default_detail_and_no_step():
    body = SimulationError().as_dict()["error"]
    assert body["detail"] == SimulationError.default_detail
    assert "step" not in body
    assert issubclass(ConfigError, RebalanceError)


# ---- serializers ----

class Point(StrictSerializer):
    x = serializers.FloatField()


class Shape(StrictSerializer):
    name = serializers.CharField()
    points = Point(many=True)


def test_strict_serializer_rejects_unknown_keys_at_any_depth():
    ok = validate_document({"name": "a", "points": [{"x": 1}]}, Shape)
    assert ok["points"][0]["x"] == 1.0
    with pytest.raises(ConfigError) as top:
        validate_document({"name": "a", "points": [], "colour": "red"}, Shape, source="shape.json")
    assert top.value.detail["source"] == "shape.json"
    assert "colour" in top.value.detail["errors"]
    with pytest.raises(ConfigError):
        validate_document({"name": "a", "points": [{"x": 1, "y": 2}]}, Shape)


def test_read_json_reports_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        read_json(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        read_json(bad)


# ---- cli ----

def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_validate_reports_strong_connectivity():
    out = StringIO()
    assert main(["validate", str(SAMPLES / "four_stations.json")], stdout=out) == 0
    assert "strongly connected: true" in out.getvalue()


def test_disconnected_network_gives_json_error(tmp_path):
    path = tmp_path / "oneway.json"
    path.write_text(json.dumps({
        "nodes": [{"id": 1}, {"id": 2}],
        "arcs": [{"from": 1, "to": 2, "minutes": 3, "miles": 1}],
    }))
    out, err = StringIO(), StringIO()
    assert main(["validate", str(path)], stdout=out, stderr=err) == 1
    assert "strongly connected: false" in out.getvalue()
    envelope = json.loads(err.getvalue().strip())
    assert envelope["error"]["type"] == "NotStronglyConnected"


def test_missing_file_is_a_domain_error(tmp_path):
    err = StringIO()
    assert main(["validate", str(tmp_path / "missing.json")], stdout=StringIO(), stderr=err) == 1
    assert json.loads(err.getvalue())["error"]["code"] == "road_network_format"


def test_reference_on_balanced_demand_needs_no_rebalancing():
    out = StringIO()
    rc = main(
        [
            "reference", str(SAMPLES / "four_stations.json"),
            "--lambda", str(SAMPLES / "balanced_lambda.json"),
            "--format", "json",
        ],
        stdout=out,
    )
    assert rc == 0
    doc = json.loads(out.getvalue())
    assert sum(abs(r) for r in doc["R"]) <= 1e-8
    assert doc["min_fleet"] > 0


def test_unknown_flag_and_command_exit_two():
    assert main(["validate", str(SAMPLES / "four_stations.json"), "--bogus"], stderr=StringIO()) == 2
    assert main(["teleport"]) == 2
    assert main([]) == 2
