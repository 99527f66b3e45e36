# apps/network/serializers.py
"""
Road-network file:

    {
      "name": "four stations",
      "bidirectional": false,
      "nodes": [{"id": 1, "x": 0.0, "y": 0.0}, {"id": 2}],
      "arcs":  [{"from": 1, "to": 2, "minutes": 6.0, "miles": 1.2}]
    }

Points file (partition input):

    {"points": [{"x": 0.1, "y": 2.3, "weight": 4}]}
"""
from __future__ import annotations

from rest_framework import serializers

from apps.core.serializers import StrictSerializer


class NodeSerializer(StrictSerializer):
    id = serializers.IntegerField()
    x = serializers.FloatField(required=False)
    y = serializers.FloatField(required=False)

    def validate(self, attrs):
        if ("x" in attrs) != ("y" in attrs):
            raise serializers.ValidationError("Give both x and y, or neither.")
        return attrs


class ArcSerializer(StrictSerializer):
    minutes = serializers.FloatField()
    miles = serializers.FloatField()

    def get_fields(self):
        # "from" is a keyword, so these are declared here
        fields = super().get_fields()
        fields["from"] = serializers.IntegerField()
        fields["to"] = serializers.IntegerField()
        return fields

    def validate(self, attrs):
        if attrs["minutes"] <= 0:
            raise serializers.ValidationError({"minutes": "Must be positive."})
        if attrs["miles"] <= 0:
            raise serializers.ValidationError({"miles": "Must be positive."})
        if attrs["from"] == attrs["to"]:
            raise serializers.ValidationError("Self-loops are not allowed.")
        return attrs


class RoadNetworkFileSerializer(StrictSerializer):
    name = serializers.CharField(required=False, allow_blank=True, default="")
    bidirectional = serializers.BooleanField(required=False, default=False)
    nodes = NodeSerializer(many=True)
    arcs = ArcSerializer(many=True)

    def validate(self, attrs):
        ids = [n["id"] for n in attrs["nodes"]]
        if len(ids) < 2:
            raise serializers.ValidationError({"nodes": "At least two nodes are required."})
        if len(set(ids)) != len(ids):
            raise serializers.ValidationError({"nodes": "Node ids must be unique."})
        known = set(ids)
        pairs = set()
        for arc in attrs["arcs"]:
            if arc["from"] not in known or arc["to"] not in known:
                raise serializers.ValidationError({"arcs": f"Arc {arc['from']}->{arc['to']} uses an unknown node."})
            key = (arc["from"], arc["to"])
            directions = [key, key[::-1]] if attrs["bidirectional"] else [key]
            for d in directions:
                if d in pairs:
                    raise serializers.ValidationError({"arcs": f"Duplicate arc {d[0]}->{d[1]}."})
                pairs.add(d)
        return attrs


class PointSerializer(StrictSerializer):
    x = serializers.FloatField()
    y = serializers.FloatField()
    weight = serializers.FloatField(required=False, default=1.0)

    def validate_weight(self, value):
        if value <= 0:
            raise serializers.ValidationError("Must be positive.")
        return value


class PointsFileSerializer(StrictSerializer):
    points = PointSerializer(many=True)
