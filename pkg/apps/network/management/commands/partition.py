# apps/network/management/commands/partition.py
import json
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from apps.network.services import load_points, partition_zones, road_network_from_partition


class Command(BaseCommand):
    help = "Partition demand points into k zones (weighted Lloyd) and optionally write the zone road network."

    def add_arguments(self, parser):
        parser.add_argument("points", help="Points JSON file")
        parser.add_argument("--k", type=int, required=True, help="Number of zones")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--max-iters", type=int, default=100)
        parser.add_argument("--speed-mph", type=float, default=15.0)
        parser.add_argument("--out", default=None, help="Write a road-network JSON between zone centers")
        parser.add_argument("--format", choices=["text", "json"], default="text")

    def handle(self, *args, **opts):
        if opts["max_iters"] < 1:
            raise CommandError("--max-iters must be at least 1")
        points, weights = load_points(opts["points"])
        part = partition_zones(points, opts["k"], max_iters=opts["max_iters"], seed=opts["seed"], weights=weights)

        if opts["out"]:
            net = road_network_from_partition(part, speed_mph=opts["speed_mph"], name=Path(opts["points"]).stem)
            doc = {
                "name": net.name,
                "nodes": [{"id": z, "x": net.coordinates[z][0], "y": net.coordinates[z][1]} for z in net.nodes],
                "arcs": [
                    {"from": a.origin, "to": a.dest, "minutes": round(a.minutes, 6), "miles": round(a.miles, 6)}
                    for a in net.arcs
                ],
            }
            out = Path(opts["out"])
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(json.dumps(doc, indent=2), encoding="utf-8")

        result = {
            "k": part.k,
            "iterations": part.iterations,
            "objective": part.objective,
            "centers": part.centers.round(6).tolist(),
            "zone_sizes": part.zone_sizes().tolist(),
            "assignment": part.assignment.tolist(),
        }
        if opts["format"] == "json":
            self.stdout.write(json.dumps(result, sort_keys=True))
            return
        for z, (c, size) in enumerate(zip(result["centers"], result["zone_sizes"]), start=1):
            self.stdout.write(f"zone {z}: center=({c[0]:.3f}, {c[1]:.3f}) points={size}")
        self.stdout.write(self.style.SUCCESS(f"{part.k} zones, {part.iterations} iteration(s), objective {part.objective:.4f}"))
