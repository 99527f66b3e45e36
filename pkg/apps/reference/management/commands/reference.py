# apps/reference/management/commands/reference.py
import json
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand

from apps.demand.services import load_lambda
from apps.network.services import complete, load_road_network
from apps.reference.domain import COST_CHOICES, LINEAR
from apps.reference.services import reference_to_dict, solve_reference


class Command(BaseCommand):
    help = "Solve the equilibrium rebalancing program for a network and demand rates; print R and M_min."

    def add_arguments(self, parser):
        parser.add_argument("network", help="Road-network JSON file")
        parser.add_argument("--lambda", dest="lambda_file", required=True, help="Lambda JSON file")
        parser.add_argument("--cost", choices=[c for c, _ in COST_CHOICES], default=LINEAR)
        parser.add_argument("--step-minutes", type=float, default=None)
        parser.add_argument("--fleet", type=int, default=None, help="Fleet size used to split idle vehicles")
        parser.add_argument("--out", default=None, help="Also write the reference as JSON here")
        parser.add_argument("--format", choices=["text", "json"], default="text")

    def handle(self, *args, **opts):
        step = opts["step_minutes"] or settings.REBALANCE_STEP_MINUTES
        net = complete(load_road_network(opts["network"]), step)
        lam = load_lambda(opts["lambda_file"], zones=net.zones, step_minutes=step)
        ref = solve_reference(net, lam, opts["cost"], fleet_size=opts["fleet"])
        doc = reference_to_dict(ref, net)

        if opts["out"]:
            out = Path(opts["out"])
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(json.dumps(doc, indent=2), encoding="utf-8")

        if opts["format"] == "json":
            self.stdout.write(json.dumps(doc, sort_keys=True))
            return
        for (r, s), value in zip(net.links, ref.R):
            self.stdout.write(f"R[{r}->{s}] = {value:.6g}")
        self.stdout.write(f"rebalancing total = {ref.R.sum():.6g}")
        self.stdout.write(self.style.SUCCESS(f"M_min = {ref.min_fleet:.6g}"))
