# apps/dynamics/management/commands/dump_model.py
from django.conf import settings
from django.core.management.base import BaseCommand

from apps.dynamics.services import build_lti, conservation_residual, dump_matrices
from apps.network.services import complete, load_road_network


class Command(BaseCommand):
    help = "Write the A, B, L matrices of the lag model for a road network as row-major text."

    def add_arguments(self, parser):
        parser.add_argument("network", help="Road-network JSON file")
        parser.add_argument("--out", required=True, help="Output directory")
        parser.add_argument("--step-minutes", type=float, default=None)

    def handle(self, *args, **opts):
        step = opts["step_minutes"] or settings.REBALANCE_STEP_MINUTES
        model = build_lti(complete(load_road_network(opts["network"]), step))
        paths = dump_matrices(model, opts["out"])
        self.stdout.write(f"state dim {model.layout.nx}, input dim {model.layout.nu}")
        self.stdout.write(f"conservation residual {conservation_residual(model):.3e}")
        for p in paths:
            self.stdout.write(self.style.SUCCESS(f"wrote {p}"))
