# apps/network/management/commands/validate_network.py
import json

from django.core.management.base import BaseCommand

from apps.core.exceptions import NotStronglyConnected
from apps.network.services import check_strong_connectivity, complete, load_road_network, network_summary


class Command(BaseCommand):
    help = "Parse a road-network file, check strong connectivity and (optionally) complete it."

    def add_arguments(self, parser):
        parser.add_argument("network", help="Road-network JSON file")
        parser.add_argument("--step-minutes", type=float, default=None, help="Also build the complete network")
        parser.add_argument("--format", choices=["text", "json"], default="text")

    def handle(self, *args, **opts):
        net = load_road_network(opts["network"])
        connected = check_strong_connectivity(net)
        cn = complete(net, opts["step_minutes"]) if connected and opts["step_minutes"] else None

        if opts["format"] == "json":
            self.stdout.write(json.dumps(network_summary(net, cn), sort_keys=True))
        else:
            self.stdout.write(f"strongly connected: {str(connected).lower()}")
            self.stdout.write(f"nodes: {net.n}  arcs: {len(net.arcs)}")
            if cn is not None:
                self.stdout.write(f"complete links: {cn.m}  max T: {int(cn.T.max())} steps")

        if not connected:
            raise NotStronglyConnected(f"{opts['network']}: some ordered pair has no directed path.")
