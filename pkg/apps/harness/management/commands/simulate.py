# apps/harness/management/commands/simulate.py
import json

from django.core.management.base import BaseCommand

from apps.harness.reports import emit, json_default, series_frame
from apps.harness.services import load_experiment, persist_report, run
from apps.mpc.domain import CONTROLLER_CHOICES, TERMINAL_CHOICES


def add_override_arguments(parser):
    parser.add_argument("--seed", type=int, default=None, help="Override every seed: demand s, rounding s + 1, perturbation s + 2")
    parser.add_argument("--step-minutes", type=float, default=None)
    parser.add_argument("--horizon", type=int, default=None)
    parser.add_argument("--fleet", type=int, default=None, help="Fleet size")
    parser.add_argument("--perturb", type=float, default=None, help="Travel-time perturbation magnitude")
    parser.add_argument("--terminal", choices=[t for t, _ in TERMINAL_CHOICES], default=None)


def overrides(opts) -> dict:
    return {
        "step_minutes": opts["step_minutes"],
        "horizon": opts["horizon"],
        "fleet_size": opts["fleet"],
        "perturbation": opts["perturb"],
        "terminal_mode": opts["terminal"],
    }


class Command(BaseCommand):
    help = "Run one closed-loop experiment and report waiting and empty-distance metrics."

    def add_arguments(self, parser):
        parser.add_argument("--config", required=True, help="Experiment JSON file")
        parser.add_argument("--out", default=None, help="Write series, summary and plots into this folder")
        parser.add_argument("--controller", choices=[c for c, _ in CONTROLLER_CHOICES], default=None)
        add_override_arguments(parser)
        parser.add_argument("--format", choices=["text", "json", "csv"], default="text")
        parser.add_argument("--persist", action="store_true", help="Store the run in the database")

    def handle(self, *args, **opts):
        config = load_experiment(
            opts["config"], controller=opts["controller"], seed=opts["seed"], **overrides(opts)
        )
        report = run(config)
        if opts["out"]:
            emit(report, opts["out"])
        if opts["persist"]:
            row = persist_report(report, opts["out"] or "")
            self.stderr.write(f"stored run #{row.pk}")

        if opts["format"] == "json":
            self.stdout.write(json.dumps(report.summary, sort_keys=True, default=json_default))
            return
        if opts["format"] == "csv":
            self.stdout.write(series_frame(report).to_csv(index=False), ending="")
            return
        s = report.summary
        self.stdout.write(f"controller          {s['controller']}")
        self.stdout.write(f"steps               {s['steps']} x {s['step_minutes']:g} min")
        self.stdout.write(f"requests            {s['requests']} ({s['boarded']} boarded, {s['censored']} waiting at end)")
        self.stdout.write(f"avg queue length    {s['avg_queue_length']:.4f}")
        self.stdout.write(f"avg wait (min)      {s['avg_wait_minutes']:.4f}")
        self.stdout.write(f"empty distance (mi) {s['total_empty_miles']:.1f}")
        self.stdout.write(f"arrival hash        {report.arrival_hash[:16]}")
        self.stdout.write(self.style.SUCCESS("done"))
