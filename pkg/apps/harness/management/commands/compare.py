# apps/harness/management/commands/compare.py
import json
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from apps.harness.management.commands.simulate import add_override_arguments, overrides
from apps.harness.reports import emit_comparison, jsonable
from apps.harness.services import (
    compare,
    compare_over_seeds,
    load_experiment,
    persist_report,
    sweep_step_minutes,
)
from apps.mpc.domain import CONTROLLER_CHOICES


class Command(BaseCommand):
    help = "Paired comparison of controllers on one arrival stream (rows = metrics, columns = controllers)."

    def add_arguments(self, parser):
        parser.add_argument("configs", nargs="+", help="Experiment JSON files that differ only in controller")
        parser.add_argument(
            "--controllers", nargs="+", choices=[c for c, _ in CONTROLLER_CHOICES], default=None,
            help="Run these controllers on the first config instead",
        )
        add_override_arguments(parser)
        parser.add_argument("--seeds", nargs="+", type=int, default=None, help="Average over these seeds (each sets every seed of the run)")
        parser.add_argument("--sweep", nargs="+", type=float, default=None, help="Repeat for these step sizes (min)")
        parser.add_argument("--parallel", action="store_true", help="Fan runs out as Celery tasks")
        parser.add_argument("--out", default=None)
        parser.add_argument("--persist", action="store_true")
        parser.add_argument("--format", choices=["text", "json", "csv"], default="text")

    def handle(self, *args, **opts):
        if opts["seeds"] and opts["sweep"]:
            raise CommandError("--seeds and --sweep cannot be combined.")
        if opts["seeds"] and opts["persist"]:
            raise CommandError("--persist stores single comparisons; drop --seeds.")
        extra = overrides(opts)
        configs = [load_experiment(path, seed=opts["seed"], **extra) for path in opts["configs"]]
        if opts["controllers"]:
            configs = [configs[0].with_controller(c) for c in opts["controllers"]]

        tables = {}
        if opts["seeds"]:
            mean, per_seed = compare_over_seeds(configs, opts["seeds"], parallel=opts["parallel"])
            tables["mean"] = mean
            tables.update({f"seed{s}": t for s, t in per_seed.items()})
            if opts["out"]:
                out = Path(opts["out"])
                out.mkdir(parents=True, exist_ok=True)
                for key, table in tables.items():
                    table.to_csv(out / f"comparison_{key}.csv")
        elif opts["sweep"]:
            for minutes, (table, reports) in sweep_step_minutes(
                configs, seed=opts["seed"], values=opts["sweep"], parallel=opts["parallel"]
            ).items():
                tables[f"{minutes:g}min"] = table
                self._keep(reports, table, opts, f"{minutes:g}min")
        else:
            table, reports = compare(configs, seed=opts["seed"], parallel=opts["parallel"])
            tables["comparison"] = table
            self._keep(reports, table, opts, "")

        self._print(tables, opts["format"])

    def _keep(self, reports, table, opts, sub):
        if opts["out"]:
            emit_comparison(table, reports, f"{opts['out']}/{sub}" if sub else opts["out"])
        if opts["persist"]:
            for r in reports:
                persist_report(r, opts["out"] or "")

    def _print(self, tables, fmt):
        if fmt == "json":
            self.stdout.write(json.dumps({k: jsonable(t.to_dict()) for k, t in tables.items()}, sort_keys=True))
            return
        for key, table in tables.items():
            if fmt == "csv":
                self.stdout.write(f"# {key}")
                self.stdout.write(table.to_csv(), ending="")
            else:
                self.stdout.write(self.style.MIGRATE_HEADING(key))
                self.stdout.write(table.to_string(float_format=lambda v: f"{v:.4f}"))
