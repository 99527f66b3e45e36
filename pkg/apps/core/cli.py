# apps/core/cli.py
"""
Single entry point over the management commands:

    python -m apps.core.cli simulate --config samples/campus_day.json --out runs/day
    python -m apps.core.cli compare a.json b.json --seeds 0 1 2 3 4
    python -m apps.core.cli reference samples/four_stations.json --lambda samples/balanced_lambda.json
    python -m apps.core.cli partition points.json --k 6
    python -m apps.core.cli validate samples/four_stations.json

Domain errors print a one-line JSON envelope on stderr and exit 1;
usage errors exit 2.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence, TextIO

from . import __version__
from .exceptions import RebalanceError

# cli name -> management command name
COMMANDS = {
    "simulate": "simulate",
    "compare": "compare",
    "reference": "reference",
    "partition": "partition",
    "validate": "validate_network",
    "dump-model": "dump_model",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rebalance", description="AMoD fleet rebalancing toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("args", nargs=argparse.REMAINDER, help="Arguments for the subcommand (see <command> --help)")
    return parser


def _envelope(kind: str, code: str, detail) -> str:
    return json.dumps({"error": {"type": kind, "code": code, "detail": detail}}, default=str)


def main(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    stderr = stderr or sys.stderr
    try:
        top = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "config.settings")
    import django
    from django.core.management import get_commands, load_command_class
    from django.core.management.base import CommandError

    django.setup()
    name = COMMANDS[top.command]
    command = load_command_class(get_commands()[name], name)
    # argparse prints usage and exits 2 on bad flags
    command._called_from_command_line = True
    parser = command.create_parser("rebalance", top.command)
    try:
        options = parser.parse_args(top.args)
    except SystemExit as exc:
        return int(exc.code or 0)

    cmd_options = vars(options)
    args = cmd_options.pop("args", ())
    cmd_options["skip_checks"] = True
    if stdout is not None:
        cmd_options["stdout"] = stdout
    cmd_options["stderr"] = stderr
    try:
        command.execute(*args, **cmd_options)
    except RebalanceError as exc:
        stderr.write(json.dumps(exc.as_dict(), default=str) + "\n")
        return 1
    except CommandError as exc:
        stderr.write(_envelope("CommandError", "usage", str(exc)) + "\n")
        return 2
    except OSError as exc:
        stderr.write(_envelope(type(exc).__name__, "io_error", str(exc)) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
