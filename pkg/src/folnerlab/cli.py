"""Command-line entry point: ``folnerlab <command> <config.toml>``.

Exit codes: 0 when every asserted row passes, 1 when an asserted row fails,
2 on configuration or precondition errors.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from .commands import COMMANDS, FIGURES
from .config import load_config
from .errors import (
    ConfigError,
    FolnerLabError,
    NumericalError,
    PreconditionError,
    WindowExhaustedError,
    WindowOverflowError,
)
from .report import ReportEnvelope

HINTS = {
    ConfigError: "fix the named field in the configuration file",
    WindowExhaustedError: "lower filtration.depth, raise schedule.base, or use a group with "
                          "cheaper Folner sets (Z or Z2)",
    WindowOverflowError: "raise filtration.depth so the window covers the support of f, "
                         "or regenerate f inside the window",
    NumericalError: "the eigensolver did not converge; check the matrix entries for overflow",
    PreconditionError: "the inputs violate a stated precondition (for example f must be "
                       "positive semidefinite)",
}


def _hint(exc: Exception) -> str:
    for cls, hint in HINTS.items():
        if isinstance(exc, cls):
            return hint
    return "see the message above"


def run(command: str, config_path: str | Path, output: str | Path | None = None,
        quiet: bool = False) -> tuple[int, ReportEnvelope | None]:
    """Run one subcommand and write its outputs; returns ``(exit code, envelope)``."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"error: {exc}\nhint: {_hint(exc)}", file=sys.stderr)
        return 2, None
    if output is not None:
        cfg.output = Path(output)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            env = COMMANDS[command](cfg)
    except FolnerLabError as exc:
        env = ReportEnvelope(command, cfg.echo(), error=f"{type(exc).__name__}: {exc}")
        env.data = {"hint": _hint(exc)}
        print(f"error: {exc}\nhint: {_hint(exc)}", file=sys.stderr)
    figures = env.data.pop(FIGURES, {})
    paths = env.write(cfg.output)
    if figures:
        fig_dir = cfg.output / "figures"
        fig_dir.mkdir(parents=True, exist_ok=True)
        for name, text in sorted(figures.items()):
            (fig_dir / name).write_text(text)
    if not quiet:
        s = env.summary()
        status = env.to_dict(False)["status"]
        print(f"{command}: {status} ({s['passed']}/{s['asserted']} asserted rows pass, "
              f"{s['measured']} measured) -> {paths['report']}")
        for r in env.rows:
            if r.failed:
                print(f"  FAIL {r.name}: value {r.value} vs bound {r.bound}")
    return env.exit_code, env


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="folnerlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "tile": "multi-scale quasi-tiling of a window with exact clause checks",
        "partition": "quasi-partition of a domain into template translates",
        "filtration": "build and validate a regular filtered Folner sequence",
        "cz": "Calderon-Zygmund decomposition of a matrix-valued function",
        "verify": "difference-operator suite: local, L2, weak-(1,1), maximal, splitting",
        "ergodic": "convergence of ergodic averages for concrete actions",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("config", help="TOML configuration file")
        p.add_argument("--output", help="output directory (overrides the config)")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    code, _ = run(args.command, args.config, args.output, args.quiet)
    return code


if __name__ == "__main__":
    sys.exit(main())
