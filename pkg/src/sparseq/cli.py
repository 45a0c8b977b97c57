"""``sparseq`` command line.

Every subcommand takes the experiment flags below or a JSON ``--config``
file (flags given explicitly override the file).  Results go to ``--out``
as ``rows.csv`` and ``summary.txt``; the exit code is 0 iff every check in
the summary passed, 1 if a check failed and 2 on invalid parameters.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ParameterError
from .experiments import COMMANDS, FAMILIES, STRATEGIES, ExperimentConfig, config_dict, run

log = logging.getLogger("sparseq")

_FLAGS = [
    ("--family", dict(choices=FAMILIES)),
    ("--d", dict(type=int)),
    ("--k", dict(type=int)),
    ("--H", dict(type=int, dest="H")),
    ("--T", dict(type=int, dest="T")),
    ("--n", dict(type=int, help="number of arms (bandit family)")),
    ("--eps", dict(type=float, help="misspecification / reward scale")),
    ("--branching", dict(type=int)),
    ("--transition-noise", dict(type=float, dest="transition_noise")),
    ("--stochastic-rewards", dict(action="store_const", const=True, dest="stochastic_rewards")),
    ("--eps-net", dict(type=float, dest="eps_net")),
    ("--eps-stat", dict(type=float, dest="eps_stat")),
    ("--delta", dict(type=float)),
    ("--m", dict(type=int, help="override the trajectories-per-dataset formula")),
    ("--trials", dict(type=int)),
    ("--seed", dict(type=int)),
    ("--strategies", dict(nargs="+", choices=STRATEGIES)),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparseq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON file with experiment fields")
        p.add_argument("--out", type=Path, help="output directory")
        for flag, kw in _FLAGS:
            p.add_argument(flag, default=None, **kw)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    doc = {}
    if args.config is not None:
        doc = json.loads(args.config.read_text())
        doc.pop("command", None)
    for flag, kw in _FLAGS:
        key = kw.get("dest", flag.lstrip("-").replace("-", "_"))
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
    if args.out is not None:
        doc["out"] = str(args.out)
    return ExperimentConfig.from_dict({"command": args.command, **doc})


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = config_from_args(args).validate()
    except (ParameterError, TypeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    result = run(config)
    if config.out:
        out = result.write(config.out)
        (out / "config.json").write_text(json.dumps(config_dict(config), indent=2) + "\n")
        log.info("wrote %s", out)
    sys.stdout.write(result.summary_text())
    print("PASS" if result.passed else "FAIL")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
