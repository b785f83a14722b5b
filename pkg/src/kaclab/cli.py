"""Command line: ``kaclab run <experiment> ...`` and ``kaclab report <dir>``."""
from __future__ import annotations

import argparse
import sys

from .records import ExperimentConfig, InvalidConfig, UsageError, read_config_file

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_REFUSED = 0, 1, 2, 3

_FLAGS = {"n": "n", "c1": "c1", "seed": "seed", "replicas": "num_replicas",
          "samples": "num_samples", "out": "out_dir", "workers": "workers"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error[usage]: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kaclab", description="Run and summarise Kac walk verification experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("experiment")
    r.add_argument("--config", help="INI file with an [experiment] section")
    r.add_argument("--n", type=int)
    r.add_argument("--c1", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--replicas", type=int)
    r.add_argument("--samples", type=int)
    r.add_argument("--out")
    r.add_argument("--workers", type=int)
    r.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="experiment-specific parameter (repeatable)")
    r.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE",
                   help="tolerance override (repeatable)")
    r.add_argument("--quiet", action="store_true")
    rep = sub.add_parser("report", help="summarise a directory of records")
    rep.add_argument("directory")
    rep.add_argument("--svg", action="store_true", help="also write SVG plots")
    sub.add_parser("list", help="list experiment names")
    return p


def _pairs(items, what) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise InvalidConfig(f"{what} {item!r} is not KEY=VALUE")
        out[key.strip()] = value.strip()
    return out


def config_from_args(args) -> ExperimentConfig:
    values: dict = {"tolerances": {}, "params": {}}
    if args.config:
        values.update(read_config_file(args.config))
    values["experiment"] = args.experiment
    for flag, name in _FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            values[name] = v
    values["params"].update(_pairs(args.param, "parameter"))
    try:
        values["tolerances"].update({k: float(v) for k, v in _pairs(args.tol, "tolerance").items()})
    except ValueError as exc:
        raise InvalidConfig(f"bad tolerance: {exc}") from None
    if values.get("seed") is None:
        raise InvalidConfig("a seed is mandatory (--seed or seed= in the config file)")
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


def _run(args) -> int:
    from .experiments import run_experiment

    record, _ = run_experiment(config_from_args(args))
    if not args.quiet:
        for rep in record.reports:
            print(rep.line())
        if record.status != "ok":
            print(f"status: {record.status}")
        if record.verdict == "refused":
            print(f"refused: {record.metrics.get('reason', '')}")
        print(f"verdict: {record.verdict}")
    return {"pass": EXIT_PASS, "fail": EXIT_FAIL, "refused": EXIT_REFUSED}[record.verdict]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "report":
            from .report import report

            return report(args.directory, svg=args.svg)
        from .experiments import REGISTRY

        print("\n".join(sorted(REGISTRY)))
        return EXIT_PASS
    except UsageError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
