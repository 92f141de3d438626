"""Command-line entry point: ``superspill <subcommand> --manifest run.yaml``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from typing import Optional, Sequence

from .errors import ConfigError, SuperspillError
from .manifest import SCHEMA_DOC, bundled_manifest_path, load_manifest
from .pipeline import STAGE_ORDER, VALIDATION_EXIT, Pipeline, StageFailure, simulation_bundle

SUBCOMMANDS = ["validate", "simulate", "deflate", "impute", "classify", "tfp", "spillovers", "instruments",
               "regress", "decompose", "pipeline"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="superspill", description="Superstar spillover pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="run manifest (YAML); defaults to the bundled demo manifest")
    common.add_argument("--out", help="output directory, overriding the manifest")
    common.add_argument("--threads", type=int, default=1, help="worker threads for per-sector estimation")
    common.add_argument("--seed", type=int, help="override the manifest seed")
    common.add_argument("--stage", action="append", choices=STAGE_ORDER,
                        help="restrict the run to these stages and their prerequisites (repeatable)")
    common.add_argument("--gap-average", type=int, metavar="YEAR",
                        help="fill missing energy at YEAR with the mean of adjacent years")
    common.add_argument("--impute-capital", type=int, metavar="YEAR",
                        help="predict missing capital at YEAR from lagged inputs")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common], help=f"run the {name} stage" if name not in
                           ("validate", "pipeline") else None)
        if name == "validate":
            p.add_argument("--schema", action="store_true", help="print the manifest schema and exit")
    return parser


def _manifest(args):
    path = args.manifest or bundled_manifest_path()
    manifest = load_manifest(path).with_overrides(seed=args.seed, output_dir=args.out)
    impute = dict(manifest.stages.get("impute") or {})
    if args.gap_average is not None:
        impute["gap_average"] = {"year": args.gap_average, "variables": ["energy"]}
    if args.impute_capital is not None:
        impute["capital_regression"] = {"target_year": args.impute_capital, "by_sector": False}
    if impute != manifest.stages.get("impute"):
        manifest = dataclasses.replace(manifest, stages={**manifest.stages, "impute": impute})
    return manifest


def _print_summary(summary: dict) -> None:
    width = max(len(k) for k in summary)
    for key, value in summary.items():
        shown = f"{value:.4f}" if isinstance(value, float) else str(value)
        print(f"{key.ljust(width)}  {shown}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate" and args.schema:
        print(SCHEMA_DOC)
        return 0
    try:
        manifest = _manifest(args)
        manifest.validate()
    except ConfigError as exc:
        where = f" [{exc.field}]" if exc.field else ""
        print(f"invalid manifest{where}: {exc}", file=sys.stderr)
        return VALIDATION_EXIT
    if args.command == "validate":
        print(f"manifest ok: {manifest.path}")
        return 0
    if args.command == "simulate" and not args.stage:
        if manifest.simulation is None:
            print("manifest has no simulation section", file=sys.stderr)
            return VALIDATION_EXIT
        try:
            bundle = simulation_bundle(manifest.simulation, manifest.output_dir)
        except SuperspillError as exc:
            print(f"simulate failed: {exc}", file=sys.stderr)
            return 10
        _print_summary(bundle["summary"])
        return 0

    targets = args.stage or (STAGE_ORDER if args.command == "pipeline" else [args.command])
    runner = Pipeline(manifest, threads=args.threads)
    try:
        runner.run(targets)
    except StageFailure as exc:
        print(f"stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return exc.exit_code
    for rec in runner.log:
        print(f"{rec.stage:<12} {rec.status:<8} {rec.duration_s:7.2f}s  {', '.join(rec.outputs)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
