"""Command-line entry point: ``activeris run|summarize|gen-spec``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments as ex


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="activeris",
                                description="Seeded simulation sweeps for active-RIS beamforming.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment spec (TOML)")
    run.add_argument("spec", help="path to the spec file")
    run.add_argument("--seed", type=int, help="override the spec seed")
    run.add_argument("--trials", type=int, help="override the trial count")
    run.add_argument("--workers", type=int, default=None,
                     help="worker processes (default: min(cpu count, 8))")
    run.add_argument("--out-dir", help="output directory (default: the spec's out_dir)")

    summ = sub.add_parser("summarize", help="per-point means and standard errors of a result CSV")
    summ.add_argument("csv", help="CSV written by `run`")

    gen = sub.add_parser("gen-spec", help="print a template spec")
    gen.add_argument("experiment", choices=sorted(ex.TEMPLATES))
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "gen-spec":
            sys.stdout.write(ex.template(args.experiment))
            return 0
        if args.command == "summarize":
            sys.stdout.write(ex.summarize(args.csv))
            return 0
        text = Path(args.spec).read_text()
        spec = ex.parse_spec(text, {"seed": args.seed, "trials": args.trials})
    except ex.SpecError as exc:
        where = ""
        if exc.line is not None:
            where = f" (line {exc.line}, column {exc.column})"
        print(f"error: {exc}{where}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    workers = args.workers if args.workers is not None else ex.default_workers()
    out_dir = args.out_dir if args.out_dir is not None else spec.out_dir
    manifest = ex.run_experiment(spec, out_dir, workers=workers, spec_text=text)
    for name, meta in manifest["outputs"].items():
        print(f"{Path(out_dir) / name}: {meta['rows']} rows")
    return 0


if __name__ == "__main__":
    sys.exit(main())
