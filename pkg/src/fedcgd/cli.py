"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 bad data or config. JSON goes to
stdout, diagnostics to stderr. Device indices are 0-based everywhere.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datagen as dg
from . import experiment as ex
from . import schedulers as sch

OUTPUT_ENV = "FEDCGD_OUTPUT_DIR"

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for data errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _device_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("device counts must be positive")
    return values


def _solver_name(text: str) -> str:
    name = sch.SOLVER_ALIASES.get(text, text)
    if name not in sch.SOLVERS:
        choices = ", ".join(sorted({*sch.SOLVERS, *sch.SOLVER_ALIASES}))
        raise argparse.ArgumentTypeError(f"unknown solver {text!r} (choose from {choices})")
    return name


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedcgd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="schedule one serialized instance")
    s.add_argument("--instance", required=True, type=Path)
    s.add_argument("--solver", required=True, type=_solver_name)
    s.add_argument("--seed", type=int, default=0, help="random start for cd")
    s.add_argument("--no-early-exit", action="store_true", help="fscd: examine every size")

    b = sub.add_parser("bench-solvers", help="compare heuristics against the exact oracle")
    b.add_argument("--devices", type=_device_list, default=[8, 16])
    b.add_argument("--instances", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--alpha", type=float, default=ex.BenchConfig.alpha)
    b.add_argument("--sigma", type=float, default=ex.BenchConfig.sigma)
    b.add_argument("--out", type=Path, help=f"report path (default: ${OUTPUT_ENV}/bench.json, else stdout)")

    t = sub.add_parser("train", help="run a training experiment")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--out", type=Path, help=f"output directory (default: config, then ${OUTPUT_ENV})")
    t.add_argument("--solver", help="override solver.name")
    t.add_argument("--g-mode", choices=("scalar", "per-class"), help="override solver.g_mode")
    t.add_argument("--seeds", type=_device_list, help="override seeds, e.g. 0,1,2")
    t.add_argument("--workers", type=int)

    g = sub.add_parser("gen-data", help="write the partitioned synthetic dataset")
    g.add_argument("--config", required=True, type=Path)
    g.add_argument("--out", type=Path, help=f"output directory (default: ${OUTPUT_ENV})")
    g.add_argument("--seed", type=int, help="default: first seed in the config")
    return p


def _env_dir() -> Path | None:
    value = os.environ.get(OUTPUT_ENV)
    return Path(value) if value else None


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, indent=2, default=float)
    sys.stdout.write("\n")


def cmd_solve(args) -> int:
    inst = sch.load_instance(args.instance)
    if args.solver == "cd":
        report = sch.cd_schedule(inst, np.random.default_rng(args.seed))
    elif args.solver == "fscd":
        report = sch.fscd_schedule(inst, early_exit=not args.no_early_exit)
    else:
        report = sch.SOLVERS[args.solver](inst)
    _emit(report.to_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.instances < 1:
        raise UsageError("--instances must be >= 1")
    cfg = ex.BenchConfig(alpha=args.alpha, sigma=args.sigma)
    report = ex.bench_solvers(args.devices, args.instances, args.seed, cfg).to_json()
    report["seed"] = args.seed
    out = args.out
    if out is None and _env_dir() is not None:
        out = _env_dir() / "bench.json"
    if out is None:
        _emit(report)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report, indent=2) + "\n")
        print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = ex.ExperimentConfig.load(args.config)
    if args.solver or args.g_mode:
        cfg.solver = replace(
            cfg.solver, name=args.solver or cfg.solver.name, g_mode=args.g_mode or cfg.solver.g_mode
        )
    if args.seeds:
        cfg.seeds = args.seeds
    if args.workers:
        cfg.workers = args.workers
    out = args.out or (Path(cfg.output) if cfg.output else None) or _env_dir()
    result = ex.run_experiment(cfg, out)
    summary = {k: v for k, v in result.summary.items() if k != "config"}
    summary["output"] = str(out) if out else None
    _emit(summary)
    return EXIT_OK


def _write_dataset(path: Path, data: dg.Dataset) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label", *(f"x{i}" for i in range(data.features.shape[1]))])
        for i, (x, y) in enumerate(zip(data.features, data.labels)):
            w.writerow([i, int(y), *(repr(float(v)) for v in x)])


def cmd_gen_data(args) -> int:
    cfg = ex.ExperimentConfig.load(args.config)
    out = args.out or _env_dir()
    if out is None:
        raise UsageError(f"gen-data needs --out or ${OUTPUT_ENV}")
    seed = cfg.seeds[0] if args.seed is None else args.seed
    _, train, test, devices = ex.build_data(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    _write_dataset(out / "train.csv", train)
    _write_dataset(out / "test.csv", test)
    manifest = {
        "seed": seed,
        "num_classes": train.num_classes,
        "global_dist": train.distribution().tolist(),
        "reused_samples": dg.reused_samples(devices),
        "devices": [
            {"device": v, "size": d.size, "label_dist": d.label_dist.tolist(),
             "indices": d.indices.tolist()}
            for v, d in enumerate(devices)
        ],
        "data": cfg.to_dict()["data"],
        "fleet": cfg.to_dict()["fleet"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    _emit({"output": str(out), "devices": len(devices), "train": len(train), "test": len(test)})
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "bench-solvers": cmd_bench,
    "train": cmd_train,
    "gen-data": cmd_gen_data,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"fedcgd: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
