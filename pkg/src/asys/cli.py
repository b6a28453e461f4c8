"""Command line entry point: ``asys run | compare | bound-check``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (
    ExperimentConfig,
    compare_runs,
    load_report,
    run_bound_check,
    run_experiment,
    write_comparison,
)


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["output.dir"] = args.out
    if getattr(args, "no_asys", False):
        overrides["asys.enabled"] = False
    return cfg.replace(**overrides) if overrides else cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    if cfg.output_dir is None:
        raise ValueError("no output directory: pass --out or set output.dir")
    report = run_experiment(cfg)
    s = report.summary()
    print(f"{s['label']}: overall AUC {s['overall_auc']}, {s['n_chunks']} chunks -> {cfg.output_dir}")
    return 0


def cmd_compare(args) -> int:
    reports = [load_report(p) for p in args.reports]
    labels = [r.label or Path(p).name for r, p in zip(reports, args.reports)]
    cmp = compare_runs(reports, labels)
    write_comparison(cmp, args.out)
    print(cmp.to_text())
    return 0


def cmd_bound_check(args) -> int:
    cfg = _load(args)
    res = run_bound_check(cfg)
    print(f"bound holds in {res['n_holds']}/{res['n_configs']} configurations (n_mc={res['n_mc']})")
    if cfg.output_dir is not None:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        (cfg.output_dir / "bound_check.json").write_text(json.dumps(res, indent=2) + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asys", description="Drift-aware ensemble experiments on chunked streams.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one prequential experiment")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", type=Path)
    r.add_argument("--no-asys", action="store_true", help="train every learner at every step")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare persisted runs (first one is the reference)")
    c.add_argument("reports", nargs="+", type=Path)
    c.add_argument("--out", required=True, type=Path)
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("bound-check", help="Monte-Carlo check of the transfer error bound")
    b.add_argument("--config", required=True, type=Path)
    b.add_argument("--seed", type=int)
    b.add_argument("--out", type=Path)
    b.set_defaults(func=cmd_bound_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "compare" and len(args.reports) < 2:
        print("asys: error: compare needs at least two reports", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"asys: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
