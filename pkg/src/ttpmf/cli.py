"""Command-line interface: filter comparison, dimension sweep, self test.

Exit codes: 0 on success, 1 when any filter fails (or the self test does),
2 on configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from ttpmf.bench import (
    ConfigError,
    RunConfig,
    RunReport,
    emit_csv,
    load_config,
    run_compare,
    run_scaling,
)
from ttpmf.selftest import run_selftest


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttpmf",
        description=(
            "Grid-based Bayesian point-mass filters with tensor-train "
            "compression: benchmark runner"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    compare = sub.add_parser(
        "compare", help="run the configured filters on one scenario"
    )
    compare.add_argument("--config", required=True, help="YAML configuration file")
    compare.add_argument("--out", help="output directory (overrides config)")
    compare.add_argument("--runs", type=int, help="Monte Carlo run count override")
    compare.add_argument(
        "--filters", help="comma-separated filter list override (e.g. dense,tt)"
    )
    compare.add_argument("--seed", type=int, help="master seed override")

    scaling = sub.add_parser(
        "scaling", help="sweep the state dimension on the synthetic family"
    )
    scaling.add_argument("--config", required=True, help="YAML configuration file")
    scaling.add_argument(
        "--dims", default="2,3,4,5", help="comma-separated dimensions (default 2,3,4,5)"
    )
    scaling.add_argument("--out", help="output directory (overrides config)")

    sub.add_parser("selftest", help="run the dense-equivalence suite")
    return parser


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates: dict = {}
    if getattr(args, "out", None):
        updates["out_dir"] = args.out
    if getattr(args, "runs", None) is not None:
        updates["runs"] = args.runs
    if getattr(args, "seed", None) is not None:
        updates["master_seed"] = args.seed
    if getattr(args, "filters", None):
        updates["filters"] = tuple(
            f.strip() for f in args.filters.split(",") if f.strip()
        )
    return replace(cfg, **updates) if updates else cfg


def _parse_dims(text: str) -> list[int]:
    try:
        dims = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"invalid --dims value {text!r}") from None
    if not dims:
        raise ConfigError("--dims must list at least one dimension")
    return dims


def _print_report(report: RunReport) -> None:
    print(f"scenario {report.scenario}: {report.runs} runs x {report.k_f} steps")
    for r in report.rows:
        if r.skipped:
            print(f"  {r.name:<6} d={r.dim}  skipped ({r.skipped})")
            continue
        if r.failure:
            print(f"  {r.name:<6} d={r.dim}  FAILED: {r.failure}")
            continue
        rmse = " ".join(f"{v:.4f}" for v in r.rmse)
        rel = "baseline" if r.rel_diff_pct == 0.0 else (
            f"rel-diff {r.rel_diff_pct:.4f}%" if r.rel_diff_pct is not None else ""
        )
        print(
            f"  {r.name:<6} d={r.dim}  rmse [{rmse}]  {rel}  "
            f"{r.ms_per_step:.1f} ms/step  tpm {r.bytes_tpm} B  pmd {r.bytes_pmd} B"
        )


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "selftest":
        report = run_selftest()
        print("\n".join(report.lines()))
        return 0 if report.passed else 1

    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "compare":
            report = run_compare(cfg)
        else:
            report = RunReport.merge(run_scaling(cfg, _parse_dims(args.dims)))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    paths = emit_csv(report, cfg.out_dir)
    _print_report(report)
    print("wrote " + ", ".join(str(p) for p in paths))
    for row in report.failures:
        print(f"filter {row.name} (d={row.dim}) failed: {row.failure}", file=sys.stderr)
    return 1 if report.failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
