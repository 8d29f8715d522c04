"""Command-line benchmark harness.

Subcommands:
  convergence      error sweeps over (method, eps, h); CSV plus JSON summary
  single           one solve, full trajectory CSV
  order-conditions stiff order-condition residual report for a method

Grid values accept plain floats, powers like 2^-4, and fractions like 1/16.
A flat key=value config file can seed any convergence option; command-line
flags override file values.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from tsexp import bench
from tsexp.problems import parse_kv_file


def parse_grid_value(token: str) -> float:
    token = token.strip()
    if "^" in token:
        base, exp = token.split("^", 1)
        return float(base) ** float(exp)
    if "/" in token:
        num, den = token.split("/", 1)
        return float(num) / float(den)
    return float(token)


def parse_grid_list(text: str) -> tuple[float, ...]:
    return tuple(parse_grid_value(tok) for tok in text.split(",") if tok.strip())


def _convergence_config(args: argparse.Namespace) -> bench.StudyConfig:
    values: dict = {}
    if args.config:
        kv = parse_kv_file(args.config)
        if "problem" in kv:
            values["problem"] = kv["problem"]
        if "methods" in kv:
            values["methods"] = tuple(m.strip() for m in kv["methods"].split(",") if m.strip())
        if "h_list" in kv:
            values["h_list"] = parse_grid_list(kv["h_list"])
        if "eps_list" in kv:
            values["eps_list"] = parse_grid_list(kv["eps_list"])
        if "n_tau" in kv or "ntau" in kv:
            values["n_tau"] = int(kv.get("n_tau", kv.get("ntau")))
        if "t_end" in kv or "tend" in kv:
            values["t_end"] = parse_grid_value(kv.get("t_end", kv.get("tend")))
        if "init_order" in kv:
            values["init_order"] = int(kv["init_order"])
        if "ref_tol" in kv:
            values["ref_tol"] = float(kv["ref_tol"])
        if "out" in kv:
            values["out"] = kv["out"]
        if "jobs" in kv:
            values["jobs"] = int(kv["jobs"])
    if args.problem is not None:
        values["problem"] = args.problem
    if args.methods is not None:
        values["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.h_list is not None:
        values["h_list"] = parse_grid_list(args.h_list)
    if args.eps_list is not None:
        values["eps_list"] = parse_grid_list(args.eps_list)
    if args.ntau is not None:
        values["n_tau"] = args.ntau
    if args.tend is not None:
        values["t_end"] = args.tend
    if args.init_order is not None:
        values["init_order"] = args.init_order
    if args.ref_tol is not None:
        values["ref_tol"] = args.ref_tol
    if args.out is not None:
        values["out"] = args.out
    if args.jobs is not None:
        values["jobs"] = args.jobs
    return bench.StudyConfig(**values)


def _add_convergence_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", help="registered problem name or definition file")
    p.add_argument("--methods", help="comma-separated methods (eo2,io2,eo4,io4,io2-literal,boris,gauss4)")
    p.add_argument("--h-list", dest="h_list", help="comma-separated step sizes, e.g. 2^-1,2^-2")
    p.add_argument("--eps-list", dest="eps_list", help="comma-separated eps values")
    p.add_argument("--ntau", type=int, help="number of tau grid nodes (default 64)")
    p.add_argument("--tend", type=float, help="final time (default 1)")
    p.add_argument("--init-order", dest="init_order", type=int, help="initial-data order override")
    p.add_argument("--ref-tol", dest="ref_tol", type=float, help="reference self-validation tolerance")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--jobs", type=int, help="parallel workers for the run grid")
    p.add_argument("--config", help="flat key=value config file; flags override")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="tsexp", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("convergence", help="run an error sweep and emit CSV")
    _add_convergence_flags(conv)

    single = sub.add_parser("single", help="run one solve and dump the trajectory")
    single.add_argument("--problem", default="paper-2d")
    single.add_argument("--method", default="eo2")
    single.add_argument("--h", type=parse_grid_value, required=True)
    single.add_argument("--eps", type=parse_grid_value, help="stiffness override")
    single.add_argument("--ntau", type=int, default=64)
    single.add_argument("--tend", type=float, default=1.0)
    single.add_argument("--init-order", dest="init_order", type=int)
    single.add_argument("--out", help="trajectory CSV path (default: stdout)")

    cond = sub.add_parser("order-conditions", help="stiff order-condition residual report")
    cond.add_argument("--method", required=True)
    cond.add_argument("--out", help="write the report to a file instead of stdout")

    args = parser.parse_args(argv)

    if args.command == "convergence":
        config = _convergence_config(args)
        result = bench.run_convergence(config)
        csv_text = bench.records_to_csv(result.records)
        if config.out:
            Path(config.out).write_text(csv_text)
            summary_path = bench.write_summary(result, config.out)
            print(f"wrote {config.out} and {summary_path}")
        else:
            sys.stdout.write(csv_text)
        n_err = sum(1 for r in result.records if not r.ok)
        if n_err:
            print(f"{n_err} of {len(result.records)} runs recorded errors", file=sys.stderr)
        return 0

    if args.command == "single":
        traj = bench.run_single(
            args.problem, args.method, args.h, eps=args.eps, n_tau=args.ntau,
            t_end=args.tend, init_order=args.init_order,
        )
        text = bench.trajectory_to_csv(traj)
        if args.out:
            Path(args.out).write_text(text)
            print(f"wrote {args.out}")
        else:
            sys.stdout.write(text)
        return 0

    if args.command == "order-conditions":
        report = bench.report_order_conditions(args.method)
        if args.out:
            Path(args.out).write_text(report + "\n")
            print(f"wrote {args.out}")
        else:
            print(report)
        return 0

    return 1  # pragma: no cover


if __name__ == "__main__":
    raise SystemExit(main())
