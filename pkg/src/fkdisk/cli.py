"""Command line front end: ``fkdisk {solve,sweep,emit-figures,validate}``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .analysis import classical_B, classical_solution
from .continuation import (
    StepPolicy,
    extrapolate_in_n,
    fit_parabola,
    fold_estimate,
    newton_solve,
)
from .discretization import SolutionField, residual
from .geometry import BoundaryKind, BoundarySpec, build_grid
from .sweep import MissingData, SweepConfig, dump_json, emit_figures, run_sweep

log = logging.getLogger("fkdisk")


def _spec_from_args(args) -> BoundarySpec:
    return BoundarySpec(BoundaryKind(args.kind), args.alpha, args.N)


def cmd_solve(args) -> int:
    if args.config:
        config = SweepConfig.load(args.config, output_dir=args.out)
        if len(config.cases) != 1:
            print(f"solve expects exactly one case, config has {len(config.cases)}", file=sys.stderr)
            return 2
        case = config.cases[0]
        spec, n_list, mode, policy = case.spec, case.n_list, case.grid_mode, config.policy
    else:
        spec, n_list, mode, policy = _spec_from_args(args), args.n, args.grid_mode, StepPolicy()
    if len(n_list) == 1:
        res = fold_estimate(n_list[0], spec, policy, mode)
        record = {"spec": spec.to_record(), "n": res.n, "fold_fit": res.fit.to_record(), "grid": res.grid}
    else:
        record = extrapolate_in_n(spec, n_list, policy, mode).to_record()
    text = dump_json(record)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{spec.case_id}.json").write_text(text)
    print(text, end="")
    return 0


def cmd_sweep(args) -> int:
    config = SweepConfig.load(args.config, output_dir=args.out, jobs=args.jobs)
    report = run_sweep(config, force=args.force, dry_run=args.dry_run)
    if report is None:
        print(f"config OK: {len(config.cases)} cases, output -> {config.output_dir}")
        return 0
    for cid in sorted(report.records):
        rec = report.records[cid]
        est = rec["estimate"]
        value = f"{est['extrapolated_lambda_cr_sq']:.6f}" if est else "-"
        core = f"{rec['core']['Lambda_sq']:.4f}" if rec["core"] else "-"
        print(f"{cid:24s} {rec['status']:20s} lambda_cr^2={value:>10s} Lambda^2={core:>7s}")
    for fit in report.scaling:
        print(f"N={fit['N']:<4d} S={fit['S']:.4f} t={fit['t']:.4f} (residual {fit['relative_fit_residual']:.2g})")
    return report.exit_code


def cmd_emit(args) -> int:
    try:
        for path in emit_figures(args.out, surface_case=args.surface_case):
            print(path)
    except MissingData as exc:
        print(f"missing data: {exc}", file=sys.stderr)
        return 1
    return 0


def _check(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def cmd_validate(args) -> int:
    """Fast oracle checks against the closed-form fully conducting solution."""
    results = []
    lam_sq = 1.0
    B = classical_B(lam_sq)
    _, profile = classical_solution(B)
    errs = []
    for n in (16, 32, 64):
        grid = build_grid(n, BoundarySpec.full())
        exact = SolutionField.from_function(grid, lambda r, t: profile(r), math.sqrt(lam_sq))
        u = newton_solve(SolutionField.zeros(grid), math.sqrt(lam_sq))
        errs.append(np.max(np.abs(u.values - exact.values)))
    order = math.log2(errs[-2] / errs[-1])
    results.append(_check("profile error n=64", errs[-1] < 2e-3, f"{errs[-1]:.3e}"))
    results.append(_check("convergence order", 1.7 <= order <= 2.3, f"{order:.3f}"))

    grid = build_grid(32, BoundarySpec.full())
    exact = SolutionField.from_function(grid, lambda r, t: profile(r), math.sqrt(lam_sq))
    # the wall ring carries an O(1) consistency error of the linear ghost; only the interior is O(h^2)
    F = residual(exact).reshape(grid.shape)
    res = np.max(np.abs(F[:-1]))
    results.append(_check("classical profile interior residual n=32", res < 5e-3, f"{res:.3e}"))

    s = np.linspace(1.0, 1.35, 10)
    fit = fit_parabola(2.0 - 0.5 * (s - 1.4) ** 2, s)
    results.append(
        _check("synthetic fold fit", abs(fit.lambda_cr_sq - 2) < 1e-10 and abs(fit.u0 - 1.4) < 1e-9,
               f"lambda_cr^2={fit.lambda_cr_sq:.12f} u0={fit.u0:.10f}")
    )

    est = extrapolate_in_n(BoundarySpec.full(), args.n)
    results.append(
        _check(f"fully conducting fold, n={list(args.n)}", abs(est.extrapolated_lambda_cr_sq - 2) < 1e-2,
               f"a={est.extrapolated_lambda_cr_sq:.6f}")
    )
    return 0 if all(results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fkdisk", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="critical parameter for a single case")
    s.add_argument("--config", type=Path)
    s.add_argument("--out", type=Path)
    s.add_argument("--kind", default="Periodic", choices=[k.value for k in BoundaryKind])
    s.add_argument("--N", type=int, default=1)
    s.add_argument("--alpha", default="1")
    s.add_argument("--n", type=int, nargs="+", default=[64, 128, 256])
    s.add_argument("--grid-mode", choices=["full", "sector", "sector-graded"])
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sweep", help="run all cases of a config file")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--out", type=Path)
    s.add_argument("--jobs", type=int)
    s.add_argument("--force", action="store_true", help="recompute cases that already have records")
    s.add_argument("--dry-run", action="store_true", help="validate the config and write nothing")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("emit-figures", help="(re)write figure data from a sweep directory")
    s.add_argument("--out", type=Path, required=True, help="sweep output directory")
    s.add_argument("--surface-case")
    s.set_defaults(func=cmd_emit)

    s = sub.add_parser("validate", help="oracle checks against the classical solution")
    s.add_argument("--n", type=int, nargs="+", default=[32, 64, 128])
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
