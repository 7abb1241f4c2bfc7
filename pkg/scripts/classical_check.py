"""Grid convergence against the closed-form fully conducting solution.

    python3 scripts/classical_check.py [--lam-sq 1.0] [--n 16 32 64 128 256]

Prints the max-norm solution error and observed order per refinement, and
the fold estimate of each grid with its a + b/n extrapolation.
"""
import argparse
import math

import numpy as np

from fkdisk import BoundarySpec, build_grid, classical_B, classical_solution, newton_solve
from fkdisk.continuation import fit_inverse_n, fold_estimate
from fkdisk.discretization import SolutionField


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--lam-sq", type=float, default=1.0)
    p.add_argument("--n", type=int, nargs="+", default=[16, 32, 64, 128, 256])
    p.add_argument("--skip-fold", action="store_true")
    args = p.parse_args()

    B = classical_B(args.lam_sq)
    _, profile = classical_solution(B)
    print(f"lambda^2={args.lam_sq}  B={B:.12f}  u(0)={2 * math.log1p(B):.10f}")
    prev = None
    for n in args.n:
        grid = build_grid(n, BoundarySpec.full())
        u = newton_solve(SolutionField.zeros(grid), math.sqrt(args.lam_sq))
        err = np.max(np.abs(u.values - profile(grid.rho_coords)[:, None]))
        order = "" if prev is None else f"  order {math.log(prev[1] / err) / math.log(n / prev[0]):.3f}"
        print(f"n={n:4d}  max error {err:.3e}{order}")
        prev = (n, err)

    if args.skip_fold:
        return
    ns = [n for n in args.n if n >= 32]
    values = []
    for n in ns:
        est = fold_estimate(n, BoundarySpec.full())
        values.append(est.lambda_cr_sq)
        print(f"n={n:4d}  fold lambda_cr^2={est.lambda_cr_sq:.8f}  ({len(est.trace.points)} points, fit rms {est.fit.rms_relative_residual:.1e})")
    if len(ns) >= 2:
        lin = fit_inverse_n(ns, values)
        print(f"a + b/n: a={lin.a:.8f} b={lin.b:.4f} residual {lin.relative_residual:.1e}  (exact: 2)")


if __name__ == "__main__":
    main()
