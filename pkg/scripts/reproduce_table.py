"""Run a sweep config and print lambda_cr^2 per case with the per-N power-law fits.

    python3 scripts/reproduce_table.py configs/table_n32.toml [--jobs 2] [--force]

Completed cases in the output directory are reused, so an interrupted run
can simply be restarted.
"""
import argparse
import logging
import math
from fractions import Fraction

from fkdisk.geometry import BoundarySpec
from fkdisk.sweep import SweepConfig, run_sweep


def strip_estimate(N, alpha):
    """Thin-strip homogenized critical value, a rough guide for large N."""
    ell = 2.0 / N * math.log(1.0 / math.sin(math.pi * alpha / 2))
    B = -2 * ell + math.sqrt(4 * ell * ell + 1)
    return 8 * B / (1 + B) ** 2 * math.exp(-4 * B * ell / (1 + B))


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)
    p.add_argument("--force", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    report = run_sweep(SweepConfig.load(args.config, output_dir=args.out, jobs=args.jobs), force=args.force)
    print(f"\n{'case':22s} {'status':10s} {'lambda_cr^2':>12s} {'strips':>9s} {'Lambda^2':>9s} {'1-rho*':>7s}")
    for cid, rec in sorted(report.records.items()):
        est, core = rec["estimate"], rec["core"]
        spec = BoundarySpec.from_record(rec["spec"])
        strips = f"{strip_estimate(spec.segments, float(spec.alpha)):9.5f}" if spec.alpha < 1 and spec.fold > 1 else " " * 9
        lam = f"{est['extrapolated_lambda_cr_sq']:12.6f}" if est else " " * 12
        core_s = f"{core['Lambda_sq']:9.5f} {core['boundary_layer_thickness']:7.4f}" if core else ""
        print(f"{cid:22s} {rec['status']:10s} {lam} {strips} {core_s}")
    print()
    for fit in report.scaling:
        lo, hi = (Fraction(x).limit_denominator(4096) for x in fit["alpha_range"])
        print(f"N={fit['N']:<4d} S={fit['S']:.3f} t={fit['t']:.3f}   alpha in [{lo}, {hi}], rms log residual {fit['relative_fit_residual']:.1e}")
    print(f"\noutputs in {report.output_dir}")
    return report.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
