"""Independent reference values used by the acceptance tests."""
import math


def homogenized_lambda_cr_sq(N: int, alpha: float) -> float:
    """Critical lam^2 for many thin conducting strips, from homogenization.

    For large N the striped wall acts like a Robin condition
    ``u + ell du/drho = 0`` with slip length
    ``ell = (2/N) ln(1 / sin(pi alpha / 2))`` (classical mixed-strip
    result).  The Robin problem on the disk has the closed-form fold
    ``lam^2 = 8B/(1+B)^2 exp(-4 B ell/(1+B))`` with ``B`` the positive root of
    ``B^2 + 4 ell B - 1 = 0``.  Accurate when the segment is short compared
    to the radius; it ignores the finite wall-layer curvature.
    """
    ell = 2.0 / N * math.log(1.0 / math.sin(math.pi * alpha / 2))
    B = -2 * ell + math.sqrt(4 * ell * ell + 1)
    return 8 * B / (1 + B) ** 2 * math.exp(-4 * B * ell / (1 + B))


def robin_fold_bruteforce(ell: float, samples: int = 200_001) -> float:
    """Max over B of the Robin-problem lambda^2, by dense sampling (cross-check)."""
    best = 0.0
    for k in range(1, samples):
        B = 3.0 * k / samples
        lam_sq = 8 * B / (1 + B) ** 2 * math.exp(-4 * B * ell / (1 + B))
        best = max(best, lam_sq)
    return best
