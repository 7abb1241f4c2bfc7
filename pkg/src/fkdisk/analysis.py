"""Post-processing of near-critical solutions and critical estimates."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .discretization import SolutionField

CORE_THRESHOLD = 1e-4


class NoCore(RuntimeError):
    pass


class InsufficientRange(ValueError):
    pass


class Supercritical(ValueError):
    pass


# ---------------------------------------------------------------------------
# axisymmetric core


@dataclass(frozen=True)
class CoreAnalysis:
    rho_star: float
    u_star: float
    Lambda_sq: float
    angular_variation_at_rho_star: float
    lambda_sq: float
    core_index: int
    threshold: float = CORE_THRESHOLD

    @property
    def boundary_layer(self) -> float:
        return 1.0 - self.rho_star

    def to_record(self) -> dict:
        return asdict(self)


def angular_variation(field: SolutionField) -> np.ndarray:
    """``max_theta u - min_theta u`` on every radial ring."""
    return field.values.max(axis=1) - field.values.min(axis=1)


def analyze_core(field: SolutionField, lambda_sq: float | None = None, threshold: float = CORE_THRESHOLD) -> CoreAnalysis:
    """Locate the axisymmetric core ``0 <= rho <= rho*`` of ``field``.

    ``rho*`` is the outermost ring such that it and every ring inside it vary
    by less than ``threshold`` in theta.  ``Lambda^2 = lam^2 rho*^2 exp(u*)``
    uses ``lambda_sq`` when given (e.g. an extrapolated critical value) and
    the field's own parameter otherwise.
    """
    var = angular_variation(field)
    bad = np.flatnonzero(var >= threshold)
    if bad.size and bad[0] == 0:
        raise NoCore(f"innermost ring varies by {var[0]:.3g} >= {threshold:g}")
    k = field.grid.n_r - 1 if bad.size == 0 else int(bad[0]) - 1
    ring = field.values[k]
    u_star = 0.5 * (ring.max() + ring.min())
    rho_star = float(field.grid.rho_coords[k])
    lam_sq = field.lam_sq if lambda_sq is None else float(lambda_sq)
    return CoreAnalysis(
        rho_star=rho_star,
        u_star=float(u_star),
        Lambda_sq=float(lam_sq * rho_star**2 * math.exp(u_star)),
        angular_variation_at_rho_star=float(var[k]),
        lambda_sq=lam_sq,
        core_index=k,
        threshold=threshold,
    )


def boundary_layer_thickness(field: SolutionField, threshold: float = CORE_THRESHOLD) -> float:
    return 1.0 - analyze_core(field, threshold=threshold).rho_star


def core_profile(field: SolutionField, core: CoreAnalysis) -> tuple[np.ndarray, np.ndarray]:
    """Angle-averaged core profile shifted and rescaled: ``(R, v)`` with
    ``R = rho / rho*`` and ``v = u - u*``."""
    k = core.core_index
    R = field.grid.rho_coords[: k + 1] / core.rho_star
    v = field.values[: k + 1].mean(axis=1) - core.u_star
    return R, v


def core_deviation(field: SolutionField, core: CoreAnalysis | None = None, n: int = 4096) -> float:
    """Max difference between the rescaled 2D core and the 1D radial solve.

    The 1D problem is posed with the field's own ``lam``, which is the
    parameter the 2D core actually satisfies.
    """
    core = core or analyze_core(field)
    lam_sq_core = field.lam_sq * core.rho_star**2 * math.exp(core.u_star)
    R, v = core_profile(field, core)
    ref = solve_radial(lam_sq_core, n=n)
    return float(np.max(np.abs(v - ref.v_at(R))))


# ---------------------------------------------------------------------------
# scaling law


@dataclass(frozen=True)
class ScalingFit:
    N: int
    S: float
    t: float
    alpha_range: tuple
    relative_fit_residual: float
    points: int

    def predict(self, alpha):
        return self.S * np.asarray(alpha, dtype=float) ** self.t

    def to_record(self) -> dict:
        return {
            "N": self.N,
            "S": self.S,
            "t": self.t,
            "alpha_range": list(self.alpha_range),
            "relative_fit_residual": self.relative_fit_residual,
            "points": self.points,
        }


def fit_scaling_law(estimates, N: int) -> ScalingFit:
    """Fit ``lam_cr^2 = S alpha^t`` by least squares in log-log coordinates.

    ``estimates`` is a sequence of ``(alpha, lam_cr_sq)``; at least four
    points spanning a decade in alpha are required.
    """
    data = np.array([(float(a), float(v)) for a, v in estimates])
    if len(data) < 4:
        raise InsufficientRange(f"need at least 4 estimates, got {len(data)}")
    lo, hi = data[:, 0].min(), data[:, 0].max()
    if hi / lo < 10.0 * (1 - 1e-12):
        raise InsufficientRange(f"alpha spans {lo:.4g}..{hi:.4g}, less than a decade")
    x, y = np.log(data[:, 0]), np.log(data[:, 1])
    t, lnS = np.polyfit(x, y, 1)
    res = y - (lnS + t * x)
    return ScalingFit(
        N=int(N),
        S=float(math.exp(lnS)),
        t=float(t),
        alpha_range=(float(lo), float(hi)),
        relative_fit_residual=float(np.sqrt(np.mean(res**2))),
        points=len(data),
    )


# ---------------------------------------------------------------------------
# classical radial problem


def classical_solution(B: float):
    """Closed-form fully conducting solution.

    Returns ``(lambda_sq, profile)`` with ``lambda_sq = 8B/(1+B)^2`` and
    ``profile(rho) = ln((1+B)^2 / (1+B rho^2)^2)``.  ``B < 1`` is the lower
    (stable) branch, ``B = 1`` the fold, ``B > 1`` the upper branch.
    """
    if B <= 0:
        raise ValueError("B must be positive")
    lam_sq = 8.0 * B / (1.0 + B) ** 2

    def profile(rho):
        rho = np.asarray(rho, dtype=float)
        return 2.0 * np.log1p(B) - 2.0 * np.log1p(B * rho * rho)

    return lam_sq, profile


def classical_B(lambda_sq: float) -> float:
    """Lower-branch ``B`` with ``8B/(1+B)^2 = lambda_sq`` (0 < lambda_sq <= 2)."""
    if not 0 < lambda_sq <= 2:
        raise ValueError("lambda_sq must lie in (0, 2]")
    disc = max(4.0 - 2.0 * lambda_sq, 0.0)
    # small root of lambda_sq B^2 + (2 lambda_sq - 8) B + lambda_sq = 0, cancellation-free
    return lambda_sq / ((4.0 - lambda_sq) + 2.0 * math.sqrt(disc))


@dataclass(frozen=True)
class RadialProfile:
    """Solution ``v(R)`` of the radial problem on cell centres ``R``."""

    R: np.ndarray
    v: np.ndarray
    Lambda_sq: float
    boundary_value: float = 0.0
    newton_iters: int = 0

    @property
    def u(self) -> np.ndarray:
        return self.boundary_value + self.v

    def v_at(self, R) -> np.ndarray:
        # mirror through the origin and pin v(1) = 0 so the spline is even and exact at the wall
        x = np.concatenate([-self.R[::-1], self.R, [1.0]])
        y = np.concatenate([self.v[::-1], self.v, [0.0]])
        return CubicSpline(x, y)(np.asarray(R, dtype=float))


def _radial_operator(n: int):
    """Cell centres, face conductances and volumes of the 1D problem."""
    h = 1.0 / n
    r = (np.arange(n) + 0.5) * h
    faces = np.arange(n + 1) * h
    k = faces[1:-1] / h
    # wall at R = 1 with v = 0 through the ghost -v_last
    k_wall = faces[-1] / (0.5 * h)
    return r, k, k_wall, r * h


def _radial_newton(Lambda_sq, v, op, tol, max_iter):
    r, k, k_wall, vol = op
    for it in range(max_iter + 1):
        e = np.exp(v)
        g = k * np.diff(v)
        net = np.zeros_like(v)
        net[:-1] += g
        net[1:] -= g
        net[-1] -= k_wall * v[-1]
        F = net / vol + Lambda_sq * e
        if not np.all(np.isfinite(F)):
            break
        if np.max(np.abs(F)) <= tol:
            return v, it
        if it == max_iter:
            break
        ab = np.zeros((3, len(v)))
        ab[0, 1:] = k / vol[:-1]
        ab[2, :-1] = k / vol[1:]
        diag = np.zeros_like(v)
        diag[:-1] -= k
        diag[1:] -= k
        diag[-1] -= k_wall
        ab[1] = diag / vol + Lambda_sq * e
        dv = solve_banded((1, 1), ab, -F)
        v = v + dv
        if np.max(np.abs(dv)) <= tol:
            return v, it + 1
    return None, it


def solve_radial(Lambda_sq: float, boundary_value: float = 0.0, n: int = 4096, tol: float = 1e-12) -> RadialProfile:
    """Minimal solution of ``(1/R)(R v')' + Lambda^2 e^v = 0``, ``v(1) = 0``.

    Second-order cell-centred finite volumes on ``n`` cells, Newton with
    parameter continuation from ``Lambda^2 = 0`` whenever a direct solve from
    ``v = 0`` does not converge.  ``boundary_value`` only shifts the returned
    ``u = boundary_value + v``.
    """
    if Lambda_sq >= 2.0:
        raise Supercritical(f"Lambda^2 = {Lambda_sq} >= 2: the radial problem has no minimal solution")
    if Lambda_sq < 0:
        raise ValueError("Lambda^2 must be non-negative")
    op = _radial_operator(n)
    r = op[0]
    v, iters = _radial_newton(Lambda_sq, np.zeros(n), op, tol, 50)
    if v is None:
        done, step, v = 0.0, Lambda_sq / 8, np.zeros(n)
        while done < Lambda_sq:
            target = min(done + step, Lambda_sq)
            trial, it = _radial_newton(target, v, op, tol, 50)
            iters += it
            if trial is None:
                step *= 0.5
                if step < 1e-14:
                    raise Supercritical(f"radial continuation stalled at Lambda^2 = {done}")
                continue
            v, done = trial, target
    return RadialProfile(r, v, float(Lambda_sq), float(boundary_value), iters)


# ---------------------------------------------------------------------------
# physical units


@dataclass(frozen=True)
class PhysicalScaling:
    """Material and kinetic constants entering the reference length ``l``.

    ``l = sqrt(exp(E/(R T0)) kappa R T0^2 c / (Q E sigma(T0)))``; units are
    whatever the caller's Arrhenius form uses, nothing is converted here.
    """

    T0: float
    E: float
    R_gas: float
    kappa: float
    c: float
    Q: float
    sigma_T0: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")

    def length_scale(self) -> float:
        # exponent split off to keep exp(E/RT0) from overflowing for stiff kinetics
        log_l2 = (
            self.E / (self.R_gas * self.T0)
            + math.log(self.kappa * self.R_gas * self.T0**2 * self.c)
            - math.log(self.Q * self.E * self.sigma_T0)
        )
        return math.exp(0.5 * log_l2)

    def reduced_temperature(self, T):
        return (np.asarray(T) - self.T0) * self.E / (self.R_gas * self.T0**2)

    def temperature(self, u):
        return self.T0 + np.asarray(u) * self.R_gas * self.T0**2 / self.E


def lambda_from_physical(scaling: PhysicalScaling, r0: float) -> float:
    if not r0 > 0:
        raise ValueError("vessel radius must be positive")
    return r0 / scaling.length_scale()


def critical_radius(scaling: PhysicalScaling, lambda_cr: float) -> float:
    """Vessel radius at which ``lam`` reaches ``lambda_cr``."""
    if not lambda_cr > 0:
        raise ValueError("lambda_cr must be positive")
    return lambda_cr * scaling.length_scale()
