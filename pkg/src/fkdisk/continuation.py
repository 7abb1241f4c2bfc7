"""Branch tracing up to the fold and critical-parameter extrapolation.

The subcritical branch is followed by natural continuation in ``lam``:
Newton at each parameter value, warm-started from the previous solution
pushed along the tangent ``du/d(lam^2) = -J^{-1} exp(u)``.  Newton cannot be
carried through the fold, where the Jacobian becomes singular, so the fold
location is obtained by fitting

    lam^2 = lam_cr^2 - C (||u|| - u0)^2

to the last points of the trace, and the grid dependence is removed by
fitting ``lam_cr^2(n) = a + b / n``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.sparse.linalg as spla

from .discretization import SolutionField, jacobian, residual
from .geometry import BoundaryKind, BoundarySpec, PolarGrid, build_grid, build_sector_grid

log = logging.getLogger(__name__)

FIT_POINTS = 10


class NonConvergence(RuntimeError):
    pass


class SingularJacobian(RuntimeError):
    pass


class BranchDiverged(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class NotAFold(ValueError):
    pass


class PoorFit(ValueError):
    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class RetryCapExceeded(RuntimeError):
    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class Termination(str, Enum):
    FOLD_PROXIMITY = "FoldProximity"
    STEP_FLOOR = "StepFloor"
    MAX_STEPS = "MaxSteps"
    DIVERGED = "Diverged"


@dataclass(frozen=True)
class StepPolicy:
    """Knobs for :func:`trace_branch`.

    Steps start at ``dlam_init`` in ``lam`` and never exceed ``dlam_max``;
    they are also limited to a norm increment of ``norm_step``.  Once a local
    quadratic model puts the fold within ``fold_window + fold_stop_steps``
    increments of ``fold_norm_step``, the branch is sampled at exactly that
    norm spacing, and tracing stops when the predicted norm gap to the fold
    drops below ``fold_stop_steps`` increments.  The last ``fold_window``
    points are then evenly spread just short of the fold, which is what the
    quadratic fit wants.  ``dlam_floor`` is a safety net for steps that keep
    failing.
    """

    dlam_init: float = 0.05
    dlam_max: float = 0.05
    dlam_floor: float = 1e-6
    norm_step: float = 0.02
    fold_norm_step: float = 0.004
    fold_window: int = 10
    fold_stop_steps: float = 2.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    max_steps: int = 500
    norm: str = "max"

    def __post_init__(self):
        if self.norm not in ("max", "l2"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if not 0 < self.dlam_floor < self.dlam_init <= self.dlam_max:
            raise ValueError("need 0 < dlam_floor < dlam_init <= dlam_max")
        if not 0 < self.fold_norm_step <= self.norm_step:
            raise ValueError("need 0 < fold_norm_step <= norm_step")

    def with_overrides(self, **kw) -> "StepPolicy":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# ---------------------------------------------------------------------------
# Newton


@dataclass
class NewtonInfo:
    iterations: int
    last_change: float
    lu: object = None


def _factorize(J):
    try:
        lu = spla.splu(J.tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularJacobian(str(exc)) from exc
    diag = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(diag)) or diag.min() <= 1e-14 * diag.max():
        raise SingularJacobian("Jacobian numerically singular")
    return lu


def _newton(initial: SolutionField, lam: float, tol: float, max_iter: int):
    """Full Newton; returns ``(field, NewtonInfo)``.

    Converged when ``max|F| <= tol`` or when the error left after the latest
    update, estimated from the contraction of successive updates as
    ``theta / (1 - theta) * |du|``, is below ``tol`` (relative to ``max|u|``
    once that exceeds one).  The raw residual alone is not usable on fine or
    graded grids: its round-off scales like ``eps / h_min``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    grid = initial.grid
    u = initial.values.ravel().copy()
    if not np.all(np.isfinite(u)):
        raise ValueError("initial field is not finite")
    current = SolutionField(grid, u.reshape(grid.shape), lam)
    lu = None
    first = None
    prev_step = None
    for it in range(max_iter):
        F = residual(current)
        if not np.all(np.isfinite(F)):
            raise NonConvergence(f"non-finite residual at lambda={lam:.8g}")
        err = float(np.max(np.abs(F)))
        first = err if first is None else first
        if err <= tol:
            return current, NewtonInfo(it, err, lu)
        if err > 1e6 * max(first, tol):
            break
        lu = _factorize(jacobian(current))
        du = lu.solve(-F)
        u = current.values.ravel() + du
        current = SolutionField(grid, u.reshape(grid.shape), lam)
        step = float(np.max(np.abs(du)))
        if not np.isfinite(step):
            break
        bound = tol * max(1.0, float(np.max(np.abs(u))))
        if step <= bound:
            return current, NewtonInfo(it + 1, step, lu)
        if prev_step is not None:
            theta = step / prev_step
            if theta < 0.5 and theta / (1.0 - theta) * step <= bound:
                return current, NewtonInfo(it + 1, step, lu)
        prev_step = step
    raise NonConvergence(f"Newton failed at lambda={lam:.10g} (residual {err:.3g})")


def newton_solve(initial: SolutionField, lam: float, tol: float = 1e-10, max_iter: int = 25) -> SolutionField:
    """Solve the discrete problem at ``lam`` starting from ``initial``.

    Raises :class:`NonConvergence` when the iteration limit is hit or the
    iterates blow up, :class:`SingularJacobian` when the linear solve breaks
    down (both are what happens at or past the fold).
    """
    return _newton(initial, lam, tol, max_iter)[0]


# ---------------------------------------------------------------------------
# branch tracing


@dataclass(frozen=True)
class TracePoint:
    lam: float
    norm: float
    newton_iters: int

    @property
    def lam_sq(self) -> float:
        return self.lam * self.lam


@dataclass
class ContinuationTrace:
    grid: PolarGrid
    points: list = field(default_factory=list)
    termination: Termination = Termination.MAX_STEPS
    norm_kind: str = "max"
    last_field: SolutionField | None = None

    @property
    def lams(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def norms(self) -> np.ndarray:
        return np.array([p.norm for p in self.points])

    def to_csv(self) -> str:
        rows = ["lambda,lambda_sq,norm,newton_iters"]
        rows += [f"{p.lam:.12g},{p.lam_sq:.12g},{p.norm:.12g},{p.newton_iters}" for p in self.points]
        return "\n".join(rows) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


def _norm_and_slope(field: SolutionField, tangent: np.ndarray, kind: str):
    u = field.values.ravel()
    if kind == "max":
        k = int(np.argmax(u))
        return float(u[k]), float(tangent[k])
    vol = field.grid.cell_volumes.ravel()
    w = vol * np.pi / vol.sum()
    norm = float(np.sqrt((w * u * u).sum()))
    if norm == 0.0:
        return 0.0, float(np.sqrt((w * tangent * tangent).sum()))
    return norm, float((w * u * tangent).sum() / norm)


def trace_branch(grid: PolarGrid, spec: BoundarySpec | None = None, schedule: StepPolicy | None = None) -> ContinuationTrace:
    """Follow the minimal branch from ``lam = 0`` towards the fold."""
    policy = schedule or StepPolicy()
    if spec is not None and spec != grid.spec:
        raise ValueError("spec does not match the grid it was built for")
    trace = ContinuationTrace(grid, norm_kind=policy.norm)
    tol, max_iter = policy.newton_tol, policy.newton_max_iter

    current, info = _newton(SolutionField.zeros(grid), 0.0, tol, max_iter)
    lu = info.lu
    slopes = []  # d(lam^2)/d(norm) at recorded points

    def record(f, info):
        nonlocal lu
        lu = info.lu or _factorize(jacobian(f))
        tangent = -lu.solve(np.exp(f.values.ravel()))
        norm, dnorm = _norm_and_slope(f, tangent, policy.norm)
        trace.points.append(TracePoint(f.lam, norm, info.iterations))
        slopes.append(1.0 / dnorm if dnorm > 0 else math.inf)
        return tangent

    tangent = record(current, info)
    h = policy.dlam_init**2
    fine = policy.fold_norm_step
    for _ in range(policy.max_steps):
        lam_sq = current.lam_sq
        lam = current.lam
        if len(trace.points) > 1:
            h = (lam + policy.dlam_max) ** 2 - lam_sq
            sigma = slopes[-1]
            if math.isfinite(sigma):
                h = min(h, policy.norm_step * sigma)
            C = _fold_curvature(trace.norms[-2:], slopes[-2:])
            if C is not None:
                gap = sigma / (2.0 * C)  # norm distance to the fold
                if gap < policy.fold_stop_steps * fine and len(trace.points) >= FIT_POINTS:
                    trace.termination = Termination.FOLD_PROXIMITY
                    trace.last_field = current
                    return trace
                ds = max(fine, min(policy.norm_step, gap - (policy.fold_window + policy.fold_stop_steps) * fine))
                # lam^2 increment that the quadratic model needs for a norm increment ds
                h = min(h, sigma * ds - C * ds * ds)
        while True:
            if math.sqrt(lam_sq + h) - lam < policy.dlam_floor:
                trace.termination = Termination.STEP_FLOOR
                trace.last_field = current
                if len(trace.points) < FIT_POINTS:
                    trace.termination = Termination.DIVERGED
                    raise BranchDiverged(
                        f"step floor reached after {len(trace.points)} points at lambda={lam:.6g}", trace
                    )
                return trace
            guess = current.values.ravel() + h * tangent
            try:
                new, info = _newton(
                    SolutionField(grid, guess, math.sqrt(lam_sq + h)), math.sqrt(lam_sq + h), tol, max_iter
                )
            except (NonConvergence, SingularJacobian) as exc:
                log.debug("step %.3g from lambda^2=%.10g rejected: %s", h, lam_sq, exc)
                h *= 0.5
                continue
            new_norm = _norm_and_slope(new, tangent, policy.norm)[0]
            if new_norm <= trace.points[-1].norm:
                # landed on the other side of the fold or on a spurious root
                h *= 0.5
                continue
            break
        current = new
        tangent = record(current, info)
    trace.termination = Termination.MAX_STEPS
    trace.last_field = current
    return trace


def _fold_curvature(norms, slopes):
    """``C`` of the local model ``lam^2 = lam_cr^2 - C (s - u0)^2``.

    The model slope is ``2 C (u0 - s)``, so two slopes determine ``C``;
    the norm gap to the fold is then ``slope / (2 C)``.
    """
    if len(norms) < 2 or not all(math.isfinite(s) for s in slopes):
        return None
    ds = norms[1] - norms[0]
    if ds <= 0:
        return None
    two_c = -(slopes[1] - slopes[0]) / ds
    if two_c <= 0:
        return None
    return 0.5 * two_c


# ---------------------------------------------------------------------------
# fold fit


@dataclass(frozen=True)
class FoldFit:
    lambda_cr_sq: float
    C: float
    u0: float
    rms_relative_residual: float
    max_relative_residual: float
    points: int = FIT_POINTS

    @property
    def lambda_cr(self) -> float:
        return math.sqrt(self.lambda_cr_sq)

    def to_record(self) -> dict:
        return {
            "lambda_cr_sq": self.lambda_cr_sq,
            "C": self.C,
            "u0": self.u0,
            "rms_relative_residual": self.rms_relative_residual,
            "max_relative_residual": self.max_relative_residual,
            "points": self.points,
        }


def fit_parabola(lam_sq, norms, tol: float = 1e-4) -> FoldFit:
    """Least-squares ``lam^2 = p0 + p1 s + p2 s^2`` rewritten in fold form."""
    y = np.asarray(lam_sq, dtype=float)
    s = np.asarray(norms, dtype=float)
    # centre and scale the abscissa for conditioning
    mid = 0.5 * (s.max() + s.min())
    half = 0.5 * (s.max() - s.min()) or 1.0
    x = (s - mid) / half
    q2, q1, q0 = np.polyfit(x, y, 2)
    if q2 >= 0:
        raise NotAFold(f"quadratic coefficient {q2:.3g} >= 0: the trace does not bend towards a fold")
    C = -q2 / half**2
    u0 = mid - half * q1 / (2 * q2)
    lam_cr_sq = q0 - q1 * q1 / (4 * q2)
    rel = np.abs(lam_cr_sq - y - C * (s - u0) ** 2) / lam_cr_sq
    fit = FoldFit(
        lambda_cr_sq=float(lam_cr_sq),
        C=float(C),
        u0=float(u0),
        rms_relative_residual=float(np.sqrt(np.mean(rel**2))),
        max_relative_residual=float(rel.max()),
        points=len(y),
    )
    if fit.rms_relative_residual > tol:
        raise PoorFit(f"fold fit rms relative residual {fit.rms_relative_residual:.3g} > {tol:g}", fit)
    return fit


def fit_fold(trace: ContinuationTrace, points: int = FIT_POINTS, tol: float = 1e-4) -> FoldFit:
    """Fit the fold parabola to the last ``points`` points of ``trace``."""
    if len(trace.points) < points:
        raise ValueError(f"trace has {len(trace.points)} points, fit needs {points}")
    tail = trace.points[-points:]
    return fit_parabola([p.lam_sq for p in tail], [p.norm for p in tail], tol)


# ---------------------------------------------------------------------------
# grid extrapolation


@dataclass(frozen=True)
class LinearFit:
    a: float
    b: float
    relative_residual: float


def fit_inverse_n(ns, values) -> LinearFit:
    """Least squares ``value = a + b / n``; residual is rms relative to ``|a|``."""
    x = 1.0 / np.asarray(ns, dtype=float)
    y = np.asarray(values, dtype=float)
    b, a = np.polyfit(x, y, 1)
    res = y - (a + b * x)
    return LinearFit(float(a), float(b), float(np.sqrt(np.mean(res**2)) / abs(a)))


@dataclass
class PerN:
    n: int
    fit: FoldFit
    grid: dict
    trace: ContinuationTrace | None = None

    @property
    def lambda_cr_sq(self) -> float:
        return self.fit.lambda_cr_sq


@dataclass
class CriticalEstimate:
    spec: BoundarySpec
    per_n: list
    extrapolated_lambda_cr_sq: float
    slope_b: float
    fit_quality: float
    grid_mode: str
    retries: int = 0
    accepted: bool = True

    @property
    def finest(self) -> PerN:
        return max(self.per_n, key=lambda p: p.n)

    @property
    def alpha_effective(self):
        return self.finest.grid["alpha_effective"]

    def to_record(self) -> dict:
        return {
            "spec": self.spec.to_record(),
            "grid_mode": self.grid_mode,
            "per_n": [
                {"n": p.n, "lambda_cr_sq": p.fit.lambda_cr_sq, "fold_fit": p.fit.to_record(), "grid": p.grid}
                for p in self.per_n
            ],
            "extrapolated_lambda_cr_sq": self.extrapolated_lambda_cr_sq,
            "slope_b": self.slope_b,
            "fit_quality": self.fit_quality,
            "retries": self.retries,
            "accepted": self.accepted,
            "alpha_effective": self.alpha_effective,
        }


def default_grid_mode(spec: BoundarySpec) -> str:
    return "full" if spec.kind is BoundaryKind.FULL_DIRICHLET else "sector-graded"


def make_grid(n: int, spec: BoundarySpec, mode: str | None = None) -> PolarGrid:
    mode = mode or default_grid_mode(spec)
    if mode == "full":
        return build_grid(n, spec)
    if mode == "sector":
        return build_sector_grid(n, spec, graded=False)
    if mode == "sector-graded":
        return build_sector_grid(n, spec, graded=True)
    raise ValueError(f"unknown grid mode {mode!r}")


def fold_estimate(n: int, spec: BoundarySpec, policy: StepPolicy | None = None, mode: str | None = None) -> PerN:
    """Trace and fold-fit one grid."""
    grid = make_grid(n, spec, mode)
    trace = trace_branch(grid, spec, policy)
    fit = fit_fold(trace)
    log.info("%s n=%d: lambda_cr^2=%.8f (%d points, rms %.2g)", spec.case_id, n, fit.lambda_cr_sq, len(trace.points), fit.rms_relative_residual)
    return PerN(n, fit, grid.describe(), trace)


def extrapolate_in_n(
    spec: BoundarySpec,
    n_list=(64, 128, 256),
    policy: StepPolicy | None = None,
    mode: str | None = None,
    tol: float = 1e-3,
    retry_cap: int = 2,
    keep_traces: str = "finest",
) -> CriticalEstimate:
    """Fold estimates on several grids, extrapolated to ``n -> infinity``.

    If the ``a + b/n`` fit is worse than ``tol`` every ``n`` is doubled and the
    whole procedure repeated, at most ``retry_cap`` times.
    """
    ns = [int(n) for n in n_list]
    if len(ns) < 3 or any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("n_list must be strictly increasing with at least three entries")
    mode = mode or default_grid_mode(spec)
    done: dict[int, PerN] = {}
    for attempt in range(retry_cap + 1):
        for n in ns:
            if n not in done:
                done[n] = fold_estimate(n, spec, policy, mode)
        per_n = [done[n] for n in ns]
        lin = fit_inverse_n(ns, [p.lambda_cr_sq for p in per_n])
        est = CriticalEstimate(spec, per_n, lin.a, lin.b, lin.relative_residual, mode, retries=attempt)
        if lin.relative_residual <= tol:
            break
        log.warning("%s: a+b/n fit residual %.3g > %g with n=%s", spec.case_id, lin.relative_residual, tol, ns)
        ns = [2 * n for n in ns]
    else:
        est.accepted = False
        raise RetryCapExceeded(
            f"{spec.case_id}: a+b/n fit never better than {tol:g} (last {est.fit_quality:.3g})", est
        )
    if keep_traces == "finest":
        for p in est.per_n[:-1]:
            p.trace = None
    elif keep_traces == "none":
        for p in est.per_n:
            p.trace = None
    return est
