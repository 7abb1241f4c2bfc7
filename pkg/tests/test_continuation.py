import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fkdisk import continuation as cont
from fkdisk.analysis import classical_B, classical_solution
from fkdisk.continuation import (
    BranchDiverged,
    NonConvergence,
    NotAFold,
    PoorFit,
    RetryCapExceeded,
    SingularJacobian,
    StepPolicy,
    Termination,
    extrapolate_in_n,
    fit_fold,
    fit_inverse_n,
    fit_parabola,
    fold_estimate,
    make_grid,
    newton_solve,
    trace_branch,
)
from fkdisk.discretization import SolutionField, residual
from fkdisk.geometry import BoundarySpec, build_grid


def bisect_small_root(lam_sq):
    """Independent oracle for 8B/(1+B)^2 = lam_sq on (0, 1)."""
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 8 * mid / (1 + mid) ** 2 < lam_sq:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.fixture(scope="module")
def full_trace_64():
    return trace_branch(build_grid(64, BoundarySpec.full()))


@pytest.fixture(scope="module")
def sector_trace():
    spec = BoundarySpec.periodic(8, "1/8")
    return trace_branch(make_grid(32, spec), spec)


# --- Newton ----------------------------------------------------------------


def test_newton_trivial_problem():
    g = build_grid(16, BoundarySpec.full())
    u, info = cont._newton(SolutionField.zeros(g), 0.0, 1e-10, 25)
    assert info.iterations <= 1
    assert np.all(u.values == 0)


def test_newton_against_closed_form_centre():
    B = bisect_small_root(1.0)
    assert math.isclose(B, 3 - 2 * math.sqrt(2), rel_tol=1e-12)
    assert math.isclose(B, classical_B(1.0), rel_tol=1e-12)
    g = build_grid(64, BoundarySpec.full())
    u = newton_solve(SolutionField.zeros(g), 1.0)
    assert np.max(np.abs(residual(u))) <= 1e-10
    assert abs(u.values[0].mean() - 2 * math.log1p(B)) < 2e-3
    # the innermost cell centre sits at rho = h/2, not at the origin
    _, profile = classical_solution(B)
    assert abs(u.values[0, 0] - profile(g.rho_coords[0])) < 1e-4


def test_newton_beyond_fold_fails():
    g = build_grid(32, BoundarySpec.full())
    with pytest.raises((NonConvergence, SingularJacobian)):
        newton_solve(SolutionField.zeros(g), math.sqrt(2.5))


def test_newton_rejects_bad_input():
    g = build_grid(16, BoundarySpec.full())
    with pytest.raises(ValueError):
        newton_solve(SolutionField(g, np.full(g.shape, np.nan), 0.0), 0.5)


# --- traces ----------------------------------------------------------------


def assert_trace_invariants(trace):
    lam, norm = trace.lams, trace.norms
    assert np.all(np.diff(lam) > 0)
    assert np.all(np.diff(norm) > 0)
    assert lam[0] == 0 and norm[0] == 0
    assert np.sum(norm > 0.5 * norm[-1]) >= 10
    fit = fit_fold(trace)
    assert trace.points[-1].lam_sq < fit.lambda_cr_sq
    assert fit.C > 0
    assert fit.u0 >= norm[-10:].max()
    return fit


def test_full_trace_approaches_fold(full_trace_64):
    trace = full_trace_64
    assert trace.termination is Termination.FOLD_PROXIMITY
    fit = assert_trace_invariants(trace)
    last = trace.points[-1]
    assert 0.98 * 2.0 < last.lam_sq < 2.0
    assert last.norm < 2 * math.log(2)
    assert abs(fit.u0 - 2 * math.log(2)) < 1e-2
    assert abs(fit.lambda_cr_sq - 2.0) < 1e-3
    assert fit.rms_relative_residual < 1e-5
    assert len(trace.points) < 200


def test_sector_trace_invariants(sector_trace):
    assert sector_trace.termination is Termination.FOLD_PROXIMITY
    fit = assert_trace_invariants(sector_trace)
    assert 1.0 < fit.lambda_cr_sq < 2.0


def test_tiny_step_floor_keeps_lambda_increasing():
    spec = BoundarySpec.periodic(4, "1/4")
    policy = StepPolicy(dlam_floor=1e-8)
    trace = trace_branch(make_grid(16, spec), spec, policy)
    assert_trace_invariants(trace)


def test_trace_csv(full_trace_64, tmp_path):
    path = tmp_path / "t.csv"
    full_trace_64.write_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (len(full_trace_64.points), 4)
    np.testing.assert_allclose(data[:, 1], data[:, 0] ** 2, rtol=1e-10)


def test_trace_rejects_mismatched_spec():
    with pytest.raises(ValueError):
        trace_branch(build_grid(16, BoundarySpec.full()), BoundarySpec.periodic(2, "1/2"))


def test_broken_operator_diverges(monkeypatch):
    real = cont._newton

    def refuse(initial, lam, tol, max_iter):
        if lam > 0:
            raise NonConvergence("forced")
        return real(initial, lam, tol, max_iter)

    monkeypatch.setattr(cont, "_newton", refuse)
    with pytest.raises(BranchDiverged) as exc:
        trace_branch(build_grid(16, BoundarySpec.full()))
    assert exc.value.trace.termination is Termination.DIVERGED


def test_policy_validation():
    with pytest.raises(ValueError):
        StepPolicy(norm="sup")
    with pytest.raises(ValueError):
        StepPolicy(dlam_floor=0.1, dlam_init=0.05)
    assert StepPolicy().with_overrides(norm="l2").norm == "l2"


def test_max_and_l2_norm_fits_agree():
    spec = BoundarySpec.periodic(4, "1/2")
    a = fold_estimate(32, spec).lambda_cr_sq
    b = fold_estimate(32, spec, StepPolicy(norm="l2")).lambda_cr_sq
    assert abs(a - b) / a < 1e-4


def test_half_initial_step_gives_same_fold():
    spec = BoundarySpec.periodic(8, "1/8")
    a = fold_estimate(32, spec).lambda_cr_sq
    b = fold_estimate(32, spec, StepPolicy(dlam_init=0.025)).lambda_cr_sq
    assert abs(a - b) / a < 1e-4


# --- fold fit ----------------------------------------------------------------


def test_fit_recovers_exact_quadratic():
    s = np.linspace(1.0, 1.35, 10)
    fit = fit_parabola(2 - 0.5 * (s - 1.4) ** 2, s)
    assert fit.lambda_cr_sq == pytest.approx(2.0, rel=1e-10)
    assert fit.C == pytest.approx(0.5, rel=1e-10)
    assert fit.u0 == pytest.approx(1.4, rel=1e-10)
    assert fit.rms_relative_residual < 1e-14


@given(
    st.floats(0.5, 2.0),
    st.floats(0.05, 5.0),
    st.floats(0.5, 3.0),
    st.floats(0.05, 0.5),
)
@settings(max_examples=50, deadline=None)
def test_fit_recovers_any_fold(lcr, C, u0, width):
    s = np.linspace(u0 - width, u0 - 0.1 * width, 10)
    fit = fit_parabola(lcr - C * (s - u0) ** 2, s)
    assert fit.lambda_cr_sq == pytest.approx(lcr, rel=1e-10)
    assert fit.u0 == pytest.approx(u0, rel=1e-9)
    assert fit.C == pytest.approx(C, rel=1e-8)


def test_fit_is_stable_under_noise():
    rng = np.random.default_rng(2024)
    s = np.linspace(1.0, 1.35, 10)
    clean = 2 - 0.5 * (s - 1.4) ** 2
    base = fit_parabola(clean, s).lambda_cr_sq
    worst = max(abs(fit_parabola(clean + rng.normal(0, 1e-6, 10), s).lambda_cr_sq - base) for _ in range(100))
    assert worst < 1e-4


def test_fit_on_real_trace_tail_is_noise_stable(full_trace_64):
    tail = full_trace_64.points[-10:]
    y = np.array([p.lam_sq for p in tail])
    s = np.array([p.norm for p in tail])
    base = fit_parabola(y, s).lambda_cr_sq
    rng = np.random.default_rng(5)
    worst = max(abs(fit_parabola(y + rng.uniform(-1e-6, 1e-6, 10), s).lambda_cr_sq - base) for _ in range(100))
    assert worst < 1e-4


def test_fit_refuses_convex_data():
    s = np.linspace(0, 1, 10)
    with pytest.raises(NotAFold):
        fit_parabola(1 + s**2, s)


def test_fit_refuses_non_quadratic_data():
    s = np.linspace(0.0, 1.0, 10)
    with pytest.raises(PoorFit) as exc:
        fit_parabola(1 - s**2 + 0.05 * np.sin(9 * s), s)
    assert exc.value.fit.rms_relative_residual > 1e-4


def test_fit_fold_needs_ten_points(full_trace_64):
    short = cont.ContinuationTrace(full_trace_64.grid, full_trace_64.points[:9])
    with pytest.raises(ValueError):
        fit_fold(short)


# --- extrapolation ---------------------------------------------------------


@given(st.floats(0.5, 2.0), st.floats(-5, 5))
def test_inverse_n_fit_is_exact(a, b):
    ns = [64, 128, 256]
    lin = fit_inverse_n(ns, [a + b / n for n in ns])
    assert lin.a == pytest.approx(a, rel=1e-10, abs=1e-12)
    assert lin.b == pytest.approx(b, rel=1e-8, abs=1e-9)
    assert lin.relative_residual < 1e-12


def fake_estimates(monkeypatch, value):
    calls = []

    def fake(n, spec, policy=None, mode=None):
        calls.append(n)
        lam = value(n)
        return cont.PerN(n, cont.FoldFit(lam, 1.0, 1.0, 0.0, 0.0), {"n": n, "alpha_effective": str(spec.alpha)})

    monkeypatch.setattr(cont, "fold_estimate", fake)
    return calls


def test_extrapolation_accepts_linear_data(monkeypatch):
    calls = fake_estimates(monkeypatch, lambda n: 1.5 - 3.0 / n)
    est = extrapolate_in_n(BoundarySpec.periodic(4, "1/2"), (32, 64, 128))
    assert est.extrapolated_lambda_cr_sq == pytest.approx(1.5, rel=1e-12)
    assert est.slope_b == pytest.approx(-3.0, rel=1e-9)
    assert est.retries == 0 and est.accepted
    assert calls == [32, 64, 128]


def test_extrapolation_doubles_n_then_gives_up(monkeypatch):
    calls = fake_estimates(monkeypatch, lambda n: 1.5 - 30.0 / math.sqrt(n))
    with pytest.raises(RetryCapExceeded) as exc:
        extrapolate_in_n(BoundarySpec.periodic(4, "1/2"), (32, 64, 128), retry_cap=2)
    assert calls == [32, 64, 128, 256, 512]
    est = exc.value.estimate
    assert not est.accepted and est.retries == 2
    assert [p.n for p in est.per_n] == [128, 256, 512]


def test_extrapolation_retry_can_succeed(monkeypatch):
    # curvature in 1/n that only the finer grids resolve well enough
    calls = fake_estimates(monkeypatch, lambda n: 1.5 - 1.0 / n - 60.0 / n**2)
    est = extrapolate_in_n(BoundarySpec.periodic(4, "1/2"), (16, 32, 64))
    assert est.retries >= 1
    assert est.accepted
    assert calls[:3] == [16, 32, 64]


def test_extrapolation_validates_n_list():
    with pytest.raises(ValueError):
        extrapolate_in_n(BoundarySpec.full(), (64, 128))
    with pytest.raises(ValueError):
        extrapolate_in_n(BoundarySpec.full(), (64, 64, 128))


def test_full_dirichlet_extrapolates_to_two():
    est = extrapolate_in_n(BoundarySpec.full(), (32, 64, 128))
    assert abs(est.extrapolated_lambda_cr_sq - 2.0) < 1e-2
    assert est.fit_quality < 1e-3
    assert len(est.per_n) == 3
    assert est.finest.trace is not None and est.per_n[0].trace is None


@pytest.mark.slow
def test_four_segment_baseline_against_fine_grid():
    spec = BoundarySpec.periodic(4, "1/2")
    est = extrapolate_in_n(spec, (64, 128, 256))
    a = est.extrapolated_lambda_cr_sq
    assert 0 < a < 2
    coarse = est.per_n[0].lambda_cr_sq
    fine = fold_estimate(512, spec).lambda_cr_sq
    assert min(coarse, a) - 1e-12 <= fine <= max(coarse, a) + 1e-12
    assert abs(fine - a) < 3e-3
