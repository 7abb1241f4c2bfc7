import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fkdisk.analysis import (
    CoreAnalysis,
    InsufficientRange,
    NoCore,
    PhysicalScaling,
    Supercritical,
    analyze_core,
    boundary_layer_thickness,
    classical_B,
    classical_solution,
    core_deviation,
    core_profile,
    critical_radius,
    fit_scaling_law,
    lambda_from_physical,
    solve_radial,
)
from fkdisk.continuation import make_grid, newton_solve, trace_branch
from fkdisk.discretization import SolutionField
from fkdisk.geometry import BoundarySpec, build_grid


def d2_radial(f, r, h=1e-3):
    """(1/r)(r f')' with fourth-order central differences."""
    d1 = (-f(r + 2 * h) + 8 * f(r + h) - 8 * f(r - h) + f(r - 2 * h)) / (12 * h)
    d2 = (-f(r + 2 * h) + 16 * f(r + h) - 30 * f(r) + 16 * f(r - h) - f(r - 2 * h)) / (12 * h * h)
    return d2 + d1 / r


# --- classical solution ----------------------------------------------------


def test_classical_fold_values():
    lam_sq, profile = classical_solution(1.0)
    assert lam_sq == 2.0
    assert profile(0.0) == pytest.approx(2 * math.log(2), rel=1e-15)
    assert profile(1.0) == pytest.approx(0.0, abs=1e-15)


def test_classical_small_B_limit():
    B = 1e-9
    lam_sq, profile = classical_solution(B)
    assert lam_sq == pytest.approx(8 * B, rel=1e-8)
    assert abs(profile(0.0)) < 1e-8


@pytest.mark.parametrize("B", [0.05, 0.5, 1.0, 3.0])
def test_classical_profile_solves_the_equation(B):
    lam_sq, profile = classical_solution(B)
    r = np.linspace(0.05, 0.95, 50)
    res = d2_radial(profile, r) + lam_sq * np.exp(profile(r))
    assert np.max(np.abs(res)) < 1e-8


@given(st.floats(1e-6, 2.0))
def test_classical_B_inverts_lambda(lam_sq):
    B = classical_B(lam_sq)
    assert 0 < B <= 1
    assert classical_solution(B)[0] == pytest.approx(lam_sq, rel=1e-12)


def test_classical_rejects_bad_input():
    with pytest.raises(ValueError):
        classical_solution(0.0)
    with pytest.raises(ValueError):
        classical_B(2.5)


# --- radial solver ---------------------------------------------------------


def test_radial_solver_matches_closed_form():
    lam_sq, profile = classical_solution(0.5)
    sol = solve_radial(lam_sq, n=10_000)
    assert np.max(np.abs(sol.v - profile(sol.R))) < 1e-8
    # interpolant is exact at the wall and accurate between nodes
    R = np.linspace(0, 1, 101)
    assert np.max(np.abs(sol.v_at(R) - profile(R))) < 1e-8


def test_radial_solver_reference_resolution():
    lam_sq, profile = classical_solution(0.5)
    sol = solve_radial(lam_sq)
    assert len(sol.R) == 4096
    assert np.max(np.abs(sol.v - profile(sol.R))) < 1e-7


def test_radial_solver_near_fold_uses_continuation():
    lam_sq, profile = classical_solution(0.9)
    sol = solve_radial(lam_sq, n=2048)
    assert np.max(np.abs(sol.v - profile(sol.R))) < 1e-5


def test_radial_solver_trivial_and_supercritical():
    sol = solve_radial(0.0, boundary_value=0.3, n=256)
    assert np.all(sol.v == 0)
    np.testing.assert_allclose(sol.u, 0.3)
    with pytest.raises(Supercritical):
        solve_radial(2.0)
    with pytest.raises(Supercritical):
        solve_radial(2.3)


def test_reduction_identity():
    """u solving the radial equation on [0, rho*] rescales to a solution with Lambda^2."""
    lam_sq, u = classical_solution(0.6)
    rho_star = 0.7
    u_star = float(u(rho_star))
    Lambda_sq = lam_sq * rho_star**2 * math.exp(u_star)

    def v(R):
        return u(rho_star * R) - u_star

    R = np.linspace(0.05, 0.95, 40)
    assert np.max(np.abs(d2_radial(v, R) + Lambda_sq * np.exp(v(R)))) < 1e-8
    assert abs(v(1.0)) < 1e-15


# --- core analysis ---------------------------------------------------------


def test_full_dirichlet_core_is_the_whole_disk():
    g = build_grid(32, BoundarySpec.full())
    f = newton_solve(SolutionField.zeros(g), 1.3)
    core = analyze_core(f)
    assert core.core_index == g.n_r - 1
    assert core.rho_star == g.rho_coords[-1]
    ring = f.values[-1]
    assert core.angular_variation_at_rho_star <= 1e-12
    assert core.u_star == pytest.approx(ring[0], abs=1e-13)
    assert core.Lambda_sq == pytest.approx(f.lam_sq * core.rho_star**2 * math.exp(core.u_star), rel=1e-14)
    assert boundary_layer_thickness(f) == pytest.approx(0.5 / 32)
    # the whole-disk core is the classical problem again
    assert core_deviation(f, core) < 5e-4


def test_no_core_when_the_centre_varies():
    g = build_grid(16, BoundarySpec.periodic(2, "1/2"))
    f = SolutionField.from_function(g, lambda r, t: 1e-3 * np.cos(t), 1.0)
    with pytest.raises(NoCore):
        analyze_core(f)


def test_core_threshold_is_configurable():
    g = build_grid(16, BoundarySpec.full())
    values = np.zeros(g.shape)
    values[8:] = 1e-5 * np.cos(g.theta_coords)[None, :]
    f = SolutionField(g, values, 1.0)
    assert analyze_core(f).core_index == 15
    assert analyze_core(f, threshold=1e-5).core_index == 7


def test_core_record_round_trip():
    core = CoreAnalysis(0.8, 0.5, 1.7, 5e-5, 1.4, 40)
    assert CoreAnalysis(**core.to_record()) == core
    assert core.boundary_layer == pytest.approx(0.2)


@pytest.fixture(scope="module")
def near_critical():
    out = {}
    for N, a in [(16, "1/4"), (32, "1/4"), (64, "1/4"), (32, "1/32"), (64, "1/64"), (128, "1/128")]:
        spec = BoundarySpec.periodic(N, a)
        out[N, a] = trace_branch(make_grid(64, spec), spec).last_field
    return out


def test_boundary_layer_is_of_segment_size(near_critical):
    thickness = {N: boundary_layer_thickness(near_critical[N, "1/4"]) for N in (16, 32, 64)}
    assert 0.1 <= thickness[32] / (2 * math.pi / 32) <= 10
    assert 0.3 <= thickness[32] / thickness[16] <= 0.8
    assert 0.3 <= thickness[64] / thickness[32] <= 0.8


def test_core_value_decreases_with_N_at_fixed_arc(near_critical):
    u_star = [analyze_core(near_critical[N, f"1/{N}"]).u_star for N in (32, 64, 128)]
    assert u_star[0] > u_star[1] > u_star[2] > 0


def test_core_is_subcritical_and_radial(near_critical):
    for field in near_critical.values():
        core = analyze_core(field)
        assert core.angular_variation_at_rho_star < 1e-4
        assert 0 < core.rho_star < 1
        assert core.Lambda_sq < 2
    # even on a coarse grid the core follows the radial reduction
    field = near_critical[16, "1/4"]
    assert core_deviation(field) < 1e-3
    R, v = core_profile(field, analyze_core(field))
    assert R[-1] == 1.0 and abs(v[-1]) < 1e-4


# --- scaling law -----------------------------------------------------------


def test_scaling_law_exact_recovery():
    alphas = [1 / 32, 1 / 64, 1 / 128, 1 / 256, 1 / 512]
    fit = fit_scaling_law([(a, 2.03 * a**0.10) for a in alphas], N=32)
    assert fit.S == pytest.approx(2.03, rel=1e-12)
    assert fit.t == pytest.approx(0.10, rel=1e-12)
    assert fit.relative_fit_residual < 1e-14
    assert fit.alpha_range == (1 / 512, 1 / 32)
    np.testing.assert_allclose(fit.predict(alphas), [2.03 * a**0.10 for a in alphas])


def test_scaling_law_needs_a_decade():
    with pytest.raises(InsufficientRange):
        fit_scaling_law([(a, 1.0) for a in (0.1, 0.08, 0.05, 0.02)], N=8)
    with pytest.raises(InsufficientRange):
        fit_scaling_law([(0.1, 1.2), (0.01, 1.0), (0.001, 0.9)], N=8)
    fit_scaling_law([(0.1, 1.2), (0.05, 1.1), (0.02, 1.05), (0.01, 1.0)], N=8)


# --- physical units --------------------------------------------------------


@pytest.fixture
def scaling():
    return PhysicalScaling(T0=600.0, E=1.5e5, R_gas=8.314, kappa=1e-7, c=1.2e6, Q=2e6, sigma_T0=1e-3)


def test_physical_round_trips(scaling):
    ell = scaling.length_scale()
    direct = math.sqrt(
        math.exp(scaling.E / (scaling.R_gas * scaling.T0)) * scaling.kappa * scaling.R_gas * scaling.T0**2 * scaling.c
        / (scaling.Q * scaling.E * scaling.sigma_T0)
    )
    assert ell == pytest.approx(direct, rel=1e-12)
    assert lambda_from_physical(scaling, ell) == pytest.approx(1.0, rel=1e-14)
    assert critical_radius(scaling, math.sqrt(2)) == pytest.approx(math.sqrt(2) * ell, rel=1e-14)
    T = np.array([600.0, 620.0])
    np.testing.assert_allclose(scaling.temperature(scaling.reduced_temperature(T)), T)
    assert scaling.reduced_temperature(600.0) == 0


def test_doubling_reaction_rate(scaling):
    from dataclasses import replace

    faster = replace(scaling, sigma_T0=2 * scaling.sigma_T0)
    assert faster.length_scale() == pytest.approx(scaling.length_scale() / math.sqrt(2), rel=1e-13)
    assert lambda_from_physical(faster, 0.1) == pytest.approx(math.sqrt(2) * lambda_from_physical(scaling, 0.1), rel=1e-13)


def test_physical_rejects_non_positive(scaling):
    from dataclasses import replace

    for name in ("T0", "E", "kappa", "sigma_T0"):
        with pytest.raises(ValueError):
            replace(scaling, **{name: 0.0})
    with pytest.raises(ValueError):
        lambda_from_physical(scaling, -1.0)
    with pytest.raises(ValueError):
        critical_radius(scaling, 0.0)


def test_stiff_kinetics_do_not_overflow():
    s = PhysicalScaling(T0=300.0, E=2.5e6, R_gas=8.314, kappa=1e-7, c=1e6, Q=1e6, sigma_T0=1.0)
    assert math.isfinite(math.log(s.length_scale()))
