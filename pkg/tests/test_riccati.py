"""Coefficient-equation tests.

The backward pass is cross-checked against three independent routes: the
closed-form Riccati solution, the variation-of-constants integral for alpha,
and the explicit quadrature for xi.  Frozen constants below come from the
degenerate configuration where those routes collapse to elementary values
(xi(0) = e - 1 and a constant first theta of magnitude 1/e).
"""

import numpy as np
import pytest

from fblqg import (
    ModelParams,
    NumericsError,
    TimeGrid,
    alpha_integral_values,
    beta_closed_values,
    check_h2,
    panel_simpson_suffix,
    solve_alpha_zeta,
    solve_beta,
    solve_bundle,
    solve_xi,
    xi_quadrature_values,
)

from conftest import reference_params


def random_params(rng):
    # nonzero A, B, Q so the Riccati equation keeps its quadratic term
    def nz(scale):
        v = 0.0
        while abs(v) < 0.05:
            v = scale * rng.uniform(-1.0, 1.0)
        return v

    return ModelParams(
        A=nz(1.0),
        B=nz(1.0),
        F=rng.uniform(-0.5, 0.5),
        sigma=rng.uniform(0.0, 0.8),
        C=rng.uniform(-0.8, 0.8),
        D=rng.uniform(-1.0, 1.0),
        H=rng.uniform(-1.0, 1.0),
        L=rng.uniform(-1.0, 1.0),
        K=rng.uniform(-1.0, 1.0),
        Q=abs(nz(2.0)),
        R=rng.uniform(0.3, 3.0),
        S=rng.uniform(-1.0, 1.0),
        eta=rng.uniform(-1.0, 1.0),
        N0=rng.uniform(0.0, 2.0),
        T=rng.uniform(0.5, 2.0),
    )


class TestBeta:
    def test_closed_vs_rk4_randomized(self, rng):
        grid_m = 1000
        worst = 0.0
        for _ in range(5):
            p = random_params(rng)
            closed, marched = solve_beta(p, TimeGrid(p.T, grid_m))
            worst = max(worst, float(np.max(np.abs(closed.values - marched.values))))
        assert worst <= 1e-8, worst

    def test_zero_q_collapses(self):
        p = reference_params(Q=0.0)
        closed, marched = solve_beta(p, TimeGrid(p.T, 200))
        assert np.array_equal(closed.values, np.zeros(201))
        assert np.max(np.abs(marched.values)) == 0.0

    def test_linear_degenerate_case(self):
        # B = 0 and A + sigma^2/2 = 0 leaves beta' = -Q, beta(T) = 0
        p = ModelParams(A=-0.02, B=0.0, sigma=0.2, Q=1.5, R=1.0, T=1.0)
        grid = TimeGrid(1.0, 100)
        closed, marched = solve_beta(p, grid)
        expect = 1.5 * (1.0 - grid.nodes)
        assert np.max(np.abs(closed.values - expect)) < 1e-12
        assert np.max(np.abs(marched.values - expect)) < 1e-12

    def test_terminal_node_exact(self, ref_bundle):
        assert ref_bundle.beta.values[-1] == 0.0

    def test_nonnegative_and_decreasing(self, ref_bundle):
        b = ref_bundle.beta.values
        assert np.min(b) >= 0.0
        assert np.all(np.diff(b) <= 1e-12)

    def test_closed_form_no_overflow_long_horizon(self):
        p = reference_params(T=200.0)
        vals = beta_closed_values(p, np.linspace(0.0, 200.0, 50))
        assert np.all(np.isfinite(vals))


class TestAlphaZetaXi:
    def test_zeta_is_minus_alpha(self, ref_bundle):
        assert np.max(np.abs(ref_bundle.zeta.values + ref_bundle.alpha.values)) == 0.0

    def test_terminal_values(self, ref_bundle, ref_params):
        assert ref_bundle.alpha.values[-1] == -ref_params.K
        assert ref_bundle.zeta.values[-1] == ref_params.K
        assert ref_bundle.xi.values[-1] == 0.0

    def test_xi_nonnegative(self, ref_bundle):
        assert np.min(ref_bundle.xi.values) >= -1e-12

    def test_alpha_integral_representation(self, ref_bundle, ref_params):
        formula = alpha_integral_values(ref_params, ref_bundle.stage)
        assert np.max(np.abs(formula - ref_bundle.alpha.values)) < 1e-10

    def test_xi_quadrature_representation(self, ref_bundle, ref_params):
        quad = xi_quadrature_values(ref_params, ref_bundle.stage)
        assert np.max(np.abs(quad - ref_bundle.xi.values)) < 1e-10
        assert ref_bundle.xi0 == ref_bundle.xi.values[0]

    def test_mismatched_beta_rejected(self, ref_params):
        grid = TimeGrid(ref_params.T, 200)
        other = reference_params(Q=0.9)
        closed, _ = solve_beta(other, grid)
        with pytest.raises((ValueError, NumericsError)):
            solve_alpha_zeta(ref_params, closed, grid)

    def test_mismatched_alpha_rejected(self, ref_params):
        grid = TimeGrid(ref_params.T, 200)
        closed, _ = solve_beta(ref_params, grid)
        alpha, zeta = solve_alpha_zeta(ref_params, closed, grid)
        with pytest.raises((ValueError, NumericsError)):
            solve_xi(ref_params, zeta, alpha, grid)  # swapped on purpose


@pytest.fixture(scope="module")
def special():
    p = ModelParams(
        A=0.3, B=1.0, F=0.1, sigma=0.2, C=0.5, D=1.0, H=0.0, L=0.7,
        K=0.0, Q=0.0, R=1.0, S=0.2, eta=0.4, N0=1.0, T=1.0,
    )
    return p, solve_bundle(p, TimeGrid(1.0, 2000))


class TestFrozenSpecialCase:
    """H=K=0, B=D=1, C=0.5, R=1, N0=1, T=1, Q=0 gives elementary values:
    alpha == 0, xi(t) = e^{1-t} - 1, denom = e, theta1 == -1/e."""

    def test_xi0(self, special):
        _, bundle = special
        assert abs(bundle.xi0 - (np.e - 1.0)) <= 1e-8

    def test_theta_bar_1(self, special):
        _, bundle = special
        assert abs(bundle.theta_bars[0] - 1.0 / np.e) <= 1e-8

    def test_theta_bar_4(self, special):
        p, bundle = special
        assert abs(bundle.theta_bars[3] - abs(p.L) * p.T) <= 1e-8

    def test_alpha_vanishes(self, special):
        _, bundle = special
        assert np.max(np.abs(bundle.alpha.values)) == 0.0


class TestBundle:
    def test_theta1_proportional_to_theta5(self, ref_bundle, ref_params):
        t1 = ref_bundle.thetas[0].values
        t5 = ref_bundle.thetas[4].values
        assert np.max(np.abs(t1 - ref_params.B * t5)) < 1e-14

    def test_denom(self, ref_bundle, ref_params):
        assert ref_bundle.denom == 1.0 + ref_bundle.xi0 * ref_params.N0

    def test_a_cal(self, ref_bundle, ref_params):
        expect = ref_params.A - (ref_params.B**2 / ref_params.R) * ref_bundle.beta.values
        assert np.array_equal(ref_bundle.a_cal.values, expect)

    def test_contraction_report_consistent(self, ref_bundle, ref_params):
        rep = check_h2(ref_bundle, ref_params)
        assert rep.kappa == ref_bundle.kappa
        assert rep.kappa == pytest.approx(sum(rep.terms), rel=1e-15)
        assert rep.satisfied and rep.kappa < 1.0
        assert rep.theta_bars == ref_bundle.theta_bars

    def test_contraction_fails_for_strong_coupling(self):
        p = reference_params(F=3.0, Q=2.5)
        bundle = solve_bundle(p, TimeGrid(p.T, 400))
        assert not check_h2(bundle, p).satisfied


def test_panel_simpson_exact_for_cubics():
    # one sample per node plus one per midpoint; Simpson integrates cubics exactly
    m, T = 9, 1.8
    h = T / m
    fine = np.linspace(0.0, T, 2 * m + 1)
    g = fine**3 - 2.0 * fine
    suffix = panel_simpson_suffix(g, h)
    anti = lambda t: t**4 / 4.0 - t**2
    nodes = np.linspace(0.0, T, m + 1)
    expect = anti(T) - anti(nodes)
    assert suffix.shape == (m + 1,)
    assert suffix[-1] == 0.0
    assert np.max(np.abs(suffix - expect)) < 1e-13
