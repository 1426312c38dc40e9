import numpy as np
import pytest

from fblqg import (
    InitialLaw,
    RngStreams,
    TimeGrid,
    convergence_sweep,
    cost_limiting,
    cost_population,
    cost_report,
    default_family,
    epsilon_nash_check,
    epsilon_trend,
    limiting_cost_moments,
    picard_solve,
    simulate_limiting,
    simulate_population,
    solve_bundle,
    y0_coefficients,
)

from conftest import reference_params


def test_costs_vanish_without_running_or_terminal_weight(ref_law, streams):
    # Q = N0 = 0 kills both cost channels and zeroes the optimal control
    p = reference_params(Q=0.0, N0=0.0)
    grid = TimeGrid(p.T, 400)
    bundle = solve_bundle(p, grid)
    sol = picard_solve(bundle, p, ref_law.mean)
    pop = simulate_population(p, ref_law, bundle, sol, 5, 50, streams)
    lim = simulate_limiting(p, ref_law, bundle, sol, 5, 50, streams)
    assert np.max(np.abs(pop.u_paths)) == 0.0
    assert np.array_equal(cost_population(pop, np.zeros(5), p), np.zeros(5))
    assert np.array_equal(cost_limiting(lim, p), np.zeros(5))


def test_costs_nonnegative(ref_params, ref_law, ref_bundle, ref_sol, streams):
    rep = cost_report(ref_params, ref_law, ref_bundle, ref_sol, 6, 100, 4, streams)
    assert np.all(rep.costs >= 0.0)
    assert np.all(rep.limiting >= 0.0)
    assert np.all(rep.stderr >= 0.0)
    assert rep.reps == 4
    with pytest.raises(ValueError):
        cost_report(ref_params, ref_law, ref_bundle, ref_sol, 6, 100, 1, streams)


def test_limiting_cost_against_moment_integration(ref_params, ref_law, ref_bundle, ref_sol, streams):
    """The limiting cost of a fixed initial draw has a closed moment-ODE
    value; a large common-draw Monte Carlo batch must straddle it."""
    x_i0 = 1.2
    oracle = limiting_cost_moments(ref_params, ref_bundle, ref_sol, x_i0)
    n, m = 4000, 200
    init = np.full(n, x_i0)
    incr = streams.brownian_increments(n, m, ref_params.T / m, replication=11)
    lim = simulate_limiting(
        ref_params, ref_law, ref_bundle, ref_sol, n, m, streams,
        replication=11, initials=init, increments=incr,
    )
    costs = cost_limiting(lim, ref_params)
    se = costs.std(ddof=1) / np.sqrt(n)
    gap = abs(costs.mean() - oracle)
    # allow the first-order Euler bias on top of sampling error
    assert gap <= 3 * se + 0.01 * abs(oracle), (gap, se, oracle)


def test_common_noise_pairing_cancels_variance(ref_params, ref_law, ref_bundle, ref_sol, streams):
    diffs_paired = []
    diffs_crossed = []
    runs = []
    for rep in range(12):
        init = np.full(8, 1.0)
        incr = streams.brownian_increments(8, 80, ref_params.T / 80, rep)
        pop = simulate_population(ref_params, ref_law, ref_bundle, ref_sol, 8, 80, streams, rep,
                                  initials=init, increments=incr)
        lim = simulate_limiting(ref_params, ref_law, ref_bundle, ref_sol, 8, 80, streams, rep,
                                initials=init, increments=incr)
        co = y0_coefficients(ref_params, ref_bundle, ref_sol)
        jp = cost_population(pop, co.evaluate(init), ref_params)
        jl = cost_limiting(lim, ref_params)
        runs.append((jp.mean(), jl.mean()))
        diffs_paired.append(jp.mean() - jl.mean())
    for i in range(12):
        diffs_crossed.append(runs[i][0] - runs[(i + 5) % 12][1])
    ratio = np.std(diffs_paired) / np.std(diffs_crossed)
    assert ratio < 0.8, ratio


def test_agent_costs_exchangeable(ref_params, ref_law, ref_bundle, ref_sol, streams):
    rep = cost_report(ref_params, ref_law, ref_bundle, ref_sol, 2, 100, 30, streams)
    spread = abs(rep.costs[0] - rep.costs[1])
    se = np.hypot(rep.stderr[0], rep.stderr[1])
    assert spread <= 3 * se, (spread, se)


@pytest.fixture(scope="module")
def small_sweep(ref_params, ref_law, ref_bundle, ref_sol, streams):
    return convergence_sweep(
        ref_params, ref_law, ref_bundle, ref_sol, [4, 8, 16], 3, 50, streams
    )


class TestConvergenceSweep:
    def test_shapes(self, small_sweep):
        rep = small_sweep
        assert list(rep.ns) == [4, 8, 16]
        assert rep.avg_gap.shape == (3,)
        assert rep.cost_gap_stderr.shape == (3,)
        assert rep.reps == 3 and rep.m == 50

    def test_gaps_positive_and_shrinking(self, small_sweep):
        rep = small_sweep
        assert np.all(rep.avg_gap > 0.0)
        assert np.all(rep.state_gap > 0.0)
        assert rep.avg_gap[-1] < rep.avg_gap[0]

    def test_slopes_present(self, small_sweep):
        for name in ("avg_gap", "state_gap", "control_gap", "cost_gap"):
            assert name in small_sweep.slopes

    def test_thread_count_is_numerically_invisible(self, ref_params, ref_law, ref_bundle, ref_sol, streams):
        a = convergence_sweep(ref_params, ref_law, ref_bundle, ref_sol, [4, 8], 3, 40, streams, threads=1)
        b = convergence_sweep(ref_params, ref_law, ref_bundle, ref_sol, [4, 8], 3, 40, streams, threads=3)
        assert np.array_equal(a.avg_gap, b.avg_gap)
        assert np.array_equal(a.cost_gap, b.cost_gap)

    def test_short_n_list_degenerate(self, ref_params, ref_law, ref_bundle, ref_sol, streams):
        rep = convergence_sweep(ref_params, ref_law, ref_bundle, ref_sol, [8], 2, 40, streams)
        assert rep.degenerate
        assert all(np.isnan(rep.slopes[k][0]) for k in rep.slopes)


class TestEpsilonNash:
    def test_margin_report_fields(self, ref_params, ref_law, ref_bundle, ref_sol, streams):
        family = default_family(scales=(0.5, 1.0, 1.5))
        rep = epsilon_nash_check(ref_params, ref_law, ref_bundle, ref_sol, 8, 4, family, streams, 50)
        assert rep.names == ["law_x0.5", "law_x1", "law_x1.5", "zero_control"]
        assert rep.margins.shape == (4,)
        assert rep.n == 8 and rep.reps == 4
        assert rep.baseline_cost > 0.0
        assert rep.epsilon == max(0.0, -float(rep.margins.min()))

    def test_self_deviation_margin_is_machine_zero(self, ref_params, ref_law, ref_bundle, ref_sol, streams):
        family = default_family(scales=(1.0,), include_zero=False)
        rep = epsilon_nash_check(ref_params, ref_law, ref_bundle, ref_sol, 6, 4, family, streams, 60)
        assert abs(rep.margins[0]) <= 64 * np.finfo(float).eps * rep.baseline_cost

    def test_validation(self, ref_params, ref_law, ref_bundle, ref_sol, streams):
        family = default_family()
        with pytest.raises(ValueError):
            epsilon_nash_check(ref_params, ref_law, ref_bundle, ref_sol, 8, 4, [], streams, 50)
        with pytest.raises(ValueError):
            epsilon_nash_check(ref_params, ref_law, ref_bundle, ref_sol, 8, 1, family, streams, 50)
        with pytest.raises(ValueError):
            epsilon_nash_check(ref_params, ref_law, ref_bundle, ref_sol, 8, 4, family, streams, 50, deviant=8)

    def test_default_family_composition(self):
        family = default_family()
        assert [s.name for s in family] == [
            "law_x0.5", "law_x0.8", "law_x1", "law_x1.2", "law_x1.5", "zero_control",
        ]
        assert default_family(include_zero=False)[-1].name == "law_x1.5"


class TestEpsilonTrend:
    def test_exact_inverse_root(self):
        ns = np.array([16, 64, 256, 1024])
        fit = epsilon_trend(ns, 2.0 / np.sqrt(ns))
        assert fit.coeff == pytest.approx(2.0, rel=1e-12)
        assert fit.n_used == 4
        assert fit.slope == pytest.approx(-0.5, abs=1e-12)
        assert fit.value_at(4096) == pytest.approx(2.0 / 64.0, rel=1e-12)

    def test_all_zero(self):
        fit = epsilon_trend([16, 64], [0.0, 0.0])
        assert fit.coeff == 0.0
        assert fit.n_used == 0
        assert fit.value_at(1024) == 0.0

    def test_partial_zero(self):
        fit = epsilon_trend([16, 64, 256], [0.0, 1e-3, 0.0])
        assert fit.n_used == 1
        assert fit.coeff == pytest.approx(8e-3, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            epsilon_trend([1, 2], [1.0])
