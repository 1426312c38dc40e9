"""Feedback assembly and the decoupling ansatz.

The recorded controls of the simulator and the closed-form feedback must
agree bit for bit, and the reconstructed adjoint/backward fields must tie
out at the terminal node without tolerance.
"""

import numpy as np
import pytest

from fblqg import (
    DeterministicPath,
    TimeGrid,
    build_kit,
    decouple_fields,
    feedback_control,
    k_hat_path,
    picard_solve,
    simulate_population,
    solve_bundle,
    y0_hat,
)

from conftest import reference_params


def test_y0_hat_arithmetic():
    assert y0_hat(1.5, 2.0, 0.5, 1.0, 1.0) == 1.75
    assert y0_hat(1.5, 2.0, 0.5, 7.0, 0.0) == 3.5
    out = y0_hat(np.array([0.0, 1.0]), 2.0, 0.5, 1.0, 1.0)
    assert np.array_equal(out, np.array([0.25, 1.25]))


def test_offset_scale_affine(ref_kit):
    xs = np.array([-1.0, 0.0, 2.0])
    assert np.array_equal(ref_kit.offset_scale(xs), ref_kit.zeta0 * xs + ref_kit.tau0)


def test_k_hat_path_exponential(ref_kit):
    k = k_hat_path(ref_kit, 1.2)
    scale = ref_kit.k_coef * (ref_kit.zeta0 * 1.2 + ref_kit.tau0)
    assert k.values[0] == pytest.approx(scale, rel=1e-15)
    growth = k.values[1:] / k.values[:-1]
    assert np.allclose(growth, np.exp(ref_kit.params.C * ref_kit.grid.h), rtol=1e-12)


def test_k_hat_path_coarse_grid(ref_kit):
    coarse = TimeGrid(ref_kit.grid.T, 40)
    k = k_hat_path(ref_kit, 0.7, grid=coarse)
    assert len(k.values) == 41


def test_build_kit_grid_mismatch():
    p = reference_params()
    b1 = solve_bundle(p, TimeGrid(p.T, 400))
    b2 = solve_bundle(p, TimeGrid(p.T, 200))
    sol2 = picard_solve(b2, p, 1.0)
    with pytest.raises(ValueError):
        build_kit(p, b1, sol2)


def test_recorded_controls_match_feedback(ref_params, ref_law, ref_bundle, ref_sol, ref_kit, streams):
    res = simulate_population(ref_params, ref_law, ref_bundle, ref_sol, 6, 400, streams)
    t = res.grid.nodes
    for i in range(res.n):
        u = feedback_control(ref_kit, t, res.x_paths[i], res.initials[i])
        assert np.array_equal(u, res.u_paths[i])


def test_terminal_identities(ref_params, ref_law, ref_bundle, ref_sol, streams):
    res = simulate_population(ref_params, ref_law, ref_bundle, ref_sol, 4, 50, streams)
    grid = res.grid
    for i in range(res.n):
        path = DeterministicPath(grid, res.x_paths[i])
        f = decouple_fields(path, res.initials[i], ref_params, ref_bundle, ref_sol)
        assert f.y_hat.values[-1] == ref_params.K * path.values[-1]
        assert f.p_hat.values[-1] == -ref_params.K * f.k_hat.values[-1]


def test_pontryagin_route_matches_feedback(ref_params, ref_law, ref_bundle, ref_sol, ref_kit, streams):
    """u = R^-1 (D k_hat - B p_hat) must reproduce the affine feedback."""
    p = ref_params
    res = simulate_population(p, ref_law, ref_bundle, ref_sol, 10, 100, streams)
    grid = res.grid
    worst = 0.0
    for i in range(res.n):
        path = DeterministicPath(grid, res.x_paths[i])
        f = decouple_fields(path, res.initials[i], p, ref_bundle, ref_sol)
        u_adj = (p.D * f.k_hat.values - p.B * f.p_hat.values) / p.R
        worst = max(worst, float(np.max(np.abs(u_adj - res.u_paths[i]))))
    assert worst <= 1e-10, worst


def test_decoupled_noise_fields(ref_params, ref_bundle, ref_sol):
    grid = TimeGrid(ref_params.T, 50)
    path = DeterministicPath(grid, np.linspace(1.0, 2.0, 51))
    f = decouple_fields(path, 1.0, ref_params, ref_bundle, ref_sol)
    q = ref_params.sigma * ref_bundle.beta.at(grid.nodes) * path.values
    z = ref_params.sigma * ref_bundle.zeta.at(grid.nodes) * path.values
    assert np.array_equal(f.q_hat.values, q)
    assert np.array_equal(f.z_hat.values, z)


def test_y0_matches_kit_constants(ref_kit, ref_bundle, ref_sol):
    x0 = 0.9
    direct = y0_hat(x0, ref_kit.zeta0, ref_kit.tau0, ref_kit.xi0, ref_kit.params.N0)
    assert direct == (ref_kit.zeta0 * x0 + ref_kit.tau0) / ref_kit.denom
