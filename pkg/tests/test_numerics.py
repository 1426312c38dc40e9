import numpy as np
import pytest

from fblqg import (
    DeterministicPath,
    NumericsError,
    OdeProblem,
    TimeGrid,
    loglog_slope,
    rk4_march,
    rk4_solve,
    trapezoid,
    trapezoid_values,
)


def test_rk4_fourth_order():
    """Error on y' = cos(t) y should shrink ~16x per halving."""
    rhs = lambda t, y: np.cos(t) * y
    exact = np.exp(np.sin(2.0))
    errs = []
    for m in (20, 40, 80):
        times = np.linspace(0.0, 2.0, m + 1)
        errs.append(abs(rk4_march(rhs, times, 1.0)[-1] - exact))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    assert all(12.0 < r < 20.0 for r in ratios), ratios


def test_rk4_vector_state():
    # harmonic oscillator keeps energy to O(h^4)
    rhs = lambda t, y: np.array([y[1], -y[0]])
    times = np.linspace(0.0, 2 * np.pi, 401)
    out = rk4_march(rhs, times, np.array([1.0, 0.0]))
    assert out.shape == (401, 2)
    assert abs(out[-1, 0] - 1.0) < 1e-8
    assert abs(out[-1, 1]) < 1e-8


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_rk4_nonfinite_raises():
    # y' = y^2 from y(0)=1 blows up at t=1
    with pytest.raises(NumericsError):
        rk4_march(lambda t, y: y * y, np.linspace(0.0, 2.0, 101), 1.0)


def test_rk4_solve_initial_value():
    grid = TimeGrid(1.5, 300)
    sol = rk4_solve(OdeProblem(rhs=lambda t, y: -2.0 * y, boundary_value=3.0), grid)
    assert sol.values[0] == 3.0
    assert np.max(np.abs(sol.values - 3.0 * np.exp(-2.0 * grid.nodes))) < 1e-10


def test_rk4_solve_terminal_value():
    """Terminal problems integrate in reflected time; the boundary node is exact."""
    grid = TimeGrid(1.5, 600)
    sol = rk4_solve(
        OdeProblem(rhs=lambda t, y: -2.0 * y, boundary_value=3.0, terminal=True), grid
    )
    assert sol.values[-1] == 3.0
    assert np.max(np.abs(sol.values - 3.0 * np.exp(-2.0 * (grid.nodes - 1.5)))) < 1e-8


def test_trapezoid_exact_on_linear():
    grid = TimeGrid(2.0, 7)
    path = DeterministicPath(grid, 3.0 * grid.nodes - 1.0)
    assert trapezoid(path) == pytest.approx(4.0, abs=1e-14)


def test_trapezoid_values_matches_numpy():
    rng = np.random.default_rng(5)
    v = rng.normal(size=(4, 11))
    h = 0.3
    mine = trapezoid_values(v, h, axis=-1)
    ref = np.trapezoid(v, dx=h, axis=-1) if hasattr(np, "trapezoid") else np.trapz(v, dx=h, axis=-1)
    assert np.allclose(mine, ref, atol=1e-14)
    assert mine.shape == (4,)


def test_trapezoid_values_axis0():
    v = np.arange(12.0).reshape(3, 4)
    out = trapezoid_values(v, 0.5, axis=0)
    assert out.shape == (4,)
    assert np.allclose(out, trapezoid_values(v.T, 0.5, axis=-1))


def test_loglog_slope_recovers_power_law():
    xs = np.array([8.0, 16.0, 32.0, 64.0, 128.0])
    ys = 3.0 * xs**-1.5
    slope, intercept, se = loglog_slope(xs, ys)
    assert slope == pytest.approx(-1.5, abs=1e-12)
    assert intercept == pytest.approx(np.log(3.0), abs=1e-12)
    assert se < 1e-12


def test_loglog_slope_validation():
    with pytest.raises(ValueError):
        loglog_slope([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        loglog_slope([1.0, 2.0, 3.0], [1.0, -2.0, 3.0])
    with pytest.raises(ValueError):
        loglog_slope([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
