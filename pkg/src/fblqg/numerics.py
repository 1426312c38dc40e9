"""Deterministic numeric kernels: fixed-step RK4, trapezoid quadrature, log-log OLS fit."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import DeterministicPath, TimeGrid

__all__ = [
    "NumericsError",
    "OdeProblem",
    "rk4_march",
    "rk4_solve",
    "trapezoid",
    "trapezoid_values",
    "loglog_slope",
]


class NumericsError(RuntimeError):
    """Raised when an integration produces non-finite values."""


@dataclass(frozen=True)
class OdeProblem:
    """First-order ODE y' = rhs(t, y) with the boundary value given either at
    t=0 (terminal=False) or at t=T (terminal=True)."""

    rhs: Callable
    boundary_value: float
    terminal: bool = False


def rk4_march(rhs: Callable, times: np.ndarray, y0) -> np.ndarray:
    """Classical RK4 over the given strictly increasing times.

    Returns an array of shape (len(times),) + shape(y0).  The state may be a
    scalar or a small vector; rhs must return the same shape.
    """
    y = np.asarray(y0, dtype=float)
    out = np.empty((len(times),) + y.shape)
    out[0] = y
    for j in range(len(times) - 1):
        t = times[j]
        h = times[j + 1] - t
        k1 = np.asarray(rhs(t, y))
        k2 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k1))
        k3 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k2))
        k4 = np.asarray(rhs(t + h, y + h * k3))
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[j + 1] = y
    if not np.all(np.isfinite(out)):
        raise NumericsError("RK4 produced non-finite values")
    return out


def rk4_solve(problem: OdeProblem, grid: TimeGrid) -> DeterministicPath:
    """Integrate a scalar ODE over the grid and return the sampled solution.

    Terminal-value problems are integrated in reversed time s = T - t (the
    sign-flipped forward problem) and the samples re-indexed, so the two
    directions are exactly symmetric.
    """
    nodes = grid.nodes
    if problem.terminal:
        rev = lambda s, y: -np.asarray(problem.rhs(grid.T - s, y))
        vals = rk4_march(rev, nodes, problem.boundary_value)[::-1]
    else:
        vals = rk4_march(problem.rhs, nodes, problem.boundary_value)
    return DeterministicPath(grid, vals)


def trapezoid_values(values: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    """Composite trapezoid of uniformly sampled values along an axis."""
    v = np.asarray(values, dtype=float)
    ends = np.take(v, [0, -1], axis=axis).sum(axis=axis)
    return h * (v.sum(axis=axis) - 0.5 * ends)


def trapezoid(path: DeterministicPath) -> float:
    """Integral of a sampled path over [0, T] by the composite trapezoid rule."""
    return float(trapezoid_values(path.values, path.grid.h))


def loglog_slope(xs, ys) -> tuple[float, float, float]:
    """OLS fit of log ys against log xs.

    Returns (slope, intercept, stderr_of_slope).  Requires at least three
    strictly positive points so the residual variance is estimable.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or len(xs) < 3:
        raise ValueError("need at least three paired points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit requires strictly positive data")
    lx = np.log(xs)
    ly = np.log(ys)
    n = len(lx)
    mx = lx.mean()
    sxx = np.sum((lx - mx) ** 2)
    if sxx == 0:
        raise ValueError("xs must not be all equal")
    slope = np.sum((lx - mx) * ly) / sxx
    intercept = ly.mean() - slope * mx
    resid = ly - (intercept + slope * lx)
    sigma2 = np.sum(resid**2) / (n - 2)
    stderr = float(np.sqrt(sigma2 / sxx))
    return float(slope), float(intercept), stderr
