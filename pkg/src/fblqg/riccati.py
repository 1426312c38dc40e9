"""Backward coefficient equations of the decentralized strategy.

All coefficient functions live on [0, T] with terminal data:

    beta' = -(2A + sigma^2) beta + R^-1 B^2 beta^2 - Q,        beta(T) = 0
    alpha' = -(A + C - R^-1 B^2 beta) alpha - theta6,          alpha(T) = -K
    zeta'  = -(A + C - R^-1 B^2 beta) zeta  + theta6,          zeta(T)  = K
    xi'    = -2C xi - (R^-1 BD - R^-1 B^2 alpha) zeta
             - R^-1 D^2 + R^-1 BD alpha,                       xi(T) = 0

with theta6 = R^-1 BD beta - H.  The quartet is integrated jointly (one RK4
state) on a doubled grid so every stage sees exact coefficient values; the
doubled-grid samples are kept for downstream integrations.  The Riccati
equation also has a closed form, used both as a cross-check and as an exact
evaluator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DeterministicPath, ModelParams, TimeGrid
from .numerics import NumericsError, trapezoid_values

__all__ = [
    "StageValues",
    "RiccatiBundle",
    "ContractionReport",
    "beta_closed_values",
    "solve_beta",
    "solve_alpha_zeta",
    "solve_xi",
    "alpha_integral_values",
    "xi_quadrature_values",
    "assemble_thetas",
    "solve_bundle",
    "check_h2",
    "panel_simpson_suffix",
]


@dataclass(frozen=True)
class StageValues:
    """Coefficient samples on the doubled grid (nodes plus midpoints).

    Downstream RK4 passes on the solver grid read their half-step stage
    values here instead of interpolating, which keeps them fourth order.
    ibar(t) = int_t^T (A - R^-1 B^2 beta) dr.
    """

    times: np.ndarray
    h: float
    beta: np.ndarray
    alpha: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray
    ibar: np.ndarray


@dataclass(frozen=True)
class ContractionReport:
    kappa: float
    satisfied: bool
    terms: tuple[float, float, float]
    theta_bars: tuple[float, float, float, float]
    gamma_bar: float


@dataclass(frozen=True)
class RiccatiBundle:
    """Solved coefficient paths and the derived aggregates used everywhere else."""

    params: ModelParams
    grid: TimeGrid
    beta: DeterministicPath
    alpha: DeterministicPath
    zeta: DeterministicPath
    xi: DeterministicPath
    thetas: tuple[DeterministicPath, ...]
    theta_bars: tuple[float, float, float, float]
    gamma_bar: float
    a_cal: DeterministicPath
    kappa: float
    lam: float
    xi0: float
    denom: float
    stage: StageValues


def beta_closed_values(p: ModelParams, times) -> np.ndarray:
    """Exact Riccati solution at arbitrary times.

    Generic case (lam > 0), written with decaying exponentials so large
    lam*(T-t) cannot overflow; Q = 0 gives identically zero, and the
    remaining degenerate case (B = 0 with A + sigma^2/2 = 0) is linear
    growth Q*(T-t).
    """
    t = np.asarray(times, dtype=float)
    if p.Q == 0.0:
        return np.zeros_like(t)
    theta = p.A + 0.5 * p.sigma**2
    lam = np.sqrt(theta**2 + p.B**2 * p.Q / p.R)
    if lam == 0.0:
        return p.Q * (p.T - t)
    # expm1 keeps the near-degenerate case lam*(T-t) << 1 from cancelling;
    # algebraically (lam-theta) + (lam+theta)e = lam(1+e) + theta(e-1)
    e = np.exp(-2.0 * lam * (p.T - t))
    em1 = np.expm1(-2.0 * lam * (p.T - t))
    return -p.Q * em1 / (lam * (1.0 + e) + theta * em1)


def _stage_pass(p: ModelParams, grid: TimeGrid) -> StageValues:
    """Joint backward RK4 of (beta, alpha, zeta, xi, ibar) on the doubled grid.

    Plain float arithmetic: this is the hot deterministic kernel and a
    Python-scalar loop beats per-step numpy dispatch at these sizes.
    """
    m2 = 2 * grid.M
    hf = grid.T / m2
    A, C, H, K, Q = p.A, p.C, p.H, p.K, p.Q
    c2a = 2.0 * A + p.sigma**2
    rb2 = p.B * p.B / p.R
    rbd = p.B * p.D / p.R
    rd2 = p.D * p.D / p.R
    apc = A + C
    twoC = 2.0 * C

    # reversed-time rhs: d/ds of (beta, alpha, zeta, xi, ibar) at s = T - t
    def f(b, a, z, x, ib):
        th6 = rbd * b - H
        g = apc - rb2 * b
        return (
            c2a * b - rb2 * b * b + Q,
            g * a + th6,
            g * z - th6,
            twoC * x + (rbd - rb2 * a) * z + rd2 - rbd * a,
            A - rb2 * b,
        )

    out = np.empty((m2 + 1, 5))
    b, a, z, x, ib = 0.0, -K, K, 0.0, 0.0
    out[m2] = (b, a, z, x, ib)
    half = 0.5 * hf
    sixth = hf / 6.0
    for j in range(m2):
        k1 = f(b, a, z, x, ib)
        k2 = f(
            b + half * k1[0],
            a + half * k1[1],
            z + half * k1[2],
            x + half * k1[3],
            ib + half * k1[4],
        )
        k3 = f(
            b + half * k2[0],
            a + half * k2[1],
            z + half * k2[2],
            x + half * k2[3],
            ib + half * k2[4],
        )
        k4 = f(
            b + hf * k3[0],
            a + hf * k3[1],
            z + hf * k3[2],
            x + hf * k3[3],
            ib + hf * k3[4],
        )
        b += sixth * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0])
        a += sixth * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1])
        z += sixth * (k1[2] + 2.0 * (k2[2] + k3[2]) + k4[2])
        x += sixth * (k1[3] + 2.0 * (k2[3] + k3[3]) + k4[3])
        ib += sixth * (k1[4] + 2.0 * (k2[4] + k3[4]) + k4[4])
        out[m2 - 1 - j] = (b, a, z, x, ib)
    if not np.all(np.isfinite(out)):
        raise NumericsError("backward coefficient pass produced non-finite values")
    times = np.linspace(0.0, grid.T, m2 + 1)
    return StageValues(
        times=times,
        h=hf,
        beta=out[:, 0].copy(),
        alpha=out[:, 1].copy(),
        zeta=out[:, 2].copy(),
        xi=out[:, 3].copy(),
        ibar=out[:, 4].copy(),
    )


def panel_simpson_suffix(g_fine: np.ndarray, h: float) -> np.ndarray:
    """Suffix integrals int_{t_k}^T g dv from doubled-grid samples of g.

    One Simpson panel per solver interval (midpoint from the doubled grid),
    so integrands that are smooth within intervals but kinked at nodes are
    still integrated at fourth order.  Returns an array over solver nodes.
    """
    s = (h / 6.0) * (g_fine[0:-2:2] + 4.0 * g_fine[1:-1:2] + g_fine[2::2])
    out = np.zeros(len(s) + 1)
    out[:-1] = np.cumsum(s[::-1])[::-1]
    return out


def solve_beta(p: ModelParams, grid: TimeGrid) -> tuple[DeterministicPath, DeterministicPath]:
    """Riccati solution by closed form and by RK4; returns (closed, integrated).

    The two must track each other; the caller (and the acceptance suite)
    compares them, so no tolerance is enforced here.
    """
    closed = DeterministicPath(grid, beta_closed_values(p, grid.nodes))

    c2a = 2.0 * p.A + p.sigma**2
    rb2 = p.B * p.B / p.R
    Q = p.Q
    h = grid.h
    half = 0.5 * h
    sixth = h / 6.0
    vals = np.empty(grid.M + 1)
    b = 0.0
    vals[grid.M] = b
    for j in range(grid.M):
        k1 = c2a * b - rb2 * b * b + Q
        s = b + half * k1
        k2 = c2a * s - rb2 * s * s + Q
        s = b + half * k2
        k3 = c2a * s - rb2 * s * s + Q
        s = b + h * k3
        k4 = c2a * s - rb2 * s * s + Q
        b += sixth * (k1 + 2.0 * (k2 + k3) + k4)
        vals[grid.M - 1 - j] = b
    if not np.all(np.isfinite(vals)):
        raise NumericsError("Riccati RK4 produced non-finite values")
    return closed, DeterministicPath(grid, vals)


def alpha_integral_values(p: ModelParams, stage: StageValues) -> np.ndarray:
    """alpha at solver nodes from its variation-of-constants representation

        alpha(t) = -K e^{C(T-t)} Gamma_t^T + int_t^T e^{C(v-t)} Gamma_t^v theta6(v) dv

    with Gamma_s^t = exp(int_s^t aCal); evaluated with panel Simpson."""
    th6 = (p.B * p.D / p.R) * stage.beta - p.H
    g = np.exp(p.C * stage.times - stage.ibar) * th6
    suffix = panel_simpson_suffix(g, 2.0 * stage.h)
    t = stage.times[::2]
    ibar = stage.ibar[::2]
    return np.exp(ibar - p.C * t) * (-p.K * np.exp(p.C * p.T) + suffix)


def xi_quadrature_values(p: ModelParams, stage: StageValues) -> np.ndarray:
    """xi at solver nodes from xi(t) = int_t^T e^{2C(v-t)} R^-1 (B alpha - D)^2 dv."""
    g = np.exp(2.0 * p.C * stage.times) * (p.B * stage.alpha - p.D) ** 2 / p.R
    suffix = panel_simpson_suffix(g, 2.0 * stage.h)
    return np.exp(-2.0 * p.C * stage.times[::2]) * suffix


def _guard_tol(values: np.ndarray) -> float:
    return 1e-5 * (1.0 + float(np.max(np.abs(values))))


def solve_alpha_zeta(
    p: ModelParams, beta: DeterministicPath, grid: TimeGrid
) -> tuple[DeterministicPath, DeterministicPath]:
    """Solve the alpha and zeta equations; zeta(T) = K = -alpha(T).

    beta must be a solution from solve_beta on the same grid (checked).  The
    returned alpha additionally has to match its integral representation,
    which is recomputed here as a guard.
    """
    stage = _stage_pass(p, grid)
    if beta.grid != grid or np.max(np.abs(beta.values - stage.beta[::2])) > _guard_tol(
        stage.beta
    ):
        raise ValueError("beta path inconsistent with the parameters or grid")
    alpha_vals = stage.alpha[::2]
    formula = alpha_integral_values(p, stage)
    if np.max(np.abs(alpha_vals - formula)) > _guard_tol(alpha_vals):
        raise NumericsError("alpha ODE and integral representation disagree")
    return DeterministicPath(grid, alpha_vals), DeterministicPath(grid, stage.zeta[::2])


def solve_xi(
    p: ModelParams,
    alpha: DeterministicPath,
    zeta: DeterministicPath,
    grid: TimeGrid,
) -> DeterministicPath:
    """Solve the xi equation and verify it against its quadrature form.

    xi(t) = int_t^T e^{2C(v-t)} R^-1 (B alpha(v) - D)^2 dv >= 0, so a
    materially negative solution indicates a broken input.
    """
    stage = _stage_pass(p, grid)
    for name, given, own in (
        ("alpha", alpha, stage.alpha[::2]),
        ("zeta", zeta, stage.zeta[::2]),
    ):
        if given.grid != grid or np.max(np.abs(given.values - own)) > _guard_tol(own):
            raise ValueError(f"{name} path inconsistent with the parameters or grid")
    xi_vals = stage.xi[::2]
    quad = xi_quadrature_values(p, stage)
    if np.max(np.abs(xi_vals - quad)) > _guard_tol(xi_vals):
        raise NumericsError("xi ODE and quadrature representation disagree")
    if np.min(xi_vals) < -1e-9 * (1.0 + float(np.max(np.abs(xi_vals)))):
        raise NumericsError("xi is materially negative")
    return DeterministicPath(grid, xi_vals)


def assemble_thetas(
    p: ModelParams,
    beta: DeterministicPath,
    alpha: DeterministicPath,
    zeta: DeterministicPath,
    xi: DeterministicPath,
    stage: StageValues | None = None,
) -> RiccatiBundle:
    """Build the theta paths, their integrated magnitudes, and the contraction data."""
    grid = beta.grid
    if any(q.grid != grid for q in (alpha, zeta, xi)):
        raise ValueError("coefficient paths live on different grids")
    if stage is None:
        stage = _stage_pass(p, grid)
    b, a, z, x = beta.values, alpha.values, zeta.values, xi.values
    xi0 = float(x[0])
    denom = 1.0 + xi0 * p.N0
    th1 = (p.B**2 * a - p.B * p.D) / p.R * (p.N0 / denom)
    th2 = -(p.B**2 * z + p.B * p.D) / p.R
    th3 = p.F * b - p.Q * p.S
    th4 = p.F * z + p.L
    th5 = (p.B * a - p.D) / p.R * (p.N0 / denom)
    th6 = (p.B * p.D / p.R) * b - p.H
    a_cal = p.A - (p.B**2 / p.R) * b

    h = grid.h
    tb = tuple(float(trapezoid_values(np.abs(v), h)) for v in (th1, th2, th3, th4))
    gamma_bar = float(np.exp(trapezoid_values(np.abs(a_cal), h)))
    e_cf = np.exp((2.0 * abs(p.C) + abs(p.F)) * p.T)
    e_f = np.exp(abs(p.F) * p.T)
    terms = (
        e_cf * gamma_bar**2 * tb[0] * tb[1] * tb[2],
        e_cf * gamma_bar * tb[0] * tb[3],
        e_f * (p.B**2 / p.R) * p.T * gamma_bar**2 * tb[2],
    )
    lam = float(np.sqrt((p.A + 0.5 * p.sigma**2) ** 2 + p.B**2 * p.Q / p.R))
    mk = lambda v: DeterministicPath(grid, v)
    return RiccatiBundle(
        params=p,
        grid=grid,
        beta=beta,
        alpha=alpha,
        zeta=zeta,
        xi=xi,
        thetas=tuple(mk(v) for v in (th1, th2, th3, th4, th5, th6)),
        theta_bars=tb,
        gamma_bar=gamma_bar,
        a_cal=mk(a_cal),
        kappa=float(sum(terms)),
        lam=lam,
        xi0=xi0,
        denom=denom,
        stage=stage,
    )


def solve_bundle(p: ModelParams, grid: TimeGrid) -> RiccatiBundle:
    """One joint backward pass, cross-checks, and theta assembly."""
    stage = _stage_pass(p, grid)
    closed = beta_closed_values(p, grid.nodes)
    beta_vals = stage.beta[::2]
    if np.max(np.abs(beta_vals - closed)) > _guard_tol(beta_vals):
        raise NumericsError("Riccati RK4 and closed form disagree")
    alpha_vals = stage.alpha[::2]
    if np.max(np.abs(alpha_vals - alpha_integral_values(p, stage))) > _guard_tol(alpha_vals):
        raise NumericsError("alpha ODE and integral representation disagree")
    xi_vals = stage.xi[::2]
    if np.max(np.abs(xi_vals - xi_quadrature_values(p, stage))) > _guard_tol(xi_vals):
        raise NumericsError("xi ODE and quadrature representation disagree")
    grid_paths = [DeterministicPath(grid, v) for v in (beta_vals, alpha_vals, stage.zeta[::2], xi_vals)]
    return assemble_thetas(p, *grid_paths, stage=stage)


def check_h2(bundle: RiccatiBundle, p: ModelParams) -> ContractionReport:
    """Contraction test for the consistency map: kappa < 1 certifies the fixed point.

    kappa = e^{(2|C|+|F|)T} GammaBar^2 ThetaBar1 ThetaBar2 ThetaBar3
          + e^{(2|C|+|F|)T} GammaBar ThetaBar1 ThetaBar4
          + e^{|F|T} R^-1 B^2 T GammaBar^2 ThetaBar3
    """
    tb = bundle.theta_bars
    gb = bundle.gamma_bar
    e_cf = np.exp((2.0 * abs(p.C) + abs(p.F)) * p.T)
    e_f = np.exp(abs(p.F) * p.T)
    terms = (
        float(e_cf * gb**2 * tb[0] * tb[1] * tb[2]),
        float(e_cf * gb * tb[0] * tb[3]),
        float(e_f * (p.B**2 / p.R) * p.T * gb**2 * tb[2]),
    )
    kappa = float(sum(terms))
    return ContractionReport(
        kappa=kappa,
        satisfied=bool(kappa < 1.0),
        terms=terms,
        theta_bars=tb,
        gamma_bar=gb,
    )
