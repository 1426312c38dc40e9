"""Monte Carlo simulation of the population and its mean-field limit.

One Euler-Maruyama engine drives every run type; each agent's control is the
affine feedback u_i = a_i(t) x_i + b_i(t), and the runs differ only in the
coupling term (empirical average vs frozen limiting average) and in the
deviating agent's (a, b).  The engine uses synchronous coupling (the average
entering step k is the step-k state average) and per-agent Brownian
substreams, so population, limiting and perturbed runs with the same
(seed, replication) are driven by identical noise.

Backward initial values are never simulated.  For the linear driver the
tower property gives

    y_i(0) = E[ e^{CT} K x_i(T) + int_0^T e^{Ct} f_i(t) dt | x(0) ],
    f_i = D u_i + H x_i + L xavg,

and the conditional means solve deterministic ODEs; both reductions below
(equilibrium population, single deviator) are affine in the initial draws,
so their coefficients are integrated once on the solver grid and reused.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .consistency import ConsistencySolution
from .model import InitialLaw, ModelParams, RngStreams, TimeGrid, sample_initials
from .numerics import NumericsError
from .riccati import RiccatiBundle
from .strategy import y0_hat

__all__ = [
    "PopulationResult",
    "LimitingResult",
    "PerturbationSpec",
    "Y0Coefficients",
    "DeviationReduction",
    "simulate_population",
    "simulate_limiting",
    "simulate_perturbed",
    "backward_y0_population",
    "y0_coefficients",
    "deviation_y0",
]


@dataclass
class PopulationResult:
    grid: TimeGrid
    x_paths: np.ndarray
    u_paths: np.ndarray
    xavg_path: np.ndarray
    initials: np.ndarray
    master_seed: int
    replication: int
    deviant: int | None = None
    y0: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.initials)


@dataclass
class LimitingResult:
    grid: TimeGrid
    x_paths: np.ndarray
    u_paths: np.ndarray
    xbar_nodes: np.ndarray
    initials: np.ndarray
    master_seed: int
    replication: int
    y0: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.initials)


@dataclass(frozen=True)
class PerturbationSpec:
    """Admissible deviation: bounded affine feedback a(t) x + b(t, x_i0).

    Either law_scale is set (the equilibrium law scaled by a constant, the
    bit-stable path used for self-deviation) or both callables are given.
    """

    name: str
    law_scale: float | None = None
    gain: Callable | None = None
    offset: Callable | None = None

    def __post_init__(self):
        if self.law_scale is None:
            if self.gain is None or self.offset is None:
                raise ValueError("custom deviation needs both gain and offset")
        elif self.gain is not None or self.offset is not None:
            raise ValueError("law_scale excludes custom callables")

    @classmethod
    def scaled(cls, scale: float, name: str | None = None) -> "PerturbationSpec":
        return cls(name=name or f"law_x{scale:g}", law_scale=float(scale))

    @classmethod
    def zero(cls) -> "PerturbationSpec":
        return cls(name="zero_control", law_scale=0.0)

    @classmethod
    def custom(cls, name: str, gain: Callable, offset: Callable) -> "PerturbationSpec":
        return cls(name=name, gain=gain, offset=offset)


def _node_arrays(p: ModelParams, bundle: RiccatiBundle, sol: ConsistencySolution, times):
    """Feedback pieces at the simulation nodes: gain g, offset shape w, offset base v."""
    g = -(p.B / p.R) * bundle.beta.at(times)
    w = bundle.thetas[4].at(times) * np.exp(p.C * times)
    v = -(p.B / p.R) * sol.gamma.at(times)
    return g, w, v


def _euler(p, times, initials, increments, gains, offsets, coupling):
    """Advance all agents; coupling is None for the empirical average or a
    node array for a frozen target.  Returns (states, controls)."""
    n = len(initials)
    m = len(times) - 1
    h = times[1] - times[0]
    x = np.array(initials, dtype=float)
    xs = np.empty((n, m + 1))
    us = np.empty((n, m + 1))
    for k in range(m):
        xs[:, k] = x
        u = gains[:, k] * x + offsets[:, k]
        us[:, k] = u
        target = x.mean() if coupling is None else coupling[k]
        x = x + (p.A * x + p.B * u + p.F * target) * h + p.sigma * x * increments[:, k]
        if not np.all(np.isfinite(x)):
            raise NumericsError(f"non-finite state at Euler step {k + 1}")
    xs[:, m] = x
    us[:, m] = gains[:, m] * x + offsets[:, m]
    return xs, us


def _draws(law, n, m, h, streams, replication, initials, increments):
    if initials is None:
        initials = sample_initials(law, n, streams, replication)
    else:
        initials = np.asarray(initials, dtype=float)
        if initials.shape != (n,):
            raise ValueError("initials must have shape (n,)")
    if increments is None:
        increments = streams.brownian_increments(n, m, h, replication)
    else:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (n, m):
            raise ValueError("increments must have shape (n, m)")
    return initials, increments


def simulate_population(
    p: ModelParams,
    law: InitialLaw,
    bundle: RiccatiBundle,
    sol: ConsistencySolution,
    n: int,
    m: int,
    streams: RngStreams,
    replication: int = 0,
    *,
    initials: np.ndarray | None = None,
    increments: np.ndarray | None = None,
) -> PopulationResult:
    """All N agents under the decentralized strategies, coupled through the
    empirical state average."""
    grid = TimeGrid(p.T, m)
    times = grid.nodes
    initials, increments = _draws(law, n, m, grid.h, streams, replication, initials, increments)
    g, w, v = _node_arrays(p, bundle, sol, times)
    c = bundle.zeta.values[0] * initials + sol.tau.values[0]
    offsets = c[:, None] * w[None, :] + v[None, :]
    gains = np.broadcast_to(g, (n, m + 1))
    xs, us = _euler(p, times, initials, increments, gains, offsets, None)
    return PopulationResult(
        grid=grid,
        x_paths=xs,
        u_paths=us,
        xavg_path=xs.mean(axis=0),
        initials=initials,
        master_seed=streams.master_seed,
        replication=replication,
    )


def simulate_limiting(
    p: ModelParams,
    law: InitialLaw,
    bundle: RiccatiBundle,
    sol: ConsistencySolution,
    n: int,
    m: int,
    streams: RngStreams,
    replication: int = 0,
    *,
    initials: np.ndarray | None = None,
    increments: np.ndarray | None = None,
) -> LimitingResult:
    """The same agents decoupled: the interaction term is the solved limiting
    average, and the noise reuses the population substreams (common random
    numbers), so with F = 0 the paths coincide with the population run."""
    grid = TimeGrid(p.T, m)
    times = grid.nodes
    initials, increments = _draws(law, n, m, grid.h, streams, replication, initials, increments)
    g, w, v = _node_arrays(p, bundle, sol, times)
    c = bundle.zeta.values[0] * initials + sol.tau.values[0]
    offsets = c[:, None] * w[None, :] + v[None, :]
    gains = np.broadcast_to(g, (n, m + 1))
    xbar_nodes = sol.xbar.at(times)
    xs, us = _euler(p, times, initials, increments, gains, offsets, xbar_nodes)
    return LimitingResult(
        grid=grid,
        x_paths=xs,
        u_paths=us,
        xbar_nodes=xbar_nodes,
        initials=initials,
        master_seed=streams.master_seed,
        replication=replication,
        y0=y0_hat(initials, bundle.zeta.values[0], sol.tau.values[0], bundle.xi0, p.N0),
    )


def simulate_perturbed(
    p: ModelParams,
    law: InitialLaw,
    bundle: RiccatiBundle,
    sol: ConsistencySolution,
    n: int,
    m: int,
    streams: RngStreams,
    spec: PerturbationSpec,
    deviant: int = 0,
    replication: int = 0,
    *,
    initials: np.ndarray | None = None,
    increments: np.ndarray | None = None,
    reduction: "DeviationReduction | None" = None,
) -> tuple[PopulationResult, float]:
    """Population run with one agent deviating to the given affine feedback;
    also returns the deviator's backward initial value m_i(0) from the
    conditional-mean reduction.

    With law_scale = 1.0 the deviator's rows are the baseline rows multiplied
    by the float 1.0, so the run reproduces the equilibrium run bit for bit.
    A precomputed reduction for (spec, n) may be passed to amortize the three
    basis passes over replications.
    """
    grid = TimeGrid(p.T, m)
    times = grid.nodes
    initials, increments = _draws(law, n, m, grid.h, streams, replication, initials, increments)
    g, w, v = _node_arrays(p, bundle, sol, times)
    c = bundle.zeta.values[0] * initials + sol.tau.values[0]
    offsets = c[:, None] * w[None, :] + v[None, :]
    gains = np.broadcast_to(g, (n, m + 1)).copy()
    if spec.law_scale is not None:
        gains[deviant] = spec.law_scale * g
        offsets[deviant] = spec.law_scale * offsets[deviant]
    else:
        gains[deviant] = np.array([spec.gain(t) for t in times])
        offsets[deviant] = np.array([spec.offset(t, initials[deviant]) for t in times])
    xs, us = _euler(p, times, initials, increments, gains, offsets, None)
    res = PopulationResult(
        grid=grid,
        x_paths=xs,
        u_paths=us,
        xavg_path=xs.mean(axis=0),
        initials=initials,
        master_seed=streams.master_seed,
        replication=replication,
        deviant=deviant,
    )
    if reduction is not None:
        if reduction.n != n or reduction.spec is not spec:
            raise ValueError("reduction was built for a different spec or population size")
        m_i0 = reduction.evaluate(initials, deviant)
    else:
        m_i0 = deviation_y0(res, p, bundle, sol, spec)
    return res, m_i0


@dataclass(frozen=True)
class Y0Coefficients:
    """y_i(0) = ca x_i0 + cc mean(x0) + cb for the equilibrium population.

    The conditional mean of agent i is m_i = phi x_i0 + chi mean(x0) + rho
    (the coupling acts on the average channel only), and the y functional is
    linear in the means, so three forward ODE passes determine everything.
    """

    ca: float
    cb: float
    cc: float

    def evaluate(self, initials: np.ndarray) -> np.ndarray:
        initials = np.asarray(initials, dtype=float)
        return self.ca * initials + self.cc * initials.mean() + self.cb


def y0_coefficients(
    p: ModelParams, bundle: RiccatiBundle, sol: ConsistencySolution
) -> Y0Coefficients:
    """Integrate the (phi, chi, rho) mean system and the three accumulated
    y-functional integrals on the solver grid (stage values from the
    doubled-grid samples, so the pass is fourth order)."""
    st = bundle.stage
    grid = bundle.grid
    mm = grid.M
    h = grid.h
    half = 0.5 * h
    sixth = h / 6.0

    acal = (p.A - (p.B**2 / p.R) * st.beta).tolist()
    th1e = (
        (p.B**2 * st.alpha - p.B * p.D) / p.R * (p.N0 / bundle.denom)
        * np.exp(p.C * st.times)
    ).tolist()
    w_f = (
        (p.B * st.alpha - p.D) / p.R * (p.N0 / bundle.denom) * np.exp(p.C * st.times)
    ).tolist()
    hb = (p.H - (p.B * p.D / p.R) * st.beta).tolist()
    ecr = np.exp(p.C * st.times).tolist()
    gam = sol.stage_gamma.tolist()
    zeta0 = float(bundle.zeta.values[0])
    tau0 = float(sol.tau.values[0])
    rb2 = p.B**2 / p.R
    rbd = p.B * p.D / p.R
    F, L, D = p.F, p.L, p.D

    def f(i, y):
        phi, chi, rho, pa, pc, pb = y
        return (
            acal[i] * phi + zeta0 * th1e[i],
            acal[i] * chi + F * (phi + chi),
            acal[i] * rho + tau0 * th1e[i] - rb2 * gam[i] + F * rho,
            ecr[i] * (hb[i] * phi + D * zeta0 * w_f[i]),
            ecr[i] * (hb[i] * chi + L * (phi + chi)),
            ecr[i] * (hb[i] * rho + D * tau0 * w_f[i] - rbd * gam[i] + L * rho),
        )

    y = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    for k in range(mm):
        i1 = 2 * k
        i2 = i1 + 1
        i3 = i1 + 2
        k1 = f(i1, y)
        k2 = f(i2, tuple(a + half * b for a, b in zip(y, k1)))
        k3 = f(i2, tuple(a + half * b for a, b in zip(y, k2)))
        k4 = f(i3, tuple(a + h * b for a, b in zip(y, k3)))
        y = tuple(
            a + sixth * (b1 + 2.0 * (b2 + b3) + b4)
            for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
        )
    phi, chi, rho, pa, pc, pb = y
    ekt = float(np.exp(p.C * p.T)) * p.K
    return Y0Coefficients(ca=ekt * phi + pa, cc=ekt * chi + pc, cb=ekt * rho + pb)


def backward_y0_population(
    res: PopulationResult,
    p: ModelParams,
    bundle: RiccatiBundle,
    sol: ConsistencySolution,
) -> np.ndarray:
    """Backward initial values of every agent in an equilibrium population run."""
    if res.deviant is not None:
        raise ValueError("population reduction is invalid for perturbed runs")
    return y0_coefficients(p, bundle, sol).evaluate(res.initials)


def _deviation_pass(p, bundle, sol, n, a_f, b_f, src_f, mu0, s0):
    """Forward (mu, s, Phi) pass for one deviator against n-1 equilibrium agents.

    mu is the deviator's conditional mean, s the sum of the others', Phi the
    accumulated e^{Ct} driver integral; returns y_1(0)."""
    st = bundle.stage
    mm = bundle.grid.M
    h = bundle.grid.h
    half = 0.5 * h
    sixth = h / 6.0
    acal = (p.A - (p.B**2 / p.R) * st.beta).tolist()
    ecr = np.exp(p.C * st.times).tolist()
    A, B, D, F, H, L = p.A, p.B, p.D, p.F, p.H, p.L
    inv_n = 1.0 / n
    n1 = float(n - 1)

    def f(i, y):
        mu, s, acc = y
        avg = (mu + s) * inv_n
        return (
            A * mu + B * (a_f[i] * mu + b_f[i]) + F * avg,
            acal[i] * s + src_f[i] + n1 * F * avg,
            ecr[i] * ((D * a_f[i] + H) * mu + D * b_f[i] + L * avg),
        )

    y = (float(mu0), float(s0), 0.0)
    for k in range(mm):
        i1 = 2 * k
        i2 = i1 + 1
        i3 = i1 + 2
        k1 = f(i1, y)
        k2 = f(i2, tuple(a + half * b for a, b in zip(y, k1)))
        k3 = f(i2, tuple(a + half * b for a, b in zip(y, k2)))
        k4 = f(i3, tuple(a + h * b for a, b in zip(y, k3)))
        y = tuple(
            a + sixth * (b1 + 2.0 * (b2 + b3) + b4)
            for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
        )
    return float(np.exp(p.C * p.T)) * p.K * y[0] + y[2]


class DeviationReduction:
    """y_1(0) of a law-scaled deviator as an affine function of
    (own draw, sum of the other draws); three basis passes per (spec, n)."""

    def __init__(self, p, bundle, sol, spec: PerturbationSpec, n: int):
        if spec.law_scale is None:
            raise ValueError("affine reduction requires a law_scale deviation")
        self.p, self.bundle, self.sol, self.spec, self.n = p, bundle, sol, spec, n
        st = bundle.stage
        theta = spec.law_scale
        g_f = -(p.B / p.R) * st.beta
        w_f = (p.B * st.alpha - p.D) / p.R * (p.N0 / bundle.denom) * np.exp(
            p.C * st.times
        )
        v_f = -(p.B / p.R) * sol.stage_gamma
        th1e = (p.B * w_f)
        zeta0 = float(bundle.zeta.values[0])
        tau0 = float(sol.tau.values[0])
        rb2 = p.B**2 / p.R
        a_f = (theta * g_f).tolist()
        zero = np.zeros_like(g_f)
        base_b = (theta * (tau0 * w_f + v_f)).tolist()
        own_b = (theta * zeta0 * w_f).tolist()
        base_src = ((n - 1) * (tau0 * th1e - rb2 * sol.stage_gamma)).tolist()
        sum_src = (zeta0 * th1e).tolist()
        zl = zero.tolist()
        self.d0 = _deviation_pass(p, bundle, sol, n, a_f, base_b, base_src, 0.0, 0.0)
        self.d1 = _deviation_pass(p, bundle, sol, n, a_f, own_b, zl, 1.0, 0.0)
        self.d2 = _deviation_pass(p, bundle, sol, n, a_f, zl, sum_src, 0.0, 1.0)

    def evaluate(self, initials: np.ndarray, deviant: int = 0) -> float:
        initials = np.asarray(initials, dtype=float)
        own = float(initials[deviant])
        rest = float(initials.sum() - own)
        return self.d0 + self.d1 * own + self.d2 * rest


def deviation_y0(
    res: PopulationResult,
    p: ModelParams,
    bundle: RiccatiBundle,
    sol: ConsistencySolution,
    spec: PerturbationSpec,
) -> float:
    """Backward initial value of the deviating agent in a perturbed run."""
    if res.deviant is None:
        raise ValueError("run has no deviating agent")
    n = len(res.initials)
    if spec.law_scale is not None:
        return DeviationReduction(p, bundle, sol, spec, n).evaluate(
            res.initials, res.deviant
        )
    st = bundle.stage
    x10 = float(res.initials[res.deviant])
    rest = float(res.initials.sum() - x10)
    th1e = (
        (p.B**2 * st.alpha - p.B * p.D) / p.R * (p.N0 / bundle.denom)
        * np.exp(p.C * st.times)
    )
    zeta0 = float(bundle.zeta.values[0])
    tau0 = float(sol.tau.values[0])
    rb2 = p.B**2 / p.R
    src = (zeta0 * rest + (n - 1) * tau0) * th1e - (n - 1) * rb2 * sol.stage_gamma
    a_f = [float(spec.gain(t)) for t in st.times]
    b_f = [float(spec.offset(t, x10)) for t in st.times]
    return _deviation_pass(
        p, bundle, sol, n, a_f, b_f, src.tolist(), x10, rest
    )
