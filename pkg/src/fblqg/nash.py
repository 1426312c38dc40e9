"""Cost evaluation, population-vs-limit convergence rates, and the
epsilon-Nash margin experiments.

Gap statistics pair each population replication with a limiting run on the
same noise (common random numbers), so the estimated differences carry the
systematic O(1/N) coupling gap rather than raw Monte Carlo variance.  All
replication reductions run in a fixed order regardless of the thread count;
float addition is not associative and the outputs are compared byte-wise.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .consistency import ConsistencySolution
from .model import InitialLaw, ModelParams, RngStreams, sample_initials
from .numerics import loglog_slope, trapezoid_values
from .riccati import RiccatiBundle
from .simulator import (
    DeviationReduction,
    LimitingResult,
    PerturbationSpec,
    PopulationResult,
    simulate_limiting,
    simulate_perturbed,
    simulate_population,
    y0_coefficients,
)
from .strategy import y0_hat

__all__ = [
    "CostReport",
    "ConvergenceReport",
    "MarginReport",
    "EpsilonFit",
    "cost_population",
    "cost_limiting",
    "cost_report",
    "limiting_cost_moments",
    "convergence_sweep",
    "epsilon_nash_check",
    "epsilon_trend",
    "default_family",
]


def _running_costs(x_paths, u_paths, target_nodes, p, h):
    dev = x_paths - (p.S * target_nodes + p.eta)
    integrand = p.Q * dev * dev + p.R * u_paths * u_paths
    return 0.5 * trapezoid_values(integrand, h, axis=-1)


def cost_population(res: PopulationResult, y0: np.ndarray, p: ModelParams) -> np.ndarray:
    """Per-agent sampled cost for one replication: running quadratic tracking
    of the realized state average plus the backward initial-value penalty."""
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (res.n,):
        raise ValueError("y0 must hold one value per agent")
    run = _running_costs(res.x_paths, res.u_paths, res.xavg_path[None, :], p, res.grid.h)
    return run + 0.5 * p.N0 * y0 * y0


def cost_limiting(res: LimitingResult, p: ModelParams) -> np.ndarray:
    """Per-agent sampled limiting cost; the tracking target is the solved
    deterministic average and y(0) is the decoupled closed form."""
    if res.y0 is None:
        raise ValueError("limiting result carries no backward initial values")
    run = _running_costs(res.x_paths, res.u_paths, res.xbar_nodes[None, :], p, res.grid.h)
    return run + 0.5 * p.N0 * res.y0 * res.y0


def _agent_cost(res: PopulationResult, i: int, y0_i: float, p: ModelParams) -> float:
    run = _running_costs(res.x_paths[i], res.u_paths[i], res.xavg_path, p, res.grid.h)
    return float(run) + 0.5 * p.N0 * y0_i * y0_i


def _ordered_map(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


@dataclass
class CostReport:
    costs: np.ndarray
    limiting: np.ndarray
    stderr: np.ndarray
    stderr_limiting: np.ndarray
    reps: int


def cost_report(
    p: ModelParams,
    law: InitialLaw,
    bundle: RiccatiBundle,
    sol: ConsistencySolution,
    n: int,
    m: int,
    reps: int,
    streams: RngStreams,
    threads: int = 1,
) -> CostReport:
    """Monte Carlo per-agent costs under the decentralized strategies, with
    the paired limiting costs on the same noise."""
    if reps < 2:
        raise ValueError("reps must be at least 2")
    coef = y0_coefficients(p, bundle, sol)
    h = p.T / m

    def run_one(rep):
        init = sample_initials(law, n, streams, rep)
        incr = streams.brownian_increments(n, m, h, rep)
        pop = simulate_population(
            p, law, bundle, sol, n, m, streams, rep, initials=init, increments=incr
        )
        lim = simulate_limiting(
            p, law, bundle, sol, n, m, streams, rep, initials=init, increments=incr
        )
        jp = cost_population(pop, coef.evaluate(init), p)
        jl = cost_limiting(lim, p)
        return jp, jl

    sp = np.zeros(n)
    spp = np.zeros(n)
    sl = np.zeros(n)
    sll = np.zeros(n)
    for jp, jl in _ordered_map(run_one, range(reps), threads):
        sp += jp
        spp += jp * jp
        sl += jl
        sll += jl * jl
    mean_p = sp / reps
    mean_l = sl / reps
    var_p = np.maximum(spp / reps - mean_p * mean_p, 0.0) * reps / (reps - 1)
    var_l = np.maximum(sll / reps - mean_l * mean_l, 0.0) * reps / (reps - 1)
    return CostReport(
        costs=mean_p,
        limiting=mean_l,
        stderr=np.sqrt(var_p / reps),
        stderr_limiting=np.sqrt(var_l / reps),
        reps=reps,
    )


def limiting_cost_moments(
    p: ModelParams, bundle: RiccatiBundle, sol: ConsistencySolution, x_i0: float
) -> float:
    """Limiting cost via the first/second moment ODEs of the linear SDE
    (for dx = (a x + b)dt + sigma x dW: (x2)' = (2a + sigma^2) x2 + 2 b x1),
    an independent route used to cross-check the Monte Carlo estimate."""
    st = bundle.stage
    grid = bundle.grid
    h = grid.h
    half = 0.5 * h
    sixth = h / 6.0
    a_f = (p.A - (p.B**2 / p.R) * st.beta).tolist()
    c_i = float(bundle.zeta.values[0]) * x_i0 + float(sol.tau.values[0])
    ecf = np.exp(p.C * st.times)
    th1e = (p.B**2 * st.alpha - p.B * p.D) / p.R * (p.N0 / bundle.denom) * ecf
    gamma_f = sol.stage_gamma
    xbar_f = np.interp(st.times, grid.nodes, sol.xbar.values)
    b_f = (c_i * th1e - (p.B**2 / p.R) * gamma_f + p.F * xbar_f).tolist()
    gain_f = (-(p.B / p.R) * st.beta).tolist()
    off_f = (
        c_i * (p.B * st.alpha - p.D) / p.R * (p.N0 / bundle.denom) * ecf
        - (p.B / p.R) * gamma_f
    ).tolist()
    track_f = (p.S * xbar_f + p.eta).tolist()
    sig2 = p.sigma**2
    Q, R = p.Q, p.R

    def f(i, y):
        m1, m2, acc = y
        g = track_f[i]
        gn = gain_f[i]
        of = off_f[i]
        return (
            a_f[i] * m1 + b_f[i],
            (2.0 * a_f[i] + sig2) * m2 + 2.0 * b_f[i] * m1,
            0.5 * (Q * (m2 - 2.0 * g * m1 + g * g) + R * (gn * gn * m2 + 2.0 * gn * of * m1 + of * of)),
        )

    y = (float(x_i0), float(x_i0) ** 2, 0.0)
    for k in range(grid.M):
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
    yhat0 = y0_hat(x_i0, float(bundle.zeta.values[0]), float(sol.tau.values[0]), bundle.xi0, p.N0)
    return y[2] + 0.5 * p.N0 * float(yhat0) ** 2


@dataclass
class ConvergenceReport:
    ns: np.ndarray
    avg_gap: np.ndarray
    state_gap: np.ndarray
    control_gap: np.ndarray
    cost_gap: np.ndarray
    cost_gap_stderr: np.ndarray
    slopes: dict = field(default_factory=dict)
    degenerate: list = field(default_factory=list)
    reps: int = 0
    m: int = 0


_GAP_NAMES = ("avg_gap", "state_gap", "control_gap", "cost_gap")


def convergence_sweep(
    p: ModelParams,
    law: InitialLaw,
    bundle: RiccatiBundle,
    sol: ConsistencySolution,
    n_list,
    reps: int,
    m: int,
    streams: RngStreams,
    threads: int = 1,
) -> ConvergenceReport:
    """For each population size: paired population/limiting replications,
    sup-over-time mean-square gaps and the agent-1 cost gap, then log-log
    slope fits across N.

    State and control gaps pool over agents before the sup over nodes; the
    agents are exchangeable, so pooling estimates the common per-agent
    mean-square gap with the least variance.
    """
    ns = [int(v) for v in n_list]
    if len(ns) < 1 or any(v < 1 for v in ns):
        raise ValueError("n_list must hold positive agent counts")
    if reps < 2:
        raise ValueError("reps must be at least 2")
    coef = y0_coefficients(p, bundle, sol)
    h = p.T / m

    avg_g = np.empty(len(ns))
    state_g = np.empty(len(ns))
    ctrl_g = np.empty(len(ns))
    cost_g = np.empty(len(ns))
    cost_se = np.empty(len(ns))

    for j, n in enumerate(ns):

        def run_one(rep, n=n):
            init = sample_initials(law, n, streams, rep)
            incr = streams.brownian_increments(n, m, h, rep)
            pop = simulate_population(
                p, law, bundle, sol, n, m, streams, rep, initials=init, increments=incr
            )
            lim = simulate_limiting(
                p, law, bundle, sol, n, m, streams, rep, initials=init, increments=incr
            )
            davg = pop.xavg_path - lim.xbar_nodes
            dx = pop.x_paths - lim.x_paths
            du = pop.u_paths - lim.u_paths
            jp = cost_population(pop, coef.evaluate(init), p)
            jl = cost_limiting(lim, p)
            return (
                davg * davg,
                (dx * dx).mean(axis=0),
                (du * du).mean(axis=0),
                jp[0] - jl[0],
            )

        acc_avg = np.zeros(m + 1)
        acc_x = np.zeros(m + 1)
        acc_u = np.zeros(m + 1)
        sc = 0.0
        scc = 0.0
        for davg2, dx2, du2, dcost in _ordered_map(run_one, range(reps), threads):
            acc_avg += davg2
            acc_x += dx2
            acc_u += du2
            sc += dcost
            scc += dcost * dcost
        avg_g[j] = acc_avg.max() / reps
        state_g[j] = acc_x.max() / reps
        ctrl_g[j] = acc_u.max() / reps
        mean_c = sc / reps
        var_c = max(scc / reps - mean_c * mean_c, 0.0) * reps / (reps - 1)
        cost_g[j] = abs(mean_c)
        cost_se[j] = math.sqrt(var_c / reps)

    report = ConvergenceReport(
        ns=np.array(ns, dtype=float),
        avg_gap=avg_g,
        state_gap=state_g,
        control_gap=ctrl_g,
        cost_gap=cost_g,
        cost_gap_stderr=cost_se,
        reps=reps,
        m=m,
    )
    for name in _GAP_NAMES:
        vals = getattr(report, name)
        if len(ns) < 3 or np.any(vals <= 0.0):
            report.degenerate.append(name)
            report.slopes[name] = (float("nan"), float("nan"))
        else:
            slope, _, se = loglog_slope(report.ns, vals)
            report.slopes[name] = (slope, se)
    return report


@dataclass
class MarginReport:
    n: int
    reps: int
    names: list
    margins: np.ndarray
    stderrs: np.ndarray
    epsilon: float
    baseline_cost: float


def default_family(scales=(0.5, 0.8, 1.0, 1.2, 1.5), include_zero=True):
    """Deviation family used by the experiments: scalings of the equilibrium
    law (1.0 is the self-deviation control case) plus the zero control."""
    family = [PerturbationSpec.scaled(s) for s in scales]
    if include_zero:
        family.append(PerturbationSpec.zero())
    return family


def epsilon_nash_check(
    p: ModelParams,
    law: InitialLaw,
    bundle: RiccatiBundle,
    sol: ConsistencySolution,
    n: int,
    reps: int,
    family,
    streams: RngStreams,
    m: int,
    deviant: int = 0,
    threads: int = 1,
) -> MarginReport:
    """Margin J_1(deviation, others equilibrium) - J_1(all equilibrium) for
    each deviation in the family, estimated on common random numbers; the
    empirical epsilon is the worst negative margin clipped at zero."""
    family = list(family)
    if not family:
        raise ValueError("deviation family is empty")
    if reps < 2:
        raise ValueError("reps must be at least 2")
    if not 0 <= deviant < n:
        raise ValueError("deviant index out of range")
    coef = y0_coefficients(p, bundle, sol)
    reductions = {
        spec.name: DeviationReduction(p, bundle, sol, spec, n)
        for spec in family
        if spec.law_scale is not None
    }
    h = p.T / m

    def run_one(rep):
        init = sample_initials(law, n, streams, rep)
        incr = streams.brownian_increments(n, m, h, rep)
        pop = simulate_population(
            p, law, bundle, sol, n, m, streams, rep, initials=init, increments=incr
        )
        y0d = float(coef.evaluate(init)[deviant])
        base = _agent_cost(pop, deviant, y0d, p)
        row = []
        for spec in family:
            res, m10 = simulate_perturbed(
                p, law, bundle, sol, n, m, streams, spec, deviant, rep,
                initials=init, increments=incr, reduction=reductions.get(spec.name),
            )
            row.append(_agent_cost(res, deviant, m10, p) - base)
        return base, row

    k = len(family)
    sb = 0.0
    sm = np.zeros(k)
    smm = np.zeros(k)
    for base, row in _ordered_map(run_one, range(reps), threads):
        sb += base
        row = np.asarray(row)
        sm += row
        smm += row * row
    means = sm / reps
    var = np.maximum(smm / reps - means * means, 0.0) * reps / (reps - 1)
    return MarginReport(
        n=n,
        reps=reps,
        names=[spec.name for spec in family],
        margins=means,
        stderrs=np.sqrt(var / reps),
        epsilon=max(0.0, -float(means.min())),
        baseline_cost=sb / reps,
    )


@dataclass
class EpsilonFit:
    """epsilon_N ~ coeff/sqrt(N), fitted on the positive entries; the free
    slope is reported alongside for rate diagnostics."""

    coeff: float
    n_used: int
    slope: float
    slope_stderr: float

    def value_at(self, n: int) -> float:
        return self.coeff / math.sqrt(n)


def epsilon_trend(ns, epsilons) -> EpsilonFit:
    ns = np.asarray(ns, dtype=float)
    eps = np.asarray(epsilons, dtype=float)
    if ns.shape != eps.shape:
        raise ValueError("ns and epsilons must align")
    mask = eps > 0.0
    n_used = int(mask.sum())
    if n_used == 0:
        return EpsilonFit(coeff=0.0, n_used=0, slope=float("nan"), slope_stderr=float("nan"))
    coeff = float(np.exp(np.mean(np.log(eps[mask]) + 0.5 * np.log(ns[mask]))))
    if n_used >= 3:
        slope, _, se = loglog_slope(ns[mask], eps[mask])
    else:
        slope, se = float("nan"), float("nan")
    return EpsilonFit(coeff=coeff, n_used=n_used, slope=slope, slope_stderr=se)
