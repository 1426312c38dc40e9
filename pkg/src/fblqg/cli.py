"""Batch front end: JSON config in, CSV tables and figures out.

Every command is a pure function of (config bytes, master seed, command),
so reruns diff clean; --threads only schedules work and never changes any
output byte.  Exit codes: 0 success (including a reported contraction-test
failure), 2 config error, 3 numeric failure, 4 fixed-point non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .consistency import crosscheck_fbode, picard_solve
from .model import InitialLaw, ModelParams, RngStreams, TimeGrid, sample_initials
from .nash import (
    convergence_sweep,
    cost_limiting,
    cost_population,
    default_family,
    epsilon_nash_check,
    epsilon_trend,
)
from .numerics import NumericsError
from .report import (
    render_consistency,
    render_convergence,
    render_margins,
    render_riccati,
    render_simulate,
    write_csv,
    write_keyvals,
)
from .riccati import check_h2, solve_bundle
from .simulator import simulate_limiting, simulate_population, y0_coefficients

__all__ = ["ConfigError", "RunConfig", "load_run_config", "main"]

_MODEL_KEYS = ("A", "B", "F", "sigma", "C", "D", "H", "L", "K", "Q", "S", "eta", "N0", "R", "T")
_DEFAULT_SCALES = (0.5, 0.8, 1.0, 1.2, 1.5)


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class SimulateSettings:
    n: int
    m: int
    reps: int


@dataclass(frozen=True)
class NashSettings:
    n_list: tuple
    reps: int
    m: int
    scales: tuple
    include_zero: bool


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    law: InitialLaw
    m_grid: int
    seed: int
    tol: float
    max_iter: int
    damping: float
    simulate: SimulateSettings | None
    nash: NashSettings | None
    dump_paths: bool


def _require_dict(v, where):
    if not isinstance(v, dict):
        raise ConfigError(f"{where} must be an object")
    return v


def _check_keys(d, where, required, optional=()):
    for k in d:
        if k not in required and k not in optional:
            raise ConfigError(f"unknown key '{k}' in {where}")
    for k in required:
        if k not in d:
            raise ConfigError(f"missing key '{k}' in {where}")


def _as_float(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where} must be a number")
    return float(v)


def _as_int(v, where):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where} must be an integer")
    return v


def _as_bool(v, where):
    if not isinstance(v, bool):
        raise ConfigError(f"{where} must be a boolean")
    return v


def _parse_simulate(d):
    d = _require_dict(d, "simulate")
    _check_keys(d, "simulate", ("n", "m", "reps"))
    n = _as_int(d["n"], "simulate.n")
    m = _as_int(d["m"], "simulate.m")
    reps = _as_int(d["reps"], "simulate.reps")
    if n < 1 or m < 1 or reps < 1:
        raise ConfigError("simulate.n, simulate.m and simulate.reps must be positive")
    return SimulateSettings(n=n, m=m, reps=reps)


def _parse_nash(d):
    d = _require_dict(d, "nash")
    _check_keys(d, "nash", ("n_list", "reps", "m"), ("scales", "include_zero"))
    raw = d["n_list"]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("nash.n_list must be a nonempty list")
    n_list = tuple(_as_int(v, "nash.n_list entry") for v in raw)
    if any(v < 1 for v in n_list):
        raise ConfigError("nash.n_list entries must be positive")
    reps = _as_int(d["reps"], "nash.reps")
    m = _as_int(d["m"], "nash.m")
    if reps < 2 or m < 1:
        raise ConfigError("nash.reps must be at least 2 and nash.m positive")
    scales = _DEFAULT_SCALES
    if "scales" in d:
        if not isinstance(d["scales"], list) or not d["scales"]:
            raise ConfigError("nash.scales must be a nonempty list")
        scales = tuple(_as_float(v, "nash.scales entry") for v in d["scales"])
    include_zero = _as_bool(d.get("include_zero", True), "nash.include_zero")
    return NashSettings(n_list=n_list, reps=reps, m=m, scales=scales, include_zero=include_zero)


def load_run_config(path, seed_override: int | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON: {e}") from e
    doc = _require_dict(doc, "config")
    _check_keys(
        doc,
        "config",
        ("model", "law", "grid", "seed"),
        ("solver", "simulate", "nash", "dump_paths"),
    )

    model = _require_dict(doc["model"], "model")
    _check_keys(model, "model", (), _MODEL_KEYS)
    vals = {k: _as_float(v, f"model.{k}") for k, v in model.items()}
    try:
        params = ModelParams(**vals)
    except ValueError as e:
        raise ConfigError(f"model: {e}") from e

    law_d = _require_dict(doc["law"], "law")
    _check_keys(law_d, "law", ("kind", "mean"), ("spread",))
    if not isinstance(law_d["kind"], str):
        raise ConfigError("law.kind must be a string")
    try:
        law = InitialLaw(
            kind=law_d["kind"],
            mean=_as_float(law_d["mean"], "law.mean"),
            spread=_as_float(law_d.get("spread", 0.0), "law.spread"),
        )
    except ValueError as e:
        raise ConfigError(f"law: {e}") from e

    grid_d = _require_dict(doc["grid"], "grid")
    _check_keys(grid_d, "grid", ("m",))
    m_grid = _as_int(grid_d["m"], "grid.m")
    if m_grid < 1:
        raise ConfigError("grid.m must be positive")

    seed = _as_int(doc["seed"], "seed")
    if seed_override is not None:
        seed = seed_override
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must fit in an unsigned 64-bit integer")

    tol, max_iter, damping = 1e-10, 200, 1.0
    if "solver" in doc:
        s = _require_dict(doc["solver"], "solver")
        _check_keys(s, "solver", (), ("tol", "max_iter", "damping"))
        if "tol" in s:
            tol = _as_float(s["tol"], "solver.tol")
        if "max_iter" in s:
            max_iter = _as_int(s["max_iter"], "solver.max_iter")
        if "damping" in s:
            damping = _as_float(s["damping"], "solver.damping")
        if tol <= 0.0 or max_iter < 1 or not 0.0 < damping <= 1.0:
            raise ConfigError("solver settings out of range")

    simulate = _parse_simulate(doc["simulate"]) if "simulate" in doc else None
    nash = _parse_nash(doc["nash"]) if "nash" in doc else None
    dump_paths = _as_bool(doc.get("dump_paths", False), "dump_paths")
    return RunConfig(
        params=params,
        law=law,
        m_grid=m_grid,
        seed=seed,
        tol=tol,
        max_iter=max_iter,
        damping=damping,
        simulate=simulate,
        nash=nash,
        dump_paths=dump_paths,
    )


def cmd_riccati(cfg: RunConfig, outdir: Path) -> int:
    grid = TimeGrid(cfg.params.T, cfg.m_grid)
    bundle = solve_bundle(cfg.params, grid)
    h2 = check_h2(bundle, cfg.params)
    header = ["t", "beta", "alpha", "zeta", "xi"] + [f"theta{i}" for i in range(1, 7)]
    cols = [bundle.beta, bundle.alpha, bundle.zeta, bundle.xi] + list(bundle.thetas)
    rows = (
        [t] + [c.values[i] for c in cols]
        for i, t in enumerate(grid.nodes)
    )
    write_csv(outdir / "riccati.csv", header, rows)
    pairs = [(f"theta_bar_{i + 1}", v) for i, v in enumerate(h2.theta_bars)]
    pairs += [
        ("gamma_bar", h2.gamma_bar),
        ("kappa", h2.kappa),
        ("satisfied", h2.satisfied),
    ]
    write_keyvals(outdir / "h2.txt", pairs)
    render_riccati(bundle, outdir / "riccati.png")
    return 0


def cmd_solve(cfg: RunConfig, outdir: Path) -> int:
    grid = TimeGrid(cfg.params.T, cfg.m_grid)
    bundle = solve_bundle(cfg.params, grid)
    sol = picard_solve(
        bundle,
        cfg.params,
        x0=cfg.law.mean,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        damping=cfg.damping,
    )
    defect = crosscheck_fbode(sol, bundle, cfg.params)
    rows = (
        (t, sol.xbar.values[i], sol.gamma.values[i], sol.tau.values[i])
        for i, t in enumerate(grid.nodes)
    )
    write_csv(outdir / "consistency.csv", ["t", "xbar", "gamma", "tau"], rows)
    write_keyvals(
        outdir / "solve_diagnostics.txt",
        [
            ("residual", sol.residual),
            ("iterations", sol.iterations),
            ("empirical_rate", sol.empirical_rate),
            ("fbode_defect", defect),
            ("converged", sol.converged),
            ("guaranteed", sol.guaranteed),
            ("kappa", bundle.kappa),
        ],
    )
    render_consistency(sol, outdir / "consistency.png")
    return 0 if sol.converged else 4


def _solve_for_sim(cfg: RunConfig):
    grid = TimeGrid(cfg.params.T, cfg.m_grid)
    bundle = solve_bundle(cfg.params, grid)
    sol = picard_solve(
        bundle,
        cfg.params,
        x0=cfg.law.mean,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        damping=cfg.damping,
    )
    if not sol.converged:
        return bundle, sol, 4
    return bundle, sol, 0


def cmd_simulate(cfg: RunConfig, outdir: Path, threads: int) -> int:
    st = cfg.simulate
    bundle, sol, rc = _solve_for_sim(cfg)
    if rc:
        return rc
    p = cfg.params
    streams = RngStreams(cfg.seed)
    coef = y0_coefficients(p, bundle, sol)
    h = p.T / st.m

    def run_one(rep):
        init = sample_initials(cfg.law, st.n, streams, rep)
        incr = streams.brownian_increments(st.n, st.m, h, rep)
        pop = simulate_population(
            p, cfg.law, bundle, sol, st.n, st.m, streams, rep, initials=init, increments=incr
        )
        lim = simulate_limiting(
            p, cfg.law, bundle, sol, st.n, st.m, streams, rep, initials=init, increments=incr
        )
        jp = cost_population(pop, coef.evaluate(init), p)
        jl = cost_limiting(lim, p)
        gap = np.max(np.abs(pop.xavg_path - lim.xbar_nodes))
        return (
            rep,
            pop.x_paths[:, -1].mean(),
            gap,
            jp.mean(),
            jp.std(),
            jl.mean(),
        )

    if threads <= 1:
        rows = [run_one(r) for r in range(st.reps)]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(run_one, range(st.reps)))
    write_csv(
        outdir / "simulate_summary.csv",
        ["replication", "terminal_mean", "sup_gap_xbar", "cost_mean", "cost_std", "cost_limit_mean"],
        rows,
    )
    pop0 = simulate_population(p, cfg.law, bundle, sol, st.n, st.m, streams, 0)
    xbar_nodes = sol.xbar.at(pop0.grid.nodes)
    render_simulate(pop0, xbar_nodes, outdir / "simulate.png")
    if cfg.dump_paths:
        dump = (
            (k, i, pop0.x_paths[i, k], pop0.u_paths[i, k])
            for k in range(st.m + 1)
            for i in range(st.n)
        )
        write_csv(outdir / "paths_rep0.csv", ["node", "agent", "x", "u"], dump)
    return 0


def cmd_nash(cfg: RunConfig, outdir: Path, threads: int) -> int:
    st = cfg.nash
    bundle, sol, rc = _solve_for_sim(cfg)
    if rc:
        return rc
    p = cfg.params
    streams = RngStreams(cfg.seed)
    conv = convergence_sweep(
        p, cfg.law, bundle, sol, st.n_list, st.reps, st.m, streams, threads=threads
    )
    family = default_family(st.scales, st.include_zero)
    margin_reports = [
        epsilon_nash_check(
            p, cfg.law, bundle, sol, n, st.reps, family, streams, st.m, threads=threads
        )
        for n in st.n_list
    ]
    fit = epsilon_trend([r.n for r in margin_reports], [r.epsilon for r in margin_reports])

    nan = float("nan")
    conv_rows = []
    for j, n in enumerate(st.n_list):
        conv_rows.append((n, "avg_gap", conv.avg_gap[j], nan))
        conv_rows.append((n, "state_gap", conv.state_gap[j], nan))
        conv_rows.append((n, "control_gap", conv.control_gap[j], nan))
        conv_rows.append((n, "cost_gap", conv.cost_gap[j], conv.cost_gap_stderr[j]))
    write_csv(outdir / "convergence.csv", ["N", "statistic", "value", "stderr"], conv_rows)

    margin_rows = []
    for rep in margin_reports:
        for name, v, se in zip(rep.names, rep.margins, rep.stderrs):
            margin_rows.append((rep.n, name, v, se))
        margin_rows.append((rep.n, "epsilon", rep.epsilon, nan))
    write_csv(outdir / "margins.csv", ["N", "statistic", "value", "stderr"], margin_rows)

    pairs = []
    for name in ("avg_gap", "state_gap", "control_gap", "cost_gap"):
        slope, se = conv.slopes[name]
        pairs.append((f"{name}_slope", slope))
        pairs.append((f"{name}_slope_stderr", se))
    pairs += [
        ("epsilon_coeff", fit.coeff),
        ("epsilon_points", fit.n_used),
        ("epsilon_slope", fit.slope),
        ("epsilon_slope_stderr", fit.slope_stderr),
        ("degenerate", ",".join(conv.degenerate) if conv.degenerate else "none"),
    ]
    write_keyvals(outdir / "slopes.txt", pairs)
    render_convergence(conv, outdir / "convergence.png")
    render_margins(margin_reports, outdir / "margins.png")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="fblqg",
        description="Mean-field game solver and population simulator",
    )
    ap.add_argument("command", choices=("riccati", "solve", "simulate", "nash"))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (no output effect)")
    args = ap.parse_args(argv)

    try:
        cfg = load_run_config(args.config, seed_override=args.seed)
        if args.command == "simulate" and cfg.simulate is None:
            raise ConfigError("command 'simulate' needs a simulate section")
        if args.command == "nash" and cfg.nash is None:
            raise ConfigError("command 'nash' needs a nash section")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "riccati":
            return cmd_riccati(cfg, outdir)
        if args.command == "solve":
            return cmd_solve(cfg, outdir)
        if args.command == "simulate":
            return cmd_simulate(cfg, outdir, args.threads)
        return cmd_nash(cfg, outdir, args.threads)
    except NumericsError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
