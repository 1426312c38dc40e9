"""Delimited output and figures for the command-line front end.

Floats are written with 17 significant digits and LF line endings so that
identical runs produce byte-identical files; figures are rendered with the
Agg backend next to the tables they illustrate.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "format_value",
    "write_csv",
    "write_keyvals",
    "render_riccati",
    "render_consistency",
    "render_simulate",
    "render_convergence",
    "render_margins",
]

_FIG_DPI = 120
_PNG_META = {"Software": None}


def format_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def write_keyvals(path: Path, pairs) -> None:
    lines = [f"{k} = {format_value(v)}" for k, v in pairs]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=_FIG_DPI, metadata=_PNG_META)
    plt.close(fig)


def render_riccati(bundle, path: Path) -> None:
    t = bundle.grid.nodes
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].plot(t, bundle.beta.values, label="beta")
    axes[0].plot(t, bundle.alpha.values, label="alpha")
    axes[0].plot(t, bundle.zeta.values, label="zeta")
    axes[0].plot(t, bundle.xi.values, label="xi")
    axes[0].set_xlabel("t")
    axes[0].set_title("coefficient equations")
    axes[0].legend(fontsize=8)
    for i, th in enumerate(bundle.thetas, start=1):
        axes[1].plot(t, th.values, label=f"theta{i}")
    axes[1].set_xlabel("t")
    axes[1].set_title(f"combination terms (kappa={bundle.kappa:.4g})")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_consistency(sol, path: Path) -> None:
    t = sol.xbar.grid.nodes
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].plot(t, sol.xbar.values)
    axes[0].set_xlabel("t")
    axes[0].set_title("fixed-point average")
    axes[1].plot(t, sol.gamma.values, label="gamma")
    axes[1].plot(t, sol.tau.values, label="tau")
    axes[1].set_xlabel("t")
    axes[1].set_title(f"offset equations (residual={sol.residual:.3g})")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_simulate(pop, xbar_nodes, path: Path) -> None:
    t = pop.grid.nodes
    fig, ax = plt.subplots(figsize=(6.4, 4))
    for i in range(min(pop.n, 12)):
        ax.plot(t, pop.x_paths[i], lw=0.6, alpha=0.5, color="tab:gray")
    ax.plot(t, pop.xavg_path, lw=1.8, color="tab:blue", label="state average")
    ax.plot(t, xbar_nodes, lw=1.8, ls="--", color="tab:red", label="limit")
    ax.set_xlabel("t")
    ax.set_title(f"population sample (N={pop.n})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_convergence(report, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4))
    for name in ("avg_gap", "state_gap", "control_gap", "cost_gap"):
        vals = getattr(report, name)
        if np.all(vals > 0.0):
            slope = report.slopes[name][0]
            ax.loglog(report.ns, vals, marker="o", label=f"{name} (slope {slope:.2f})")
        else:
            ax.loglog(report.ns, np.maximum(vals, 1e-300), marker="x", label=f"{name} (degenerate)")
    ax.set_xlabel("N")
    ax.set_ylabel("gap statistic")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_margins(reports, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(reports), 1)
    base = np.arange(len(reports[0].names))
    for j, rep in enumerate(reports):
        ax.bar(
            base + j * width,
            rep.margins,
            width=width,
            yerr=3.0 * rep.stderrs,
            capsize=2,
            label=f"N={rep.n}",
        )
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xticks(base + 0.4 - width / 2.0)
    ax.set_xticklabels(reports[0].names, rotation=20, fontsize=8)
    ax.set_ylabel("cost margin")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
