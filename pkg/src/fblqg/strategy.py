"""Decentralized strategy assembly.

The optimal control of an agent with initial state x_i0 is the affine
feedback

    u_i(t) = -R^-1 B beta(t) x_i(t)
             + (zeta(0) x_i0 + tau(0)) theta5(t) e^{Ct}
             - R^-1 B gamma(t)

and the agent's backward value starts at
y_hat(0) = (zeta(0) x_i0 + tau(0)) / (1 + xi(0) N0).  The adjoint pair and
backward fields are recovered from the state path by the decoupling ansatz

    p_hat = alpha k_hat + beta x_hat + gamma,     q_hat = sigma beta x_hat,
    y_hat = xi k_hat + zeta x_hat + tau,          z_hat = sigma zeta x_hat,

with k_hat(t) = -N0 (zeta(0) x_i0 + tau(0)) e^{Ct} / (1 + xi(0) N0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .consistency import ConsistencySolution
from .model import DeterministicPath, ModelParams, TimeGrid
from .riccati import RiccatiBundle

__all__ = [
    "StrategyKit",
    "DecoupledFields",
    "build_kit",
    "y0_hat",
    "k_hat_path",
    "feedback_control",
    "decouple_fields",
]


@dataclass(frozen=True)
class StrategyKit:
    """Everything needed to evaluate the decentralized feedback law."""

    params: ModelParams
    grid: TimeGrid
    gain: DeterministicPath
    offset_base: DeterministicPath
    theta5: DeterministicPath
    zeta0: float
    tau0: float
    xi0: float
    denom: float
    k_coef: float

    def offset_scale(self, x_i0):
        """The per-agent constant zeta(0) x_i0 + tau(0)."""
        return self.zeta0 * np.asarray(x_i0, dtype=float) + self.tau0


@dataclass(frozen=True)
class DecoupledFields:
    k_hat: DeterministicPath
    p_hat: DeterministicPath
    y_hat: DeterministicPath
    q_hat: DeterministicPath
    z_hat: DeterministicPath


def build_kit(
    p: ModelParams, bundle: RiccatiBundle, sol: ConsistencySolution
) -> StrategyKit:
    grid = bundle.grid
    if sol.xbar.grid != grid:
        raise ValueError("solution and bundle grids differ")
    gain = DeterministicPath(grid, -(p.B / p.R) * bundle.beta.values)
    offset_base = DeterministicPath(grid, -(p.B / p.R) * sol.gamma.values)
    return StrategyKit(
        params=p,
        grid=grid,
        gain=gain,
        offset_base=offset_base,
        theta5=bundle.thetas[4],
        zeta0=float(bundle.zeta.values[0]),
        tau0=float(sol.tau.values[0]),
        xi0=bundle.xi0,
        denom=bundle.denom,
        k_coef=-p.N0 / bundle.denom,
    )


def y0_hat(x_i0, zeta0: float, tau0: float, xi0: float, n0: float):
    """Initial backward value of the limiting problem; affine in x_i0."""
    return (zeta0 * np.asarray(x_i0, dtype=float) + tau0) / (1.0 + xi0 * n0)


def k_hat_path(kit: StrategyKit, x_i0: float, grid: TimeGrid | None = None) -> DeterministicPath:
    """Adjoint of the backward constraint, k_hat(t) = k_coef (zeta0 x_i0 + tau0) e^{Ct}."""
    g = kit.grid if grid is None else grid
    vals = kit.k_coef * float(kit.offset_scale(x_i0)) * np.exp(kit.params.C * g.nodes)
    return DeterministicPath(g, vals)


def feedback_control(kit: StrategyKit, t, x, x_i0):
    """Evaluate the decentralized feedback u(t, x) for an agent with draw x_i0.

    Accepts scalars or aligned arrays; the offset is assembled exactly as the
    simulator assembles it, so recorded controls match bit for bit.
    """
    t = np.asarray(t, dtype=float)
    c = kit.offset_scale(x_i0)
    w = kit.theta5.at(t) * np.exp(kit.params.C * t)
    offset = c * w + kit.offset_base.at(t)
    return kit.gain.at(t) * np.asarray(x, dtype=float) + offset


def decouple_fields(
    xhat: DeterministicPath,
    x_i0: float,
    p: ModelParams,
    bundle: RiccatiBundle,
    sol: ConsistencySolution,
) -> DecoupledFields:
    """Reconstruct (k, p, y, q, z) along a state path via the decoupling ansatz.

    The path may live on a coarser grid than the solver's; coefficient paths
    are sampled at its nodes.
    """
    g = xhat.grid
    t = g.nodes
    kit_scale = float(bundle.zeta.values[0]) * x_i0 + float(sol.tau.values[0])
    k = (-p.N0 / bundle.denom) * kit_scale * np.exp(p.C * t)
    beta = bundle.beta.at(t)
    alpha = bundle.alpha.at(t)
    zeta = bundle.zeta.at(t)
    xi = bundle.xi.at(t)
    gamma = sol.gamma.at(t)
    tau = sol.tau.at(t)
    x = xhat.values
    mk = lambda v: DeterministicPath(g, v)
    return DecoupledFields(
        k_hat=mk(k),
        p_hat=mk(alpha * k + beta * x + gamma),
        y_hat=mk(xi * k + zeta * x + tau),
        q_hat=mk(p.sigma * beta * x),
        z_hat=mk(p.sigma * zeta * x),
    )
