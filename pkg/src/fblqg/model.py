"""Problem data: model coefficients, initial law, time grid, sampled paths, RNG streams."""

from __future__ import annotations

from dataclasses import dataclass, fields
from functools import cached_property

import numpy as np

__all__ = [
    "ModelParams",
    "InitialLaw",
    "TimeGrid",
    "DeterministicPath",
    "RngStreams",
    "validate_params",
    "sample_initials",
    "path_eval",
    "INIT_TAG",
    "NOISE_TAG",
]

# purpose tags for RNG substream derivation
INIT_TAG = 0
NOISE_TAG = 1


@dataclass(frozen=True)
class ModelParams:
    """Scalar coefficients of the population game.

    Forward state:   dx_i = (A x_i + B u_i + F xavg) dt + sigma x_i dW_i
    Backward value:  -dy_i = (C y_i + D u_i + H x_i + L xavg) dt - sum_j z_ij dW_j,
                     y_i(T) = K x_i(T)
    Cost:            J_i = 1/2 E{ int_0^T [Q (x_i - (S xavg + eta))^2 + R u_i^2] dt
                                   + N0 y_i(0)^2 }
    """

    A: float = 0.0
    B: float = 0.0
    F: float = 0.0
    sigma: float = 0.0
    C: float = 0.0
    D: float = 0.0
    H: float = 0.0
    L: float = 0.0
    K: float = 0.0
    Q: float = 0.0
    R: float = 1.0
    S: float = 0.0
    eta: float = 0.0
    N0: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        validate_params(self)


def validate_params(p: ModelParams) -> ModelParams:
    """Reject parameter sets violating the standing sign assumptions."""
    for f in fields(p):
        v = getattr(p, f.name)
        if not isinstance(v, (int, float)) or not np.isfinite(v):
            raise ValueError(f"{f.name} must be a finite number, got {v!r}")
    if p.R <= 0:
        raise ValueError("R must be positive")
    if p.Q < 0:
        raise ValueError("Q must be nonnegative")
    if p.N0 < 0:
        raise ValueError("N0 must be nonnegative")
    if p.T <= 0:
        raise ValueError("T must be positive")
    return p


@dataclass(frozen=True)
class InitialLaw:
    """Common law of the initial states x_i(0); spread is the half-width
    (uniform) or standard deviation (gaussian) and is ignored for point."""

    kind: str
    mean: float
    spread: float = 0.0

    def __post_init__(self):
        if self.kind not in ("point", "uniform", "gaussian"):
            raise ValueError(f"unknown initial law kind {self.kind!r}")
        if not np.isfinite(self.mean):
            raise ValueError("mean must be finite")
        if not np.isfinite(self.spread) or self.spread < 0:
            raise ValueError("spread must be nonnegative")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of M steps on [0, T]."""

    T: float
    M: int

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.M < 1:
            raise ValueError("M must be at least 1")

    @property
    def h(self) -> float:
        return self.T / self.M

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.linspace(0.0, self.T, self.M + 1)
        t.flags.writeable = False
        return t


@dataclass(frozen=True)
class DeterministicPath:
    """Real-valued function of time sampled at the grid nodes.

    Evaluation between nodes is piecewise linear; queries outside [0, T]
    (beyond a tiny rounding allowance) are rejected.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.M + 1,):
            raise ValueError(
                f"expected {self.grid.M + 1} node values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def at(self, t):
        t = np.asarray(t, dtype=float)
        tol = 1e-12 * max(1.0, self.grid.T)
        if np.any(t < -tol) or np.any(t > self.grid.T + tol):
            raise ValueError("evaluation time outside [0, T]")
        return np.interp(np.clip(t, 0.0, self.grid.T), self.grid.nodes, self.values)

    def __call__(self, t):
        return self.at(t)


def path_eval(path: DeterministicPath, t):
    """Evaluate a sampled path at time(s) t by linear interpolation."""
    return path.at(t)


@dataclass(frozen=True)
class RngStreams:
    """Counter-based substreams keyed by (replication, agent, purpose).

    Every consumer derives its own Philox generator from the master seed, so
    draws are bit-identical regardless of evaluation order or worker count.
    """

    master_seed: int

    def __post_init__(self):
        if not (0 <= int(self.master_seed) < 2**64):
            raise ValueError("master_seed must fit in an unsigned 64-bit integer")

    def generator(self, replication: int, agent: int, tag: int) -> np.random.Generator:
        ss = np.random.SeedSequence(
            self.master_seed, spawn_key=(replication, agent, tag)
        )
        return np.random.Generator(np.random.Philox(ss))

    def initial_draws(self, law: InitialLaw, n: int, replication: int = 0) -> np.ndarray:
        """One initial state per agent, each from its own INIT substream."""
        out = np.empty(n)
        for i in range(n):
            g = self.generator(replication, i, INIT_TAG)
            if law.kind == "point":
                out[i] = law.mean
            elif law.kind == "uniform":
                out[i] = law.mean + law.spread * (2.0 * g.random() - 1.0)
            else:
                out[i] = law.mean + law.spread * g.standard_normal()
        return out

    def brownian_increments(
        self, n: int, steps: int, h: float, replication: int = 0
    ) -> np.ndarray:
        """(n, steps) array of Brownian increments over steps of size h."""
        root_h = np.sqrt(h)
        out = np.empty((n, steps))
        for i in range(n):
            g = self.generator(replication, i, NOISE_TAG)
            out[i] = root_h * g.standard_normal(steps)
        return out


def sample_initials(
    law: InitialLaw, n: int, streams: RngStreams, replication: int = 0
) -> np.ndarray:
    """Draw n initial states from the common law via per-agent substreams."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return streams.initial_draws(law, n, replication)
