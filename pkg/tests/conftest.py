"""Shared fixtures: one reference problem solved once per session.

The reference coefficients satisfy the contraction condition (kappa well
below 1) while keeping every channel active, so identities that would
trivialize with a zero coefficient stay informative.
"""

import numpy as np
import pytest

from fblqg import (
    InitialLaw,
    ModelParams,
    RngStreams,
    TimeGrid,
    build_kit,
    picard_solve,
    solve_bundle,
)

MASTER_SEED = 777

REFERENCE = dict(
    A=0.1,
    B=0.8,
    F=0.2,
    sigma=0.35,
    C=0.25,
    D=0.5,
    H=0.3,
    L=0.2,
    K=0.25,
    Q=0.3,
    S=0.4,
    eta=0.5,
    N0=0.6,
    R=1.0,
    T=1.0,
)


def reference_params(**overrides) -> ModelParams:
    base = dict(REFERENCE)
    base.update(overrides)
    return ModelParams(**base)


@pytest.fixture(scope="session")
def ref_params():
    return reference_params()


@pytest.fixture(scope="session")
def ref_law():
    return InitialLaw("gaussian", mean=1.0, spread=0.35)


@pytest.fixture(scope="session")
def ref_grid():
    return TimeGrid(T=1.0, M=2000)


@pytest.fixture(scope="session")
def ref_bundle(ref_params, ref_grid):
    return solve_bundle(ref_params, ref_grid)


@pytest.fixture(scope="session")
def ref_sol(ref_bundle, ref_params, ref_law):
    return picard_solve(ref_bundle, ref_params, ref_law.mean)


@pytest.fixture(scope="session")
def ref_kit(ref_params, ref_bundle, ref_sol):
    return build_kit(ref_params, ref_bundle, ref_sol)


@pytest.fixture(scope="session")
def streams():
    return RngStreams(MASTER_SEED)


@pytest.fixture()
def rng():
    return np.random.default_rng(1905)
