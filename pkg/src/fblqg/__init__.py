"""Solver and Monte Carlo harness for a scalar mean-field game whose agents
carry forward-backward linear dynamics and quadratic costs.

The pipeline: solve the backward coefficient equations (riccati), close the
average fixed point (consistency), assemble the decentralized feedback
(strategy), then simulate finite populations and verify the epsilon-Nash
property (simulator, nash).  The cli module drives the same pipeline from a
JSON config.
"""

from .consistency import (
    ConsistencyMap,
    ConsistencySolution,
    apply_T,
    apply_T_integral,
    crosscheck_fbode,
    gamma_integral_values,
    gamma_tau,
    picard_solve,
)
from .model import (
    DeterministicPath,
    InitialLaw,
    ModelParams,
    RngStreams,
    TimeGrid,
    path_eval,
    sample_initials,
    validate_params,
)
from .nash import (
    ConvergenceReport,
    CostReport,
    EpsilonFit,
    MarginReport,
    convergence_sweep,
    cost_limiting,
    cost_population,
    cost_report,
    default_family,
    epsilon_nash_check,
    epsilon_trend,
    limiting_cost_moments,
)
from .numerics import (
    NumericsError,
    OdeProblem,
    loglog_slope,
    rk4_march,
    rk4_solve,
    trapezoid,
    trapezoid_values,
)
from .riccati import (
    ContractionReport,
    RiccatiBundle,
    StageValues,
    alpha_integral_values,
    beta_closed_values,
    check_h2,
    panel_simpson_suffix,
    solve_alpha_zeta,
    solve_beta,
    solve_bundle,
    solve_xi,
    xi_quadrature_values,
)
from .simulator import (
    DeviationReduction,
    LimitingResult,
    PerturbationSpec,
    PopulationResult,
    Y0Coefficients,
    backward_y0_population,
    deviation_y0,
    simulate_limiting,
    simulate_perturbed,
    simulate_population,
    y0_coefficients,
)
from .strategy import (
    DecoupledFields,
    StrategyKit,
    build_kit,
    decouple_fields,
    feedback_control,
    k_hat_path,
    y0_hat,
)

__version__ = "0.1.0"
