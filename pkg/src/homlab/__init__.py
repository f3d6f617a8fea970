"""Numerical laboratory for homogenization of reversible random walks in random environments."""

from .env import (
    BoxSpec,
    ConductanceLaw,
    Environment,
    GenerationError,
    KernelVariant,
    MarkLaw,
    RateKernel,
    generate_long_range,
    generate_mott,
    generate_nn_conductance,
    generate_percolation,
    make_environment,
    mott_environment,
    mott_rate,
    periodic_displacement,
)
from .generator import SparseGenerator, assemble
from .palm import PalmEstimate, ergodic_average, estimate_intensity, estimate_lambda_k
from .solver import (
    QuadratureSpec,
    SolveOptions,
    SolveStats,
    SolverError,
    resolvent,
    resolvent_from_semigroup,
    semigroup_action,
    solve_massive_poisson,
)
from .effective_matrix import (
    Corrector,
    EffectiveMatrix,
    eigendecompose,
    estimate_D,
    solve_corrector,
    variational_upper_bound,
)
from .effective_field import (
    GridField,
    TestFunctionSpec,
    brownian_semigroup,
    effective_resolvent,
    grad_star,
    solve_effective,
)
from .convergence import ConvergenceReport, EnvironmentSpec, ExperimentPlan, run_ladder

__version__ = "0.1.0"
