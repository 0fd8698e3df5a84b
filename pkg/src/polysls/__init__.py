"""Finite-impulse-response closed-loop synthesis for polynomial dynamics.

Synthesizes state and input maps over a sliding disturbance window for
discrete-time polynomial systems, realizes them as a causal state-feedback
controller via disturbance reconstruction, and optimizes the per-monomial
cancellation weights against Monte-Carlo or worst-case costs.
"""

__version__ = "0.1.0"

from .errors import (
    AlphaMismatchError,
    ConfigError,
    DivergenceError,
    ExpansionOverflowError,
    FingerprintMismatchError,
    MissingAlphaError,
    PolyslsError,
)
from .poly import DROP_TOL, MAX_DEGREE, Monomial, Poly, PolyVec, canonicalize
from .synthesis import (
    AlphaParams,
    ClosedLoopMaps,
    GEntry,
    GTable,
    SystemModel,
    alpha_skeleton,
    build_clms,
    build_g_table,
    synthesize,
    verify_achievability,
)
from .simulate import (
    ControllerState,
    TrajectoryRecord,
    controller_step,
    impulse_response,
    simulate,
    write_trajectory_csv,
)
from .cost import (
    CostEstimate,
    CostSpec,
    DisturbanceModel,
    OptimizeOptions,
    OptimizeResult,
    SweepPoint,
    WorstCaseResult,
    mc_cost,
    optimize,
    sweep,
    trajectory_cost,
    worst_case_cost,
    write_sweep_csv,
)
from .models import (
    CYLINDER_DEFAULTS,
    ModelConfig,
    builtin,
    custom_model,
    load_clm,
    load_config,
    save_clm,
    scalar_polynomial,
)

__all__ = [
    "__version__",
    "AlphaMismatchError",
    "AlphaParams",
    "ClosedLoopMaps",
    "ConfigError",
    "ControllerState",
    "CostEstimate",
    "CostSpec",
    "CYLINDER_DEFAULTS",
    "DisturbanceModel",
    "DivergenceError",
    "DROP_TOL",
    "ExpansionOverflowError",
    "FingerprintMismatchError",
    "GEntry",
    "GTable",
    "MAX_DEGREE",
    "MissingAlphaError",
    "ModelConfig",
    "Monomial",
    "OptimizeOptions",
    "OptimizeResult",
    "Poly",
    "PolyVec",
    "PolyslsError",
    "SweepPoint",
    "SystemModel",
    "TrajectoryRecord",
    "WorstCaseResult",
    "alpha_skeleton",
    "build_clms",
    "build_g_table",
    "builtin",
    "canonicalize",
    "controller_step",
    "custom_model",
    "impulse_response",
    "load_clm",
    "load_config",
    "mc_cost",
    "optimize",
    "save_clm",
    "scalar_polynomial",
    "simulate",
    "sweep",
    "synthesize",
    "trajectory_cost",
    "verify_achievability",
    "worst_case_cost",
    "write_sweep_csv",
    "write_trajectory_csv",
]
