"""Deterministic equivalents for bilinear forms of resolvents of non-centered
Gram matrices with separable variance profile, with Monte Carlo checks."""

__version__ = "0.1.0"

from .canonical import (  # noqa: E402
    CanonicalSolution,
    ConvergenceError,
    SolverOptions,
    derivative_delta,
    solve_canonical,
    solve_canonical_grid,
    solve_precoder_system,
)
from .equivalents import (  # noqa: E402
    EquivalentPair,
    StabilityReport,
    build_R,
    build_T,
    stability_report,
    w_of_z,
    white_noise_T,
)
from .model import (  # noqa: E402
    EvaluationPoint,
    ModelSpec,
    ModelSpecError,
    SampleHandle,
    bilinear_form,
    check_rank_one_identities,
    co_resolvent,
    resolvent,
    sample_sigma,
)

__all__ = [
    "CanonicalSolution",
    "ConvergenceError",
    "EquivalentPair",
    "EvaluationPoint",
    "ModelSpec",
    "ModelSpecError",
    "SampleHandle",
    "SolverOptions",
    "StabilityReport",
    "bilinear_form",
    "build_R",
    "build_T",
    "check_rank_one_identities",
    "co_resolvent",
    "derivative_delta",
    "resolvent",
    "sample_sigma",
    "solve_canonical",
    "solve_canonical_grid",
    "solve_precoder_system",
    "stability_report",
    "w_of_z",
    "white_noise_T",
]
