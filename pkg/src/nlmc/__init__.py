"""Continuous-time nonlinear Markov chains on finite state spaces.

The transition rates of such a chain depend on the chain's own marginal
distribution, so the marginal flow solves the nonlinear ODE
dm/dt = m^T Q(m).  This package integrates that flow, samples jump paths
consistent with it, finds invariant distributions, and emits numerical
certificates of uniqueness and strong ergodicity.
"""

from .certify import (
    Certificate,
    ReducedSystem,
    build_M,
    certify_ergodic_2,
    certify_ergodic_3,
    certify_unique,
    reduced_system,
    scalar_drift,
)
from .errors import (
    CertificateEvaluationError,
    GeneratorEvaluationError,
    GeneratorFileError,
    IntegrationDivergedError,
    NlmcError,
    NumericalError,
    ReducibleGeneratorError,
)
from .generator import (
    GeneratorSpec,
    GridViolation,
    PolynomialCell,
    PolyTerm,
    RateMatrix,
    ValidationReport,
    constant_generator,
    corpus,
    generator_from_json,
    generator_to_json,
    irreducible_at,
    lipschitz_estimate,
    load_generator,
    polynomial_generator,
    save_generator,
    validate,
)
from .semigroup import (
    AuditFinding,
    AuditReport,
    Flow,
    IntegratorControls,
    JumpPath,
    Trajectory,
    evolve,
    flow_invariance_audit,
    integrate_flow,
    sample_path,
    thinning_bound,
)
from .simplex import Distribution, SimplexGrid, project_to_simplex, tangent_cone_member
from .stationary import (
    SearchControls,
    StationaryResult,
    StationarySet,
    find_invariant,
    frozen_stationary,
    residual,
)

__version__ = "0.1.0"

__all__ = [
    "AuditFinding",
    "AuditReport",
    "Certificate",
    "CertificateEvaluationError",
    "Distribution",
    "Flow",
    "GeneratorEvaluationError",
    "GeneratorFileError",
    "GeneratorSpec",
    "GridViolation",
    "IntegrationDivergedError",
    "IntegratorControls",
    "JumpPath",
    "NlmcError",
    "NumericalError",
    "PolyTerm",
    "PolynomialCell",
    "RateMatrix",
    "ReducedSystem",
    "ReducibleGeneratorError",
    "SearchControls",
    "SimplexGrid",
    "StationaryResult",
    "StationarySet",
    "Trajectory",
    "ValidationReport",
    "build_M",
    "certify_ergodic_2",
    "certify_ergodic_3",
    "certify_unique",
    "constant_generator",
    "corpus",
    "evolve",
    "find_invariant",
    "flow_invariance_audit",
    "frozen_stationary",
    "generator_from_json",
    "generator_to_json",
    "integrate_flow",
    "irreducible_at",
    "lipschitz_estimate",
    "load_generator",
    "polynomial_generator",
    "project_to_simplex",
    "reduced_system",
    "residual",
    "sample_path",
    "save_generator",
    "scalar_drift",
    "tangent_cone_member",
    "thinning_bound",
    "validate",
]
