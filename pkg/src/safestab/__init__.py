"""Penalty-based safe stabilizing feedback with region-of-attraction tuning.

Closed-form controllers that keep one certificate inequality hard and
penalize the other, exact small-QP baselines, spurious-equilibrium and
incompatibility analysis, certified penalty ranges, and reproducible
closed-loop simulation.
"""

from .analysis import (
    EquilibriumScan,
    IncompatibilityResult,
    LevelEstimate,
    LimitEstimates,
    RoaCertificate,
    SamplingPlan,
    b_function,
    c_function,
    clf_decrease_margin,
    equilibrium_scan,
    incompatibility_test,
    largest_certified_level,
    limit_estimates,
    q1_bound_curve,
    q1_residual,
    q2_residual,
    roa_certify,
    sample_sublevel,
    switching_function,
)
from .controllers import (
    ConstraintData,
    ControlBranch,
    ControlOutput,
    OracleSolution,
    PenaltyConfig,
    PenaltyMode,
    assemble_constraints,
    clf_cbf_qp_controller,
    make_penalty_controller,
    nominal_adaptation,
    penalty_control,
    penalty_controller,
    qp_oracle,
    safety_filter_controller,
)
from .errors import (
    CertificateRefusal,
    InfeasibleProblemError,
    NumericEvaluationError,
    SafeStabError,
    ScenarioError,
    SingularConstraintError,
)
from .simulation import (
    Outcome,
    OutcomeKind,
    SimConfig,
    SimulationAbort,
    Trajectory,
    batch_simulate,
    simulate,
    trajectory_csv_lines,
    write_trajectory_csv,
)
from .systems import (
    BUILTIN_SCENARIOS,
    ClassKFunction,
    LieData,
    ScalarCertificate,
    Scenario,
    SystemDynamics,
    build_planar_example,
    build_random_polynomial_scenario,
    lie_derivatives,
    resolve_scenario,
    scenario_from_tables,
    validate_scenario,
)

__version__ = "0.1.0"
