"""Continuous weak-measurement trajectory simulation.

One monitored observable A at strength kappa, followed through three
equivalent pictures that check each other:

* per-slice Gaussian measurement instruments (Kraus kernels, readout
  lattices, brute-force record enumeration) in :mod:`contmeas.instrument`;
* the Ito stochastic wave equation and its linear record-driven twin in
  :mod:`contmeas.unraveling`, with counter-addressed noise streams from
  :mod:`contmeas.noise`;
* the record-averaged master equation in :mod:`contmeas.nonselective`.

:mod:`contmeas.freeparticle` adds the position-monitored free particle,
where the grid unraveling is cross-checked against a closed set of
Gaussian moment equations. The config/runner/cli layer turns all of it
into reproducible command-line experiments.
"""

from ._version import __version__
from .config import (
    GridSystem,
    LatticeSpec,
    MatrixSystem,
    SimConfig,
    config_echo,
    parse_config,
    parse_config_data,
)
from .errors import (
    ConfigurationError,
    DimensionMismatchError,
    EnumerationSizeError,
    HermiticityError,
    InvalidStateError,
    ModeError,
    OracleConvergenceError,
    SimulationError,
    StepSizeError,
    ZeroNormError,
)
from .freeparticle import (
    FreeParticleParams,
    FreeParticleReport,
    GaussianState,
    GridConfig,
    GridMomentSeries,
    OracleTrajectory,
    SeedComparison,
    check_grid_resolution,
    covariance_flow,
    free_spreading_check,
    free_spreading_var_q,
    grid_moments,
    grid_vs_oracle,
    moment_step,
    run_oracle,
    stationary_covariance,
)
from .hilbert import (
    DensityMatrix,
    DiagonalGridOperator,
    GridWavefunction,
    HermitianOperator,
    StateVector,
    apply,
    double_commutator,
    expectation,
    fidelity,
    gaussian_packet,
    kinetic_operator,
    norm2,
    position_operator,
    trace_distance,
    variance,
)
from .instrument import (
    CorridorResult,
    CorridorSpec,
    EnumerationResult,
    GaussianInstrument,
    RecordLattice,
    completeness_defect,
    corridor_probability,
    enumerate_record_distribution,
    kraus,
    propagator_for_record,
)
from .noise import GAUSSIAN_ALGORITHM, NoiseStream
from .nonselective import (
    EnsembleDensity,
    MasterEqConfig,
    MasterEqResult,
    ensemble_average,
    me_derivative,
    run_me,
)
from .runner import EnsembleStats, run_ensemble, run_experiment
from .unraveling import (
    LINEAR_WITH_RECORD,
    NONLINEAR,
    MeasurementRecord,
    MeasurementStrength,
    TrajectoryResult,
    check_step_size,
    emit_record,
    record_weight,
    replay_equivalence,
    run_selective,
    step_linear,
    step_nonlinear,
)

__all__ = [
    "__version__",
    "GAUSSIAN_ALGORITHM",
    "LINEAR_WITH_RECORD",
    "NONLINEAR",
    "ConfigurationError",
    "CorridorResult",
    "CorridorSpec",
    "DensityMatrix",
    "DiagonalGridOperator",
    "DimensionMismatchError",
    "EnsembleDensity",
    "EnsembleStats",
    "EnumerationResult",
    "EnumerationSizeError",
    "FreeParticleParams",
    "FreeParticleReport",
    "GaussianInstrument",
    "GaussianState",
    "GridConfig",
    "GridMomentSeries",
    "GridSystem",
    "GridWavefunction",
    "HermiticityError",
    "HermitianOperator",
    "InvalidStateError",
    "LatticeSpec",
    "MasterEqConfig",
    "MasterEqResult",
    "MatrixSystem",
    "MeasurementRecord",
    "MeasurementStrength",
    "ModeError",
    "NoiseStream",
    "OracleConvergenceError",
    "OracleTrajectory",
    "RecordLattice",
    "SeedComparison",
    "SimConfig",
    "SimulationError",
    "StateVector",
    "StepSizeError",
    "TrajectoryResult",
    "ZeroNormError",
    "apply",
    "check_grid_resolution",
    "check_step_size",
    "completeness_defect",
    "config_echo",
    "corridor_probability",
    "covariance_flow",
    "double_commutator",
    "emit_record",
    "ensemble_average",
    "enumerate_record_distribution",
    "expectation",
    "fidelity",
    "free_spreading_check",
    "free_spreading_var_q",
    "gaussian_packet",
    "grid_moments",
    "grid_vs_oracle",
    "kinetic_operator",
    "kraus",
    "me_derivative",
    "moment_step",
    "norm2",
    "parse_config",
    "parse_config_data",
    "position_operator",
    "propagator_for_record",
    "record_weight",
    "replay_equivalence",
    "run_ensemble",
    "run_experiment",
    "run_me",
    "run_oracle",
    "run_selective",
    "stationary_covariance",
    "step_linear",
    "step_nonlinear",
    "trace_distance",
    "variance",
]
