"""Detection-time distributions of quantum events under repeated projective measurement."""
from .chain import BranchLedger, ChainResult, branch_ledger, run_chain, zeno_sweep
from .conditional import (
    ConditionalEvolution,
    HazardSeries,
    conditional_hamiltonian,
    conditional_state,
    hazard_series,
    validity_epsilon,
)
from .distribution import (
    DetectionDistribution,
    PovmSet,
    build_distribution,
    integral_equation_residual,
    mean_detection_time,
    povm_set,
    total_probability,
)
from .linalg import (
    AnnihilatedState,
    HermitianOperator,
    Projector,
    QuantumState,
    UnitaryPropagator,
    apply_and_norm,
    energy_uncertainty,
    make_projector,
    propagator,
)

__version__ = "0.1.0"
