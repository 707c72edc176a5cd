"""Desk-scale numerical laboratory for two-dimensional dilute Bose gases.

Four coupled layers: microscopic zero-energy scattering and the softened-pair
construction (scattering), scaled potential families and log-smeared
comparisons (potentials), mean-field propagation on a periodic grid (gp),
exact few-boson lattice dynamics (fewbody), and condensation-counting
diagnostics tying them together (diagnostics). The cli module exposes each
layer as a reproducible experiment.
"""

__version__ = "0.1.0"

from .scattering import (
    MicroscopicPair,
    RadialPotential,
    ScatteringSolution,
    build_microscopic,
    check_pair_positivity,
    coupling_deviation,
    g_norm_report,
    integral_I,
    potential_from_table,
    scaled_scattering_identity,
    solve_zero_energy,
    square_well,
)
from .fitting import FitResult, power_law_fit
from .potentials import (
    ScaledPotential,
    SmearedComparison,
    laplacian_residual,
    make_scaled,
    make_smeared,
    smeared_norm_report,
)
from .gp import (
    ExternalField,
    GpParams,
    Grid2D,
    GpState,
    gp_energy,
    ground_state,
    propagate as gp_propagate,
    spectral_tail_fraction,
)
from .fewbody import (
    DiscreteHamiltonian,
    FewBodyState,
    Lattice2D,
    build_hamiltonian,
    energy_per_particle,
    jastrow_initial_state,
    propagate as fewbody_propagate,
)
from .diagnostics import (
    AlphaFullResult,
    CondensateProjector,
    CutoffReport,
    DiagnosticsReport,
    NumberExpectations,
    OperatorAlgebraReport,
    RateComparison,
    WeightFunction,
    alpha_full,
    alpha_less,
    counting_difference,
    counting_weight,
    cutoff_indicators,
    ddt_weight_identity,
    diagnostics_report,
    gamma1,
    number_expectations,
    number_weight,
    operator_algebra_suite,
    trace_distance,
    weight_expectation,
)
from .cli import ExperimentConfig, PotentialSpec, RunManifest, fit_report, load_config, run

__all__ = [
    "__version__",
    "ExperimentConfig",
    "PotentialSpec",
    "RunManifest",
    "fit_report",
    "load_config",
    "run",
    "MicroscopicPair",
    "RadialPotential",
    "ScatteringSolution",
    "build_microscopic",
    "check_pair_positivity",
    "coupling_deviation",
    "g_norm_report",
    "integral_I",
    "potential_from_table",
    "scaled_scattering_identity",
    "solve_zero_energy",
    "square_well",
    "FitResult",
    "power_law_fit",
    "ScaledPotential",
    "SmearedComparison",
    "laplacian_residual",
    "make_scaled",
    "make_smeared",
    "smeared_norm_report",
    "ExternalField",
    "GpParams",
    "Grid2D",
    "GpState",
    "gp_energy",
    "ground_state",
    "gp_propagate",
    "spectral_tail_fraction",
    "DiscreteHamiltonian",
    "FewBodyState",
    "Lattice2D",
    "build_hamiltonian",
    "energy_per_particle",
    "jastrow_initial_state",
    "fewbody_propagate",
    "AlphaFullResult",
    "CondensateProjector",
    "CutoffReport",
    "DiagnosticsReport",
    "NumberExpectations",
    "OperatorAlgebraReport",
    "RateComparison",
    "WeightFunction",
    "alpha_full",
    "alpha_less",
    "counting_difference",
    "counting_weight",
    "cutoff_indicators",
    "ddt_weight_identity",
    "diagnostics_report",
    "gamma1",
    "number_expectations",
    "number_weight",
    "operator_algebra_suite",
    "trace_distance",
    "weight_expectation",
]
