"""Asymptotic singular-vector overlaps of noisy matrices and their truncations.

The package computes, for a noisy rectangular matrix and the matrix
obtained by zeroing everything outside a top-left block, the limiting
rescaled mean-squared overlaps between the two sets of singular vectors,
and validates the formulas by Monte Carlo over Gaussian ensembles.
"""

__version__ = "0.1.0"

from .ensemble import (
    MatrixSpec,
    OverlapEstimate,
    SvdTriplet,
    TargetEstimates,
    correlation_identity_test,
    mc_kernel_overlaps,
    mc_rescaled_overlaps,
    overlap_matrices,
    sample_ensemble,
    svd_full,
    svd_truncated,
)
from .overlaps import (
    CharacteristicPoint,
    InitialOverlapTables,
    KernelOverlaps,
    OverlapTriple,
    ResolventTriple,
    characteristic_point,
    general_overlap_triple,
    initial_resolvents,
    invert_bulk,
    invert_null_overlap,
    kernel_row_normalization,
    mp_kernel_overlaps,
    mp_overlap_triple,
    normalization_check,
    propagate_resolvents,
)
from .params import Dims, ShapeRatios
from .sde import (
    BrownianTree,
    BurgersValidation,
    EigenState,
    bru_step,
    burgers_validate,
    integrate_spectrum,
    ks_distance_to_law,
    split_degeneracies,
)
from .spectral import (
    AtomicStieltjes,
    BoundaryValue,
    MPSpec,
    SolverOptions,
    SpectrumT0,
    bulk_interval,
    default_eps_schedule,
    empirical_stieltjes,
    evolve_stieltjes,
    mp_density,
    mp_density_max,
    mp_edges,
    mp_hilbert,
    mp_stieltjes,
    plemelj_boundary,
    quantile,
    tail_mass,
)

__all__ = [
    "__version__",
    "Dims",
    "ShapeRatios",
    "AtomicStieltjes",
    "BoundaryValue",
    "MPSpec",
    "SolverOptions",
    "SpectrumT0",
    "bulk_interval",
    "default_eps_schedule",
    "empirical_stieltjes",
    "evolve_stieltjes",
    "mp_density",
    "mp_density_max",
    "mp_edges",
    "mp_hilbert",
    "mp_stieltjes",
    "plemelj_boundary",
    "quantile",
    "tail_mass",
    "MatrixSpec",
    "OverlapEstimate",
    "SvdTriplet",
    "TargetEstimates",
    "correlation_identity_test",
    "mc_kernel_overlaps",
    "mc_rescaled_overlaps",
    "overlap_matrices",
    "sample_ensemble",
    "svd_full",
    "svd_truncated",
    "CharacteristicPoint",
    "InitialOverlapTables",
    "KernelOverlaps",
    "OverlapTriple",
    "ResolventTriple",
    "characteristic_point",
    "general_overlap_triple",
    "initial_resolvents",
    "invert_bulk",
    "invert_null_overlap",
    "kernel_row_normalization",
    "mp_kernel_overlaps",
    "mp_overlap_triple",
    "normalization_check",
    "propagate_resolvents",
    "BrownianTree",
    "BurgersValidation",
    "EigenState",
    "bru_step",
    "burgers_validate",
    "integrate_spectrum",
    "ks_distance_to_law",
    "split_degeneracies",
]
