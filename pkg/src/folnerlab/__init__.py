"""Quasi-tilings, regular filtered Folner sequences and matrix-valued
Calderon-Zygmund checks on concrete discrete amenable groups."""

from .czdec import cuculescu, cz_decompose, verify_bad, verify_good, verify_hybrid, zeta_projection
from .ergodic import (
    TorusTranslation,
    UnitaryConjugation,
    admissible_split,
    difference,
    ergodic_converge,
    l2_bound_check,
    local_estimate_report,
    maximal_projection,
    weak11_check,
)
from .errors import (
    ConfigError,
    FolnerLabError,
    PreconditionError,
    WindowExhaustedError,
    WindowOverflowError,
)
from .filtration import (
    BuildConfig,
    FilteredSequence,
    Partition,
    build_filtered_sequence,
    build_quasi_partition,
    validate_regular,
)
from .geometry import boundary, is_boundary_invariant, is_invariant
from .groups import FiniteSubset, Schedule, folner_set, get_model, word_ball
from .ncalg import OpValuedFunction, averaging, conditional_expectation
from .tiling import quasi_tile, validate_quasi_tiling

__version__ = "0.1.0"

__all__ = [
    "BuildConfig",
    "ConfigError",
    "FilteredSequence",
    "FiniteSubset",
    "FolnerLabError",
    "OpValuedFunction",
    "Partition",
    "PreconditionError",
    "Schedule",
    "TorusTranslation",
    "UnitaryConjugation",
    "WindowExhaustedError",
    "WindowOverflowError",
    "admissible_split",
    "averaging",
    "boundary",
    "build_filtered_sequence",
    "build_quasi_partition",
    "conditional_expectation",
    "cuculescu",
    "cz_decompose",
    "difference",
    "ergodic_converge",
    "folner_set",
    "get_model",
    "is_boundary_invariant",
    "is_invariant",
    "l2_bound_check",
    "local_estimate_report",
    "maximal_projection",
    "quasi_tile",
    "validate_quasi_tiling",
    "validate_regular",
    "verify_bad",
    "verify_good",
    "verify_hybrid",
    "weak11_check",
    "word_ball",
    "zeta_projection",
]
