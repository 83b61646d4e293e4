"""RNA secondary structure prediction with a learned pair scorer and an
unrolled primal-dual decoder."""

from .core import (
    RnaSequence,
    Violation,
    build_constraint_mask,
    is_pseudoknotted,
    matrix_to_pairs,
    pairs_to_matrix,
    round_structure,
    transform_T,
    validate_structure,
)
from .ioformats import FormatError, StructureRecord, read_structure, scan_dataset
from .model import Model
from .ppnet import PpParams, pp_solve_convergent, pp_unroll

__version__ = "0.1.0"

__all__ = [
    "FormatError",
    "Model",
    "PpParams",
    "RnaSequence",
    "StructureRecord",
    "Violation",
    "build_constraint_mask",
    "is_pseudoknotted",
    "matrix_to_pairs",
    "pairs_to_matrix",
    "pp_solve_convergent",
    "pp_unroll",
    "read_structure",
    "round_structure",
    "scan_dataset",
    "transform_T",
    "validate_structure",
]
