from .models import (
    ConvergenceRecord,
    DmrgOptions,
    ExperimentConfig,
    SolverConfig,
    TruncationSpec,
)
from .rounding import round, round_absolute
from .tensor import DenseTensor, TTMatrix, TTTensor, full, tt_svd

__all__ = [
    "ConvergenceRecord",
    "DenseTensor",
    "DmrgOptions",
    "ExperimentConfig",
    "SolverConfig",
    "TTMatrix",
    "TTTensor",
    "TruncationSpec",
    "full",
    "round",
    "round_absolute",
    "tt_svd",
]
