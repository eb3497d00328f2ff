from .dmrg_options import DmrgOptions, LocalEpsPolicy
from .experiment import (
    ExperimentConfig,
    ExperimentKind,
    PropertyReport,
    PropertyResult,
    RunSummary,
)
from .grid import Grid1D, KLCoefficient
from .solver import ConvergenceRecord, IterationRow, RestartRow, SolverConfig
from .truncation import LocalPolicy, TruncationSpec

__all__ = [
    "ConvergenceRecord",
    "DmrgOptions",
    "ExperimentConfig",
    "ExperimentKind",
    "Grid1D",
    "IterationRow",
    "KLCoefficient",
    "LocalEpsPolicy",
    "LocalPolicy",
    "PropertyReport",
    "PropertyResult",
    "RestartRow",
    "RunSummary",
    "SolverConfig",
    "TruncationSpec",
]
