from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

SUMMARY_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1


class ExperimentKind(str, Enum):
    CONVDIFF = "convdiff"
    PPDE = "ppde"
    PROPTESTS = "proptests"


class ExperimentConfig(BaseModel):
    """
    Represents one experiment run from the command line or a config file.
    """

    experiment: ExperimentKind
    n: int = Field(64, ge=2)
    nx: int = Field(64, ge=2)
    ny: int = Field(16, ge=2)
    alpha: float = Field(1.0, gt=0.0)
    d: int = Field(10, ge=1, le=20)
    eps: float = Field(1e-5, gt=0.0, lt=1.0)
    restart_m: int = Field(80, ge=1)
    max_restarts: int = Field(10, ge=0)
    rmax: Optional[int] = Field(None, ge=1)
    relax: bool = True
    qtt: bool = False
    M: int = Field(36, ge=1)
    seed: int = Field(42, ge=0)
    out: Path = Path("out")
    preconditioner: str = Field("expsum", pattern="^(expsum|identity)$")
    rounding: str = Field("svd", pattern="^(svd|dmrg)$")
    newton_maxit: int = Field(30, ge=1)
    timings: bool = True
    cases: int = Field(500, ge=1)
    inject_fault: bool = False

    @model_validator(mode="after")
    def check_qtt_sizes(self) -> "ExperimentConfig":
        if self.qtt and self.nx & (self.nx - 1):
            raise ValueError(f"qtt requires nx to be a power of 2, got {self.nx}")
        return self


class RunSummary(BaseModel):
    """
    Represents the summary.json written next to history.csv.
    """

    schema_version: int = SUMMARY_SCHEMA_VERSION
    experiment: str
    converged: bool
    iterations: int
    resid_computed_rel: Optional[float]
    resid_true_rel: Optional[float]
    rank_solution_max: int
    rank_krylov_max: int
    rank_cap_hit: bool = False
    wall_s: Optional[float] = None
    config: Dict[str, Any] = Field(default_factory=dict)


class PropertyResult(BaseModel):
    """
    Represents the outcome of one property over all generated cases.
    """

    name: str
    passed: bool
    cases: int
    failures: int = 0
    counterexample: Optional[Dict[str, Any]] = None
    detail: Optional[str] = None


class PropertyReport(BaseModel):
    """
    Represents the machine-readable report of a proptests run.
    """

    schema_version: int = REPORT_SCHEMA_VERSION
    seed: int
    inject_fault: bool
    properties: List[PropertyResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.properties)
