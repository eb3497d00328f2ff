from typing import List, Optional

from pydantic import BaseModel, Field, model_validator


class SolverConfig(BaseModel):
    """
    Represents the parameters of a restarted (relaxed) GMRES run.

    The per-step truncation tolerance is ``eps`` divided by the current relative
    computed residual when ``relaxation`` is on, capped at ``delta_cap``. Without
    an explicit cap the tolerance never exceeds ``1 / (restart_m * cond_estimate)``.
    A run counts as converged only when its recomputed true residual is at most
    ``true_residual_bound``.
    """

    eps: float = Field(1e-5, gt=0.0, lt=1.0)
    restart_m: int = Field(80, ge=1)
    max_restarts: int = Field(10, ge=0)
    rmax: Optional[int] = Field(None, ge=1)
    relaxation: bool = True
    delta_cap: Optional[float] = Field(None, gt=0.0)
    cond_estimate: float = Field(1.0, gt=0.0)
    breakdown_tol: float = Field(1e-12, ge=0.0)
    second_pass: bool = False
    per_addition_truncation: bool = False
    fixed_delta: Optional[float] = Field(None, ge=0.0)
    true_residual_tol: Optional[float] = Field(None, ge=0.0)
    formal_rank_limit: int = Field(256, ge=2)
    accept_factor: Optional[float] = Field(None, ge=1.0)

    @model_validator(mode="after")
    def check_delta_cap(self) -> "SolverConfig":
        if self.delta_cap is not None and self.delta_cap < self.eps:
            raise ValueError(
                f"delta_cap ({self.delta_cap}) must not be smaller than eps ({self.eps})"
            )
        return self

    @property
    def residual_tol(self) -> float:
        """MatVec tolerance used when a true residual is recomputed."""
        if self.fixed_delta is not None:
            return self.fixed_delta
        if self.true_residual_tol is not None:
            return self.true_residual_tol
        return self.eps / 10

    @property
    def effective_delta_cap(self) -> float:
        """Largest product tolerance the relaxation schedule may hand out."""
        if self.delta_cap is not None:
            return self.delta_cap
        return max(self.eps, min(0.5, 1.0 / (self.restart_m * self.cond_estimate)))

    @property
    def true_residual_bound(self) -> float:
        """
        Relative true residual a run must reach to count as converged.

        Defaults to ``(2 + cond_estimate) * eps``: the computed residual (at most
        eps), the relaxation gap (eps) and the solution rounding at eps amplified
        by cond(A).
        """
        factor = self.accept_factor if self.accept_factor is not None else 2.0 + self.cond_estimate
        return factor * self.eps

    @property
    def gap_bound(self) -> float:
        """Relative residual-gap bound m * cond(A) * eps of the relaxed scheme."""
        return self.restart_m * self.cond_estimate * self.eps


class IterationRow(BaseModel):
    """
    Represents one Arnoldi step of the convergence history.

    ``resid_true_rel`` and ``rank_solution_max`` are only set on rows where the
    solution was formed (iteration 0 and the last step of every cycle).
    """

    iter: int = Field(..., ge=0)
    resid_computed_rel: float
    resid_true_rel: Optional[float] = None
    delta: float
    rank_krylov_max: int = Field(..., ge=0)
    rank_solution_max: Optional[int] = None
    wall_ms: Optional[float] = None


class RestartRow(BaseModel):
    """
    Represents the state at the end of one restart cycle.
    """

    cycle: int = Field(..., ge=0)
    iter: int = Field(..., ge=0)
    resid_true_rel: float
    rank_solution_max: int
    sigma_min: Optional[float] = None


class ConvergenceRecord(BaseModel):
    """
    Represents the full history of a GMRES run.
    """

    iterations: List[IterationRow] = Field(default_factory=list)
    restarts: List[RestartRow] = Field(default_factory=list)
    converged: bool = False
    breakdown: bool = False
    rank_cap_hit: bool = False

    @property
    def iteration_count(self) -> int:
        """Number of Arnoldi steps (the iteration-0 row is not a step)."""
        return max((row.iter for row in self.iterations), default=0)

    @property
    def final_computed_residual(self) -> Optional[float]:
        if not self.iterations:
            return None
        return self.iterations[-1].resid_computed_rel

    @property
    def final_true_residual(self) -> Optional[float]:
        if not self.restarts:
            return None
        return self.restarts[-1].resid_true_rel

    @property
    def rank_krylov_max(self) -> int:
        return max((row.rank_krylov_max for row in self.iterations), default=0)

    @property
    def rank_solution_max(self) -> int:
        return max((row.rank_solution_max for row in self.restarts), default=0)

    def computed_history(self) -> List[float]:
        return [row.resid_computed_rel for row in self.iterations]
