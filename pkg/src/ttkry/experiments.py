"""Benchmark runs: the preconditioned convection-diffusion and parametric diffusion solves."""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from ttkry.dmrg import DmrgMatrixOperator
from ttkry.krylov import operator_closure, relaxed_gmres
from ttkry.models.dmrg_options import DmrgOptions
from ttkry.models.experiment import ExperimentConfig, RunSummary
from ttkry.models.solver import ConvergenceRecord, SolverConfig
from ttkry.models.truncation import TruncationSpec
from ttkry.operator_cache import OperatorCache
from ttkry.operators import (
    compose,
    conv_diff_3d,
    conv_diff_rhs,
    inv_laplace_operator,
    kl_stiffness,
    parametric_inv_laplace,
    quantize_spatial,
    reciprocal_stiffness,
)
from ttkry.rounding import MatrixOperator, TTOperator
from ttkry.tensor import TTMatrix, TTTensor, ones, quantize, zeros
from ttkry.utils.arrow_converter import write_history_csv

logger = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    solution: TTTensor
    record: ConvergenceRecord
    summary: RunSummary


def solver_config(cfg: ExperimentConfig) -> SolverConfig:
    return SolverConfig(
        eps=cfg.eps,
        restart_m=cfg.restart_m,
        max_restarts=cfg.max_restarts,
        rmax=cfg.rmax,
        relaxation=cfg.relax,
    )


def _solve(
    cfg: ExperimentConfig, system: TTOperator, rhs: TTTensor
) -> tuple[TTTensor, ConvergenceRecord, Optional[float]]:
    started = time.perf_counter()
    solution, record = relaxed_gmres(
        operator_closure(system, cfg.rmax),
        rhs,
        zeros(rhs.shape),
        solver_config(cfg),
        clock=time.perf_counter if cfg.timings else None,
    )
    wall_s = time.perf_counter() - started if cfg.timings else None
    return solution, record, wall_s


def _summary(
    cfg: ExperimentConfig, record: ConvergenceRecord, wall_s: Optional[float]
) -> RunSummary:
    return RunSummary(
        experiment=cfg.experiment.value,
        converged=record.converged,
        iterations=record.iteration_count,
        resid_computed_rel=record.final_computed_residual,
        resid_true_rel=record.final_true_residual,
        rank_solution_max=record.rank_solution_max,
        rank_krylov_max=record.rank_krylov_max,
        rank_cap_hit=record.rank_cap_hit,
        wall_s=wall_s,
        config=cfg.model_dump(mode="json"),
    )


def run_convdiff(cfg: ExperimentConfig, cache: Optional[OperatorCache] = None) -> ExperimentResult:
    """
    Solve M A u = M b for the 3D convection-diffusion problem.

    M is the exponential-sum inverse Laplacian applied term-wise, or the
    identity with ``preconditioner="identity"``.
    """
    cache = cache if cache is not None else OperatorCache()
    matrix = cache.get_or_build(
        "conv_diff_3d", {"n": cfg.n, "alpha": cfg.alpha}, lambda: conv_diff_3d(cfg.n, cfg.alpha)
    )
    b = conv_diff_rhs(cfg.n, cfg.alpha)
    operator: TTOperator = MatrixOperator(matrix)
    if cfg.preconditioner == "expsum":
        preconditioner = inv_laplace_operator(cfg.n, 3, cfg.M)
        system: TTOperator = compose([preconditioner, operator])
        rhs = preconditioner.apply(b, TruncationSpec(eps=cfg.eps / 10, rmax=cfg.rmax))
    else:
        system, rhs = operator, b
    logger.info(
        "convdiff n=%d alpha=%g eps=%.1e preconditioner=%s relax=%s",
        cfg.n,
        cfg.alpha,
        cfg.eps,
        cfg.preconditioner,
        cfg.relax,
    )
    solution, record, wall_s = _solve(cfg, system, rhs)
    return ExperimentResult(solution, record, _summary(cfg, record, wall_s))


def _operator_factory(cfg: ExperimentConfig) -> Callable[[TTMatrix], TTOperator]:
    if cfg.rounding == "dmrg":
        options = DmrgOptions(eps=cfg.eps, rmax=cfg.rmax)
        return lambda matrix: DmrgMatrixOperator(matrix, options)
    return MatrixOperator


def run_ppde(cfg: ExperimentConfig, cache: Optional[OperatorCache] = None) -> ExperimentResult:
    """
    Solve P2 Gamma(a) u = P2 f, f = 1, for the parametric KL diffusion problem.

    With ``qtt`` the spatial mode of every operator and vector is quantized to
    binary digits.
    """
    cache = cache if cache is not None else OperatorCache()
    nx, ny, d = cfg.nx, cfg.ny, cfg.d
    sizes = {"nx": nx, "ny": ny, "d": d}
    stiffness = cache.get_or_build("kl_stiffness", sizes, lambda: kl_stiffness(nx, ny, d))
    inv_laplace = cache.get_or_build(
        "parametric_inv_laplace", {**sizes, "M": cfg.M}, lambda: parametric_inv_laplace(nx, ny, d, cfg.M)
    )
    reciprocal = cache.get_or_build(
        "reciprocal_stiffness",
        {**sizes, "eps": cfg.eps, "maxit": cfg.newton_maxit},
        lambda: reciprocal_stiffness(nx, ny, d, TruncationSpec(eps=cfg.eps), cfg.newton_maxit)[0],
    )
    f = ones((nx,) + (ny,) * d)
    if cfg.qtt:
        stiffness, inv_laplace, reciprocal = (
            quantize_spatial(stiffness),
            quantize_spatial(inv_laplace),
            quantize_spatial(reciprocal),
        )
        f = quantize(f, 2, modes=[0])

    wrap = _operator_factory(cfg)
    preconditioner = compose([wrap(inv_laplace), wrap(reciprocal), wrap(inv_laplace)])
    system = compose([wrap(inv_laplace), wrap(reciprocal), wrap(inv_laplace), wrap(stiffness)])
    rhs = preconditioner.apply(f, TruncationSpec(eps=cfg.eps / 10, rmax=cfg.rmax))
    logger.info(
        "ppde nx=%d ny=%d d=%d eps=%.1e qtt=%s rounding=%s", nx, ny, d, cfg.eps, cfg.qtt, cfg.rounding
    )
    solution, record, wall_s = _solve(cfg, system, rhs)
    return ExperimentResult(solution, record, _summary(cfg, record, wall_s))


def write_outputs(result: ExperimentResult, out: Path, timings: bool = True) -> None:
    """Write history.csv and summary.json into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    write_history_csv(result.record, out / "history.csv", timings=timings)
    (out / "summary.json").write_text(result.summary.model_dump_json(indent=2) + "\n")
