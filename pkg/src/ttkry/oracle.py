"""
Dense brute-force references for small instances.

Everything here densifies; sizes are guarded. Vectors use the first-index-fastest
linearization of :class:`ttkry.tensor.DenseTensor`, so a Kronecker product
``F_1 (x) ... (x) F_d`` over modes 1..d is ``numpy.kron(F_d, ..., F_1)``.
"""

import logging
import math
import time
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from ttkry.models.solver import ConvergenceRecord, IterationRow, RestartRow, SolverConfig
from ttkry.tensor import (
    Array,
    DenseGuardError,
    DenseTensor,
    KroneckerTerm,
    TTMatrix,
    TTTensor,
    full,
    tt_svd_capped,
)

logger = logging.getLogger(__name__)

DENSE_GUARD = 4096


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """A square matrix over the flattened index space of ``shape``."""

    shape: Tuple[int, ...]
    matrix: Array

    def __post_init__(self) -> None:
        size = math.prod(self.shape)
        if self.matrix.shape != (size, size):
            raise ValueError(
                f"matrix of shape {self.matrix.shape} does not act on {self.shape}"
            )

    def __matmul__(self, v: Array) -> Array:
        return self.matrix @ v


def _check_guard(size: int, guard: int) -> None:
    if size > guard:
        raise DenseGuardError(f"dense dimension {size} exceeds the oracle guard {guard}")


def kron_dense(factors: Sequence[Array]) -> Array:
    """F_1 (x) ... (x) F_d in the first-index-fastest linearization."""
    return reduce(np.kron, reversed([np.asarray(f, dtype=np.float64) for f in factors]))


def kron_sum_dense(terms: Sequence[KroneckerTerm]) -> Array:
    return sum(term.coefficient * kron_dense(term.factors) for term in terms)  # type: ignore[return-value]


def dense_from_tt(a: TTMatrix, guard: int = DENSE_GUARD) -> DenseOperator:
    """Exact matricization of an operator train."""
    rows, cols = math.prod(a.row_shape), math.prod(a.col_shape)
    _check_guard(max(rows, cols), guard)
    block = a.cores[0][0]
    for core in a.cores[1:]:
        r, m, n, r_next = core.shape
        merged = np.einsum("MNr,rmns->mMnNs", block, core)
        block = merged.reshape(m * block.shape[0], n * block.shape[1], r_next)
    if rows != cols:
        raise ValueError(f"operator is not square: {a.row_shape} -> {a.col_shape}")
    return DenseOperator(a.row_shape, block[:, :, 0])


def dense_vector(t: TTTensor, guard: int = DENSE_GUARD) -> Array:
    """The flat first-index-fastest values of a TT vector."""
    _check_guard(math.prod(t.shape), guard)
    return np.array(full(t).values)


def relative_error(approx: npt.ArrayLike, exact: npt.ArrayLike) -> float:
    exact_arr = np.asarray(exact, dtype=np.float64)
    scale = float(np.linalg.norm(exact_arr))
    diff = float(np.linalg.norm(np.asarray(approx, dtype=np.float64) - exact_arr))
    return diff / scale if scale > 0 else diff


def condition_number(a: DenseOperator) -> float:
    return float(np.linalg.cond(a.matrix))


def dense_gmres(
    a: DenseOperator,
    b: Array,
    x0: Optional[Array],
    cfg: SolverConfig,
    guard: int = DENSE_GUARD,
    clock: Optional[Callable[[], float]] = time.perf_counter,
) -> Tuple[Array, ConvergenceRecord]:
    """
    Textbook restarted GMRES(m) with modified Gram-Schmidt and exact products.

    The per-iteration residual is the least-squares residual of the Hessenberg
    problem; the true residual is recomputed at the end of every cycle. The
    record has the same layout as the one from relaxed GMRES.
    """
    n = a.matrix.shape[0]
    _check_guard(n, guard)
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        raise ValueError("right-hand side must be nonzero")
    started = clock() if clock is not None else None

    def elapsed_ms() -> Optional[float]:
        return None if clock is None or started is None else (clock() - started) * 1000.0

    record = ConvergenceRecord()
    r = b - a.matrix @ x
    beta = float(np.linalg.norm(r))
    record.iterations.append(
        IterationRow(
            iter=0,
            resid_computed_rel=beta / b_norm,
            resid_true_rel=beta / b_norm,
            delta=0.0,
            rank_krylov_max=1,
            rank_solution_max=1,
            wall_ms=elapsed_ms(),
        )
    )
    record.restarts.append(RestartRow(cycle=0, iter=0, resid_true_rel=beta / b_norm, rank_solution_max=1))
    if beta / b_norm <= cfg.eps:
        record.converged = True
        return x, record

    m = cfg.restart_m
    iteration = 0
    for cycle in range(1, cfg.max_restarts + 2):
        basis = np.zeros((n, m + 1))
        h = np.zeros((m + 1, m))
        basis[:, 0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        y = np.zeros(0)
        computed = beta / b_norm
        for j in range(m):
            iteration += 1
            w = a.matrix @ basis[:, j]
            applied = float(np.linalg.norm(w))
            for i in range(j + 1):
                h[i, j] = np.dot(basis[:, i], w)
                w -= h[i, j] * basis[:, i]
            h[j + 1, j] = np.linalg.norm(w)
            breakdown = h[j + 1, j] <= cfg.breakdown_tol * applied
            if breakdown:
                h[j + 1, j] = 0.0
            else:
                basis[:, j + 1] = w / h[j + 1, j]
            y, *_ = np.linalg.lstsq(h[: j + 2, : j + 1], g[: j + 2], rcond=None)
            computed = float(np.linalg.norm(h[: j + 2, : j + 1] @ y - g[: j + 2])) / b_norm
            record.iterations.append(
                IterationRow(
                    iter=iteration,
                    resid_computed_rel=computed,
                    delta=0.0,
                    rank_krylov_max=1,
                    wall_ms=elapsed_ms(),
                )
            )
            if breakdown:
                record.breakdown = True
                break
            if computed <= cfg.eps:
                break
        x = x + basis[:, : len(y)] @ y
        r = b - a.matrix @ x
        beta = float(np.linalg.norm(r))
        true_rel = beta / b_norm
        record.iterations[-1].resid_true_rel = true_rel
        record.iterations[-1].rank_solution_max = 1
        record.restarts.append(
            RestartRow(cycle=cycle, iter=iteration, resid_true_rel=true_rel, rank_solution_max=1)
        )
        if computed <= cfg.eps or true_rel <= cfg.eps:
            record.converged = True
            return x, record
    logger.warning("dense GMRES did not converge within %d restarts", cfg.max_restarts)
    return x, record


@dataclass
class BestRankError:
    """
    ``lower_bound`` is the largest unfolding tail beyond the requested ranks, a
    lower bound on the best TT approximation error; ``achieved`` is the error of
    TT-SVD with the same per-bond caps.
    """

    lower_bound: float
    achieved: float
    tails: Tuple[float, ...]


def unfolding_tails(x: DenseTensor, ranks: Sequence[int]) -> Tuple[float, ...]:
    array = x.array()
    tails = []
    for k in range(1, x.d):
        unfolding = array.reshape(math.prod(x.shape[:k]), -1)
        s = np.linalg.svd(unfolding, compute_uv=False)
        tails.append(float(np.linalg.norm(s[ranks[k - 1] :])))
    return tuple(tails)


def best_rank_error(x: DenseTensor, ranks: Sequence[int], guard: int = DENSE_GUARD) -> BestRankError:
    """Compare the unfolding lower bound with what TT-SVD reaches at ranks r_1..r_{d-1}."""
    _check_guard(math.prod(x.shape), guard)
    if len(ranks) != x.d - 1:
        raise ValueError(f"expected {x.d - 1} ranks, got {len(ranks)}")
    tails = unfolding_tails(x, ranks)
    approx = full(tt_svd_capped(x, 0.0, ranks))
    achieved = float(np.linalg.norm(approx.values - x.values))
    return BestRankError(max(tails, default=0.0), achieved, tails)
