"""
Relaxed inexact GMRES(m).

The driver is written against :class:`KrylovSpace`, so the same code runs on TT
vectors (:class:`TTSpace`) and on dense numpy vectors (:class:`DenseSpace`). The
operator is a closure ``apply(v, tolerance)`` that returns an approximation of
``A v`` with relative error at most ``tolerance``.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Generic, List, Optional, Protocol, Sequence, Tuple, TypeVar

import numpy as np
import numpy.typing as npt
import scipy.linalg  # type: ignore[import-untyped]

from ttkry.arith import dot, linear_combination, scale
from ttkry.models.solver import ConvergenceRecord, IterationRow, RestartRow, SolverConfig
from ttkry.models.truncation import TruncationSpec
from ttkry.rounding import TTOperator, orthogonal_norm, round, round_absolute
from ttkry.tensor import TTTensor

logger = logging.getLogger(__name__)

V = TypeVar("V")
DenseVector = npt.NDArray[np.float64]


class KrylovSpace(Protocol[V]):
    """Vector operations the GMRES driver needs."""

    def dot(self, a: V, b: V) -> float: ...

    def norm(self, a: V) -> float: ...

    def scale(self, a: V, c: float) -> V: ...

    def combine(
        self,
        coefficients: Sequence[float],
        vectors: Sequence[V],
        tol: Optional[float],
        expected_norm: Optional[float] = None,
    ) -> V: ...

    def round(self, a: V, tol: float) -> V: ...

    def rank(self, a: V) -> int: ...


class DenseSpace:
    """Exact arithmetic on flat numpy vectors; tolerances are ignored."""

    def dot(self, a: DenseVector, b: DenseVector) -> float:
        return float(np.dot(a, b))

    def norm(self, a: DenseVector) -> float:
        return float(np.linalg.norm(a))

    def scale(self, a: DenseVector, c: float) -> DenseVector:
        return c * a

    def combine(
        self,
        coefficients: Sequence[float],
        vectors: Sequence[DenseVector],
        tol: Optional[float],
        expected_norm: Optional[float] = None,
    ) -> DenseVector:
        result = np.zeros_like(vectors[0], dtype=np.float64)
        for c, v in zip(coefficients, vectors):
            result += c * v
        return result

    def round(self, a: DenseVector, tol: float) -> DenseVector:
        return a

    def rank(self, a: DenseVector) -> int:
        return 1


class TTSpace:
    """
    TT vectors with rounding after every linear combination.

    A combination is summed exactly and rounded once. When the formal rank of
    the sum would exceed ``formal_rank_limit`` the terms are summed in chunks,
    each rounded with an absolute tolerance derived from ``expected_norm``.
    """

    def __init__(self, rmax: Optional[int] = None, formal_rank_limit: int = 256) -> None:
        self.rmax = rmax
        self.formal_rank_limit = formal_rank_limit

    def _spec(self, tol: float) -> TruncationSpec:
        return TruncationSpec(eps=tol, rmax=self.rmax)

    def dot(self, a: TTTensor, b: TTTensor) -> float:
        return dot(a, b)

    def norm(self, a: TTTensor) -> float:
        return orthogonal_norm(a)

    def scale(self, a: TTTensor, c: float) -> TTTensor:
        return scale(a, c)

    def _chunks(self, vectors: Sequence[TTTensor]) -> List[List[int]]:
        chunks: List[List[int]] = [[]]
        load = 0
        for i, v in enumerate(vectors):
            if chunks[-1] and load + v.max_rank > self.formal_rank_limit // 2:
                chunks.append([])
                load = 0
            chunks[-1].append(i)
            load += v.max_rank
        return chunks

    def combine(
        self,
        coefficients: Sequence[float],
        vectors: Sequence[TTTensor],
        tol: Optional[float],
        expected_norm: Optional[float] = None,
    ) -> TTTensor:
        formal = sum(v.max_rank for v in vectors)
        if tol is None or formal <= self.formal_rank_limit:
            exact = linear_combination(coefficients, vectors)
            return exact if tol is None else round(exact, self._spec(tol))

        if expected_norm is None:
            expected_norm = math.sqrt(
                sum((c * orthogonal_norm(v)) ** 2 for c, v in zip(coefficients, vectors))
            )
        chunks = self._chunks(vectors)
        budget = tol * expected_norm / len(chunks)
        logger.debug(
            "summing %d vectors of formal rank %d in %d chunks", len(vectors), formal, len(chunks)
        )
        total: Optional[TTTensor] = None
        for chunk in chunks:
            terms = [vectors[i] for i in chunk]
            weights = [coefficients[i] for i in chunk]
            if total is not None:
                terms.insert(0, total)
                weights.insert(0, 1.0)
            total = round_absolute(linear_combination(weights, terms), budget, self._spec(tol))
        assert total is not None
        return total

    def round(self, a: TTTensor, tol: float) -> TTTensor:
        return round(a, self._spec(tol))

    def rank(self, a: TTTensor) -> int:
        return a.max_rank


def operator_closure(
    operator: TTOperator, rmax: Optional[int] = None
) -> Callable[[TTTensor, float], TTTensor]:
    """Wrap a TT operator as ``apply(v, tolerance)`` for :func:`relaxed_gmres`."""

    def apply(v: TTTensor, tolerance: float) -> TTTensor:
        return operator.apply(v, TruncationSpec(eps=tolerance, rmax=rmax))

    return apply


def relax_schedule(eps: float, computed_resid_rel: float, cfg: SolverConfig) -> float:
    """
    Truncation tolerance for the next product: eps / (||r_{j-1}|| / ||b||), capped.

    The residual is taken relative to ``||b||`` rather than to the initial
    residual of the cycle, so the tolerance does not reset when a restart begins
    close to the solution. The cap is ``cfg.effective_delta_cap``.
    """
    if cfg.fixed_delta is not None:
        return cfg.fixed_delta
    if not cfg.relaxation:
        return eps
    cap = cfg.effective_delta_cap
    if computed_resid_rel <= 0.0:
        return cap
    return min(cap, eps / computed_resid_rel)


@dataclass
class ArnoldiStep(Generic[V]):
    """
    Result of one inexact Arnoldi step.

    ``column`` holds h_{1,j} .. h_{j+1,j}. On breakdown ``vector`` is None.
    """

    vector: Optional[V]
    column: npt.NDArray[np.float64]
    breakdown: bool
    applied_norm: float
    rank: int


def gram_matrix(space: KrylovSpace[V], basis: Sequence[V]) -> npt.NDArray[np.float64]:
    j = len(basis)
    gram = np.empty((j, j))
    for a in range(j):
        for b in range(a, j):
            gram[a, b] = gram[b, a] = space.dot(basis[a], basis[b])
    return gram


def _orthogonalize(
    space: KrylovSpace[V],
    w: V,
    basis: Sequence[V],
    gram: npt.NDArray[np.float64],
) -> npt.NDArray[np.float64]:
    h = np.zeros(len(basis))
    if isinstance(space, DenseSpace):
        residual = np.array(w, dtype=np.float64)
        for i, v in enumerate(basis):
            h[i] = np.dot(residual, v)
            residual -= h[i] * v
        return h
    # sequential MGS coefficients of the unrounded update, through the Gram matrix
    projections = np.array([space.dot(w, v) for v in basis])
    for i in range(len(basis)):
        h[i] = projections[i] - np.dot(h[:i], gram[:i, i])
    return h


def arnoldi_step(
    apply: Callable[[V, float], V],
    space: KrylovSpace[V],
    basis: Sequence[V],
    delta: float,
    gram: Optional[npt.NDArray[np.float64]] = None,
    breakdown_tol: float = 1e-12,
    second_pass: bool = False,
) -> ArnoldiStep[V]:
    """
    Extend an orthonormal basis v_1..v_j by one vector.

    ``w = T_delta(A v_j)`` is orthogonalized against the basis by modified
    Gram-Schmidt, rounded once at ``delta`` and normalized. A norm of at most
    ``breakdown_tol * ||w||`` before orthogonalization is reported as breakdown.
    """
    if gram is None:
        gram = gram_matrix(space, basis)
    w = apply(basis[-1], delta)
    w_norm = space.norm(w)
    h = _orthogonalize(space, w, basis, gram)
    expected = math.sqrt(max(w_norm**2 - float(np.dot(h, h)), 0.0)) or None
    w = space.combine([1.0] + list(-h), [w] + list(basis), delta, expected)
    if second_pass:
        correction = _orthogonalize(space, w, basis, gram)
        w = space.combine([1.0] + list(-correction), [w] + list(basis), delta)
        h = h + correction
    h_next = space.norm(w)
    column = np.append(h, h_next)
    if h_next <= breakdown_tol * w_norm:
        column[-1] = 0.0
        return ArnoldiStep(None, column, True, w_norm, space.rank(w))
    vector = space.scale(w, 1.0 / h_next)
    return ArnoldiStep(vector, column, False, w_norm, space.rank(vector))


@dataclass
class LeastSquaresSolution:
    y: npt.NDArray[np.float64]
    residual: float
    rank_deficient: bool = False
    sigma_min: Optional[float] = None


def hessenberg_lsq(h_bar: npt.NDArray[np.float64], beta: float) -> LeastSquaresSolution:
    """
    Minimize ``||beta e_1 - H y||`` for a (j+1) x j upper Hessenberg ``H``.

    Solved through a full QR factorization; the minimum equals ``|g_{j+1}|`` with
    ``g = Q^T beta e_1``. A numerically singular triangular factor falls back to
    the minimal-norm least-squares solution and sets ``rank_deficient``.
    """
    rows, cols = h_bar.shape
    if rows != cols + 1:
        raise ValueError(f"expected a (j+1) x j matrix, got {h_bar.shape}")
    rhs = np.zeros(rows)
    rhs[0] = beta
    sigma = scipy.linalg.svdvals(h_bar)
    sigma_min = float(sigma[-1]) if sigma.size else None
    q, r = scipy.linalg.qr(h_bar, mode="full")
    g = q.T @ rhs
    pivots = np.abs(np.diag(r[:cols, :cols]))
    if cols and pivots.min() <= np.finfo(np.float64).eps * cols * max(pivots.max(), abs(beta)):
        logger.warning("Hessenberg matrix is rank deficient; using minimal-norm solution")
        y, *_ = np.linalg.lstsq(h_bar, rhs, rcond=None)
        return LeastSquaresSolution(
            y, float(np.linalg.norm(rhs - h_bar @ y)), rank_deficient=True, sigma_min=sigma_min
        )
    y = scipy.linalg.solve_triangular(r[:cols, :cols], g[:cols])
    return LeastSquaresSolution(y, float(abs(g[cols])), sigma_min=sigma_min)


def _default_space(b: object, cfg: SolverConfig) -> KrylovSpace:  # type: ignore[type-arg]
    if isinstance(b, TTTensor):
        return TTSpace(cfg.rmax, cfg.formal_rank_limit)
    return DenseSpace()


def relaxed_gmres(
    apply: Callable[[V, float], V],
    b: V,
    x0: V,
    cfg: SolverConfig,
    space: Optional[KrylovSpace[V]] = None,
    clock: Optional[Callable[[], float]] = time.perf_counter,
) -> Tuple[V, ConvergenceRecord]:
    """
    Solve ``A x = b`` by restarted GMRES with relaxed products.

    Product tolerances follow :func:`relax_schedule`. The solution update of each
    cycle is summed exactly and rounded once at ``cfg.eps``; the true residual
    ``T_eps(b - A x)`` is recomputed at the start of every cycle. All residuals in
    the record, and the one fed to the schedule, are relative to ``||b||``.

    A cycle ends when the computed residual reaches ``cfg.eps``. The run counts
    as converged only once the recomputed true residual is within
    ``cfg.true_residual_bound``; otherwise it restarts, and a cycle that does not
    lower the true residual ends the run. Returns the iterate with the smallest
    true residual and its history. Pass ``clock=None`` to leave wall times out of
    the record.
    """
    space = space if space is not None else _default_space(b, cfg)
    b_norm = space.norm(b)
    if b_norm == 0.0:
        raise ValueError("right-hand side must be nonzero")
    tol = cfg.fixed_delta if cfg.fixed_delta is not None else cfg.eps
    started = clock() if clock is not None else None

    def elapsed_ms() -> Optional[float]:
        if clock is None or started is None:
            return None
        return (clock() - started) * 1000.0

    def residual(x: V) -> V:
        return space.combine([1.0, -1.0], [b, apply(x, cfg.residual_tol)], tol)

    def check_cap(rank: int) -> None:
        if cfg.rmax is not None and rank >= cfg.rmax:
            record.rank_cap_hit = True

    record = ConvergenceRecord()
    x = x0
    r = residual(x)
    beta = space.norm(r)
    true_rel = beta / b_norm
    record.iterations.append(
        IterationRow(
            iter=0,
            resid_computed_rel=true_rel,
            resid_true_rel=true_rel,
            delta=tol,
            rank_krylov_max=space.rank(r),
            rank_solution_max=space.rank(x),
            wall_ms=elapsed_ms(),
        )
    )
    record.restarts.append(
        RestartRow(cycle=0, iter=0, resid_true_rel=true_rel, rank_solution_max=space.rank(x))
    )
    best_x, best_rel = x, true_rel
    if true_rel <= cfg.eps:
        record.converged = True
        return x, record

    iteration = 0
    for cycle in range(1, cfg.max_restarts + 2):
        basis: List[V] = [space.scale(r, 1.0 / beta)]
        gram = np.ones((1, 1))
        h_bar = np.zeros((cfg.restart_m + 1, cfg.restart_m))
        computed_rel = beta / b_norm
        solution: Optional[LeastSquaresSolution] = None
        breakdown = False
        for j in range(1, cfg.restart_m + 1):
            iteration += 1
            delta = relax_schedule(cfg.eps, computed_rel, cfg)
            step = arnoldi_step(
                apply,
                space,
                basis,
                delta,
                gram=gram,
                breakdown_tol=cfg.breakdown_tol,
                second_pass=cfg.second_pass,
            )
            h_bar[: j + 1, j - 1] = step.column
            solution = hessenberg_lsq(h_bar[: j + 1, :j], beta)
            computed_rel = solution.residual / b_norm
            check_cap(step.rank)
            record.iterations.append(
                IterationRow(
                    iter=iteration,
                    resid_computed_rel=computed_rel,
                    delta=delta,
                    rank_krylov_max=step.rank,
                    wall_ms=elapsed_ms(),
                )
            )
            logger.debug(
                "iteration %d: residual %.3e, delta %.2e, Krylov rank %d",
                iteration,
                computed_rel,
                delta,
                step.rank,
            )
            if step.breakdown:
                breakdown = record.breakdown = True
                logger.info("Arnoldi breakdown at iteration %d", iteration)
                break
            if computed_rel <= cfg.eps:
                break
            assert step.vector is not None
            basis.append(step.vector)
            row = np.array([space.dot(v, step.vector) for v in basis])
            gram = np.block([[gram, row[:-1, None]], [row[None, :]]])

        assert solution is not None
        steps = len(solution.y)
        x = _update(space, x, basis[:steps], solution.y, tol, cfg.per_addition_truncation)
        r = residual(x)
        beta = space.norm(r)
        true_rel = beta / b_norm
        last = record.iterations[-1]
        last.resid_true_rel = true_rel
        last.rank_solution_max = space.rank(x)
        check_cap(space.rank(x))
        record.restarts.append(
            RestartRow(
                cycle=cycle,
                iter=iteration,
                resid_true_rel=true_rel,
                rank_solution_max=space.rank(x),
                sigma_min=solution.sigma_min,
            )
        )
        logger.info(
            "cycle %d: %d iterations, computed residual %.3e, true residual %.3e, "
            "solution rank %d, sigma_min %s",
            cycle,
            iteration,
            computed_rel,
            true_rel,
            space.rank(x),
            solution.sigma_min,
        )
        if true_rel <= cfg.true_residual_bound:
            record.converged = True
            return x, record
        if true_rel >= best_rel:
            logger.warning(
                "cycle %d did not lower the true residual %.3e; stopping", cycle, best_rel
            )
            break
        best_x, best_rel = x, true_rel
        if computed_rel <= cfg.eps:
            logger.info(
                "computed residual %.3e reached eps but true residual %.3e is above %.3e; restarting",
                computed_rel,
                true_rel,
                cfg.true_residual_bound,
            )
        elif breakdown:
            logger.info("restarting after breakdown at true residual %.3e", true_rel)

    logger.warning(
        "GMRES did not reach true residual %.1e within %d restarts; best true residual %.3e",
        cfg.true_residual_bound,
        cfg.max_restarts,
        best_rel,
    )
    return best_x, record


def _update(
    space: KrylovSpace[V],
    x: V,
    basis: Sequence[V],
    y: npt.NDArray[np.float64],
    tol: float,
    per_addition: bool,
) -> V:
    if per_addition:
        for coefficient, v in zip(y, basis):
            x = space.combine([1.0, float(coefficient)], [x, v], tol)
        return x
    return space.combine([1.0] + [float(c) for c in y], [x] + list(basis), tol)
