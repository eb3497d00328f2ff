"""
Benchmark operators: finite-difference stencils, the 3D convection-diffusion
problem, exponential-sum inverse Laplacians and the parametric KL diffusion
problem with its P2 preconditioner.

All grids are uniform with n interior nodes on [-1, 1]; the stencils use the
mesh symbol h = 1/(n+1).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ttkry.arith import add, diag, hadamard, linear_combination, subtract
from ttkry.models.grid import Grid1D, KLCoefficient
from ttkry.models.truncation import TruncationSpec
from ttkry.rounding import (
    ComposedOperator,
    MatrixOperator,
    TTOperator,
    orthogonal_norm,
    round,
    round_absolute,
    round_matrix,
)
from ttkry.tensor import (
    Array,
    KroneckerTerm,
    TTMatrix,
    TTTensor,
    ones,
    quantize_matrix,
    rank1,
    tt_matrix_from_kron,
)

logger = logging.getLogger(__name__)

ASSEMBLY_TOL = 1e-12


class NewtonDivergenceError(ValueError):
    """Raised when the Newton reciprocal residual grows three times in a row."""


def laplace_1d(g: Grid1D) -> Array:
    """The Dirichlet stencil tridiag(-1, 2, -1) / h^2."""
    n = g.n
    return (2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / g.h**2


def grad_1d(g: Grid1D) -> Array:
    """Central differences tridiag(-0.5, 0, 0.5) / h."""
    n = g.n
    return 0.5 * (np.eye(n, k=1) - np.eye(n, k=-1)) / g.h


def conv_diff_terms(n: int, alpha: float) -> List[KroneckerTerm]:
    """
    Kronecker terms of -alpha Delta_h + (diag(1-x^2) (x) diag(2y) (x) I) grad_x
    + (diag(-2x) (x) diag(1-y^2) (x) I) grad_y on modes (x, y, z).
    """
    g = Grid1D(n=n)
    x = g.nodes()
    lap, grad, eye = laplace_1d(g), grad_1d(g), np.eye(n)
    return [
        KroneckerTerm(alpha, (lap, eye, eye)),
        KroneckerTerm(alpha, (eye, lap, eye)),
        KroneckerTerm(alpha, (eye, eye, lap)),
        KroneckerTerm(1.0, (np.diag(1.0 - x**2) @ grad, np.diag(2.0 * x), eye)),
        KroneckerTerm(1.0, (np.diag(-2.0 * x), np.diag(1.0 - x**2) @ grad, eye)),
    ]


def conv_diff_3d(n: int, alpha: float) -> TTMatrix:
    """The convection-diffusion operator, rounded at 1e-12 (ranks at most 4)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return round_matrix(tt_matrix_from_kron(conv_diff_terms(n, alpha)), TruncationSpec(eps=ASSEMBLY_TOL))


def conv_diff_rhs(n: int, alpha: float) -> TTTensor:
    """
    Right-hand side from eliminating the ghost layer u = 1 at y = 1.

    Only the layer j = n next to that face is nonzero:
    b(i, n, k) = alpha/h^2 + (0.5/h) * 2 x_i (1 - y_n^2).
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    g = Grid1D(n=n)
    x = g.nodes()
    y_n = x[-1]
    face = alpha / g.h**2 + (0.5 / g.h) * 2.0 * x * (1.0 - y_n**2)
    layer = np.zeros(n)
    layer[-1] = 1.0
    return rank1([face, layer, np.ones(n)])


def expsum_terms(m: int) -> Tuple[Array, Array]:
    """Nodes t_k = e^{k eta} and weights c_k = eta t_k for k = -M..M, eta = pi / sqrt(M)."""
    if m < 1:
        raise ValueError(f"quadrature half-width must be at least 1, got {m}")
    eta = math.pi / math.sqrt(m)
    t = np.exp(eta * np.arange(-m, m + 1))
    return t, eta * t


def laplace_eigen(g: Grid1D) -> Tuple[Array, Array]:
    """Sine eigenvectors (columns) and eigenvalues (2/h^2)(1 - cos(pi j h)) of laplace_1d."""
    n = g.n
    j = np.arange(1, n + 1)
    vectors = math.sqrt(2.0 / (n + 1)) * np.sin(math.pi * np.outer(j, j) / (n + 1))
    values = (2.0 / g.h**2) * (1.0 - np.cos(math.pi * j * g.h))
    return vectors, values


def heat_kernel_1d(g: Grid1D, t: float) -> Array:
    """exp(-t (-Delta_h^1)) from the analytic eigendecomposition."""
    vectors, values = laplace_eigen(g)
    return (vectors * np.exp(-t * values)) @ vectors.T


def expsum_kron_terms(n: int, d: int, m: int) -> List[KroneckerTerm]:
    g = Grid1D(n=n)
    nodes, weights = expsum_terms(m)
    terms = []
    for t, c in zip(nodes, weights):
        factor = heat_kernel_1d(g, float(t))
        terms.append(KroneckerTerm(float(c), (factor,) * d))
    return terms


def inv_laplace_expsum(n: int, d: int, m: int) -> TTMatrix:
    """(-Delta_h)^{-1} on d modes as a sum of 2M+1 Kronecker terms, rounded at 1e-12."""
    if d < 1:
        raise ValueError(f"d must be at least 1, got {d}")
    terms = expsum_kron_terms(n, d, m)
    if d == 1:
        return tt_matrix_from_kron(terms)
    return round_matrix(tt_matrix_from_kron(terms), TruncationSpec(eps=ASSEMBLY_TOL))


def _apply_kron_term(term: KroneckerTerm, x: TTTensor) -> TTTensor:
    cores = [np.einsum("ij,ajb->aib", f, core) for f, core in zip(term.factors, x.cores)]
    cores[0] = term.coefficient * cores[0]
    return TTTensor(tuple(cores))


@dataclass(frozen=True, eq=False)
class KroneckerSumOperator:
    """
    sum_t c_t (F_1 (x) ... (x) F_d) applied term by term.

    Every term keeps the rank of the vector. Images are summed in chunks whose
    formal rank stays below ``formal_rank_limit``; each partial sum is rounded at
    ``eps / chunks``.
    """

    terms: Tuple[KroneckerTerm, ...]
    formal_rank_limit: int = 256

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(np.shape(f)[1] for f in self.terms[0].factors)

    def apply(self, x: TTTensor, spec: TruncationSpec) -> TTTensor:
        if x.shape != self.shape:
            raise ValueError(f"operator acts on {self.shape}, got vector of shape {x.shape}")
        per_chunk = max(1, self.formal_rank_limit // max(x.max_rank, 1))
        chunks = math.ceil(len(self.terms) / per_chunk)
        local = spec.with_eps(spec.eps / chunks)
        total: Optional[TTTensor] = None
        for start in range(0, len(self.terms), per_chunk):
            images = [_apply_kron_term(term, x) for term in self.terms[start : start + per_chunk]]
            if total is not None:
                images.insert(0, total)
            total = round(linear_combination([1.0] * len(images), images), local)
        assert total is not None
        return total


def inv_laplace_operator(n: int, d: int, m: int) -> KroneckerSumOperator:
    """The exponential-sum inverse Laplacian in term-wise form."""
    return KroneckerSumOperator(tuple(expsum_kron_terms(n, d, m)))


def kl_coefficient(nx: int, ny: int, d: int) -> TTTensor:
    """
    a(x, y) = 1 + sum_j sqrt(lambda_j) sin(pi j x) y_j on the midpoint x grid.

    Shape (nx+1, ny, ..., ny): the spatial mode holds the nx+1 cell midpoints,
    every parameter mode the ny collocation points.
    """
    kl = KLCoefficient(d=d, nx=nx, ny=ny)
    xs = kl.grid.midpoints()
    ys = kl.parameter_grid()
    if d == 0:
        return TTTensor((kl.mode(0, xs).reshape(1, -1, 1),))
    flat = np.ones(ny)
    terms = [rank1([kl.mode(0, xs)] + [flat] * d)]
    for j, amplitude in enumerate(kl.amplitudes, start=1):
        factors = [amplitude * kl.mode(j, xs)] + [flat] * d
        factors[j] = ys
        terms.append(rank1(factors))
    return round(linear_combination([1.0] * len(terms), terms), TruncationSpec(eps=ASSEMBLY_TOL))


def difference_matrix(n: int) -> Array:
    """(n+1) x n forward differences onto the midpoints, Dirichlet at both ends."""
    return np.eye(n + 1, n) - np.eye(n + 1, n, k=-1)


def stiffness_from_coefficient(c: TTTensor) -> TTMatrix:
    """
    Conservative stiffness Gamma(c): D^T diag(c) D / h^2 in x, diagonal in the parameters.

    ``c`` has the nx+1 midpoint samples in its first mode.
    """
    nx = c.shape[0] - 1
    g = Grid1D(n=nx)
    diff = difference_matrix(nx)
    first = c.cores[0]
    x_core = np.einsum("mi,amb,mj->aijb", diff, first, diff) / g.h**2
    if c.d == 1:
        return TTMatrix((x_core,))
    rest = diag(TTTensor(c.cores[1:]))
    return TTMatrix((x_core,) + rest.cores)


def kl_stiffness(nx: int, ny: int, d: int) -> TTMatrix:
    """Gamma(a) for the KL coefficient; formal rank at most d+1."""
    return round_matrix(
        stiffness_from_coefficient(kl_coefficient(nx, ny, d)), TruncationSpec(eps=ASSEMBLY_TOL)
    )


@dataclass
class ReciprocalResult:
    tensor: TTTensor
    converged: bool
    iterations: int
    residual: float
    history: List[float] = field(default_factory=list)


def newton_reciprocal(a: TTTensor, spec: TruncationSpec, maxit: int = 30) -> ReciprocalResult:
    """
    Elementwise 1/a by the Newton iteration x <- x (2 - a x) from x = 1.

    The update is formed as ``x + x e`` with ``e = 1 - a x`` rounded to an
    absolute error of ``eps / 10 * ||1||`` first. The residual moves by at most
    that much, and ``e`` loses rank as it shrinks, so the product stays small.
    Iterates are rounded at eps/10 so that the stopping test
    ``||a x - 1|| / ||1|| <= eps`` is reachable. Three consecutive increases of
    that residual raise :class:`NewtonDivergenceError`.
    """
    if maxit < 1:
        raise ValueError(f"maxit must be at least 1, got {maxit}")
    inner = spec.with_eps(spec.eps / 10)
    unit = ones(a.shape)
    unit_norm = math.sqrt(math.prod(a.shape))

    def residual(x: TTTensor) -> float:
        return orthogonal_norm(subtract(hadamard(a, x), unit)) / unit_norm

    x = unit
    history = [residual(x)]
    increases = 0
    for iteration in range(1, maxit + 1):
        ax = round(hadamard(a, x), inner)
        e = round_absolute(subtract(unit, ax), inner.eps * unit_norm, inner)
        x = round(add(x, hadamard(x, e)), inner)
        value = residual(x)
        if not math.isfinite(value):
            raise NewtonDivergenceError(f"Newton reciprocal produced non-finite residual at iteration {iteration}")
        increases = increases + 1 if value > history[-1] else 0
        history.append(value)
        logger.debug("Newton iteration %d: residual %.3e, rank %d", iteration, value, x.max_rank)
        if increases >= 3:
            raise NewtonDivergenceError(
                f"Newton reciprocal diverges: residuals {history[-4:]} "
                "(the initial guess 1 needs |1 - a| < 1)"
            )
        if value <= spec.eps:
            return ReciprocalResult(x, True, iteration, value, history)
    logger.warning(
        "Newton reciprocal stopped at maxit=%d with residual %.3e > %.1e", maxit, history[-1], spec.eps
    )
    return ReciprocalResult(x, False, maxit, history[-1], history)


def parametric_inv_laplace(nx: int, ny: int, d: int, m: int) -> TTMatrix:
    """Delta_x^{-1} (x) I_{y_1} (x) ... (x) I_{y_d} with the 1D exponential sum in x."""
    x_factor = inv_laplace_expsum(nx, 1, m).cores[0]
    return TTMatrix((x_factor,) + tuple(np.eye(ny).reshape(1, ny, ny, 1) for _ in range(d)))


@dataclass
class P2Parts:
    """Matrices of P2 = Delta^{-1} Gamma(1/a) Delta^{-1}."""

    inv_laplace: TTMatrix
    reciprocal_stiffness: TTMatrix
    reciprocal: ReciprocalResult


def quantize_spatial(a: TTMatrix) -> TTMatrix:
    """Binary quantization of the spatial (first) mode only, rounded at 1e-12."""
    return round_matrix(quantize_matrix(a, 2, modes=[0]), TruncationSpec(eps=ASSEMBLY_TOL))


def reciprocal_stiffness(
    nx: int, ny: int, d: int, spec: TruncationSpec, maxit: int = 30
) -> Tuple[TTMatrix, ReciprocalResult]:
    """Gamma(1/a) with 1/a from :func:`newton_reciprocal` of the KL coefficient."""
    reciprocal = newton_reciprocal(kl_coefficient(nx, ny, d), spec, maxit)
    stiffness = round_matrix(
        stiffness_from_coefficient(reciprocal.tensor), TruncationSpec(eps=ASSEMBLY_TOL)
    )
    return stiffness, reciprocal


def p2_parts(
    nx: int, ny: int, d: int, spec: TruncationSpec, m: int = 36, maxit: int = 30, qtt: bool = False
) -> P2Parts:
    stiffness, reciprocal = reciprocal_stiffness(nx, ny, d, spec, maxit)
    inv_laplace = parametric_inv_laplace(nx, ny, d, m)
    if qtt:
        inv_laplace = quantize_spatial(inv_laplace)
        stiffness = quantize_spatial(stiffness)
    return P2Parts(inv_laplace, stiffness, reciprocal)


def p2_preconditioner(
    nx: int,
    ny: int,
    d: int,
    spec: TruncationSpec,
    m: int = 36,
    maxit: int = 30,
    qtt: bool = False,
    operator: Callable[[TTMatrix], TTOperator] = MatrixOperator,
) -> TTOperator:
    """
    v -> T(Delta^{-1} T(Gamma(1/a) T(Delta^{-1} v))), each stage rounded at the caller's tolerance.

    ``spec`` controls the Newton reciprocal of the coefficient.
    """
    parts = p2_parts(nx, ny, d, spec, m=m, maxit=maxit, qtt=qtt)
    return compose(
        [operator(parts.inv_laplace), operator(parts.reciprocal_stiffness), operator(parts.inv_laplace)]
    )


def compose(stages: Sequence[TTOperator]) -> TTOperator:
    """stages[0](stages[1](...stages[-1](v))) with rounding after every stage."""
    result = stages[-1]
    for stage in reversed(stages[:-1]):
        result = ComposedOperator(stage, result)
    return result
