"""The rounding operator T_{eps,R} and the rounded products built on it."""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Protocol, Tuple

import numpy as np

from ttkry.arith import matvec
from ttkry.models.truncation import TruncationSpec
from ttkry.tensor import Array, TTMatrix, TTTensor, truncation_rank, zeros

logger = logging.getLogger(__name__)


def right_orthogonalize(t: TTTensor) -> List[Array]:
    """
    Right-to-left QR sweep.

    Returns cores 2..d with orthonormal rows in the (r_{k-1}) x (n_k r_k)
    unfolding; the first core carries the whole norm.
    """
    cores = list(t.cores)
    for k in range(len(cores) - 1, 0, -1):
        r, n, r_next = cores[k].shape
        q, upper = np.linalg.qr(cores[k].reshape(r, n * r_next).T)
        cores[k] = q.T.reshape(-1, n, r_next)
        cores[k - 1] = np.tensordot(cores[k - 1], upper.T, axes=(2, 0))
    return cores


def left_orthogonalize(t: TTTensor) -> List[Array]:
    """Left-to-right QR sweep; the last core carries the norm."""
    cores = list(t.cores)
    for k in range(len(cores) - 1):
        r, n, r_next = cores[k].shape
        q, upper = np.linalg.qr(cores[k].reshape(r * n, r_next))
        cores[k] = q.reshape(r, n, -1)
        cores[k + 1] = np.tensordot(upper, cores[k + 1], axes=(1, 0))
    return cores


def orthogonal_norm(t: TTTensor) -> float:
    """Frobenius norm read off the first core after orthogonalization."""
    return float(np.linalg.norm(right_orthogonalize(t)[0]))


def round(t: TTTensor, spec: TruncationSpec = TruncationSpec()) -> TTTensor:  # noqa: A001
    """
    Recompress ``t`` to quasi-minimal ranks.

    Every unfolding is truncated at ``spec.local_threshold(d) * ||t||``, so without
    a rank cap ``||round(t) - t|| <= eps ||t||``. Ranks never exceed the input
    ranks or ``spec.rmax``.
    """
    return _round(t, spec, absolute=None)


def round_absolute(t: TTTensor, tolerance: float, spec: TruncationSpec) -> TTTensor:
    """Like :func:`round` with an absolute Frobenius error budget ``tolerance``."""
    return _round(t, spec, absolute=tolerance)


def _round(t: TTTensor, spec: TruncationSpec, absolute: Optional[float]) -> TTTensor:
    if t.d == 1:
        return t
    cores = right_orthogonalize(t)
    total = float(np.linalg.norm(cores[0]))
    if not math.isfinite(total):
        raise ValueError("cannot round a tensor with non-finite entries")
    if total == 0.0:
        return zeros(t.shape)
    if absolute is None:
        threshold = spec.local_threshold(t.d) * total
    else:
        threshold = spec.with_eps(absolute).local_threshold(t.d)
    for k in range(t.d - 1):
        r, n, r_next = cores[k].shape
        unfolding = cores[k].reshape(r * n, r_next)
        u, s, vt = np.linalg.svd(unfolding, full_matrices=False)
        rank = truncation_rank(s, threshold, spec.rank_cap, *unfolding.shape)
        cores[k] = u[:, :rank].reshape(r, n, rank)
        cores[k + 1] = np.tensordot(s[:rank, None] * vt[:rank], cores[k + 1], axes=(1, 0))
    return TTTensor(tuple(cores))


def round_matrix(a: TTMatrix, spec: TruncationSpec = TruncationSpec()) -> TTMatrix:
    """Round an operator as a tensor over merged (row, column) modes."""
    return TTMatrix.from_tensor(round(a.as_tensor(), spec), a.row_shape, a.col_shape)


def rounded_matvec(a: TTMatrix, x: TTTensor, spec: TruncationSpec) -> TTTensor:
    return round(matvec(a, x), spec)


def preconditioned_matvec(
    m: TTMatrix, a: TTMatrix, v: TTTensor, spec: TruncationSpec
) -> TTTensor:
    """T(M T(A v)): both products are rounded as soon as they are formed."""
    return rounded_matvec(m, rounded_matvec(a, v, spec), spec)


class TTOperator(Protocol):
    """Anything that applies a linear map to a TT vector and rounds the result."""

    @property
    def shape(self) -> Tuple[int, ...]: ...

    def apply(self, x: TTTensor, spec: TruncationSpec) -> TTTensor: ...


@dataclass(frozen=True, eq=False)
class MatrixOperator:
    """A square TT matrix applied by multiply-then-round."""

    matrix: TTMatrix

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.matrix.col_shape

    def apply(self, x: TTTensor, spec: TruncationSpec) -> TTTensor:
        return rounded_matvec(self.matrix, x, spec)


@dataclass(frozen=True, eq=False)
class IdentityOperator:
    shape: Tuple[int, ...]

    def apply(self, x: TTTensor, spec: TruncationSpec) -> TTTensor:
        if x.shape != tuple(self.shape):
            raise ValueError(f"operator acts on {self.shape}, got vector of shape {x.shape}")
        return round(x, spec)


@dataclass(frozen=True, eq=False)
class ComposedOperator:
    """``outer(inner(x))`` with rounding after each stage."""

    outer: TTOperator
    inner: TTOperator

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.inner.shape

    def apply(self, x: TTTensor, spec: TruncationSpec) -> TTTensor:
        return self.outer.apply(self.inner.apply(x, spec), spec)
