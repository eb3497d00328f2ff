"""Tensor-train (TT) tensors and operators, exact dense <-> TT conversion and quantization.

Dense tensors are linearized first-index-fastest everywhere in this package. A
TT tensor is a chain of order-3 cores ``(r_{k-1}, n_k, r_k)`` with ``r_0 = r_d = 1``;
a TT operator uses order-4 cores ``(r_{k-1}, m_k, n_k, r_k)`` with row mode ``m_k``
and column mode ``n_k``.
"""

import logging
import math
import os
import sys
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

logger = logging.getLogger(__name__)

Array = npt.NDArray[np.float64]

DEFAULT_MAX_RANK = 8192
FULL_GUARD = 10**7


class RankGuardError(ValueError):
    """Raised when an operation would create a TT rank above the hard cap."""


class DenseGuardError(ValueError):
    """Raised when a dense representation would exceed its size guard."""


def max_rank() -> int:
    """Hard rank cap, overridable through the TTKRY_MAX_RANK environment variable."""
    value = os.environ.get("TTKRY_MAX_RANK")
    return int(value) if value else DEFAULT_MAX_RANK


def check_rank_guard(ranks: Sequence[int], operation: str) -> None:
    cap = max_rank()
    worst = max(ranks)
    if worst > cap:
        raise RankGuardError(
            f"{operation} would create TT rank {worst} above the cap {cap}; "
            "raise TTKRY_MAX_RANK or round more aggressively"
        )


def _frozen(array: npt.ArrayLike, ndim: int) -> Array:
    core = np.array(array, dtype=np.float64)
    if core.ndim != ndim:
        raise ValueError(f"expected an order-{ndim} core, got shape {core.shape}")
    core.flags.writeable = False
    return core


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """A full tensor stored as a flat array in first-index-fastest order."""

    shape: Tuple[int, ...]
    values: Array

    def __post_init__(self) -> None:
        shape = tuple(int(n) for n in self.shape)
        if not shape or any(n < 1 for n in shape):
            raise ValueError(f"invalid shape {shape}")
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size != math.prod(shape):
            raise ValueError(
                f"{values.size} values do not fill a tensor of shape {shape}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, array: npt.ArrayLike) -> "DenseTensor":
        data = np.asarray(array, dtype=np.float64)
        return cls(data.shape, data.reshape(-1, order="F"))

    @property
    def d(self) -> int:
        return len(self.shape)

    def array(self) -> Array:
        """The values as an ndarray indexed ``[i_1, ..., i_d]``."""
        return self.values.reshape(self.shape, order="F")

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __getitem__(self, idx: Sequence[int]) -> float:
        return float(self.array()[tuple(idx)])


@dataclass(frozen=True, eq=False)
class TTTensor:
    """A d-dimensional tensor as a chain of order-3 cores."""

    cores: Tuple[Array, ...]

    def __post_init__(self) -> None:
        cores = tuple(_frozen(core, 3) for core in self.cores)
        if not cores:
            raise ValueError("a tensor train needs at least one core")
        object.__setattr__(self, "cores", cores)

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(core.shape[1] for core in self.cores)

    @property
    def ranks(self) -> List[int]:
        return [core.shape[0] for core in self.cores] + [self.cores[-1].shape[2]]

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    @property
    def storage(self) -> int:
        """Number of stored scalars."""
        return sum(core.size for core in self.cores)

    def __repr__(self) -> str:
        return f"TTTensor(shape={self.shape}, ranks={self.ranks})"


@dataclass(frozen=True, eq=False)
class TTMatrix:
    """A linear operator as a chain of order-4 cores (rank, row, column, rank)."""

    cores: Tuple[Array, ...]

    def __post_init__(self) -> None:
        cores = tuple(_frozen(core, 4) for core in self.cores)
        if not cores:
            raise ValueError("a tensor train needs at least one core")
        object.__setattr__(self, "cores", cores)

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def row_shape(self) -> Tuple[int, ...]:
        return tuple(core.shape[1] for core in self.cores)

    @property
    def col_shape(self) -> Tuple[int, ...]:
        return tuple(core.shape[2] for core in self.cores)

    @property
    def ranks(self) -> List[int]:
        return [core.shape[0] for core in self.cores] + [self.cores[-1].shape[3]]

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    def as_tensor(self) -> TTTensor:
        """View as a TT tensor over merged modes ``m_k * n_k`` (row index slowest)."""
        return TTTensor(
            tuple(
                core.reshape(core.shape[0], core.shape[1] * core.shape[2], core.shape[3])
                for core in self.cores
            )
        )

    @classmethod
    def from_tensor(
        cls, t: TTTensor, row_shape: Sequence[int], col_shape: Sequence[int]
    ) -> "TTMatrix":
        if len(row_shape) != t.d or len(col_shape) != t.d:
            raise ValueError("row/column shapes must have one entry per core")
        cores = []
        for core, m, n in zip(t.cores, row_shape, col_shape):
            if core.shape[1] != m * n:
                raise ValueError(f"mode {core.shape[1]} cannot hold a {m}x{n} block")
            cores.append(core.reshape(core.shape[0], m, n, core.shape[2]))
        return cls(tuple(cores))

    def __repr__(self) -> str:
        return (
            f"TTMatrix(rows={self.row_shape}, cols={self.col_shape}, ranks={self.ranks})"
        )


TrainLike = Union[TTTensor, TTMatrix]


class KroneckerTerm(NamedTuple):
    """coefficient * (factors[0] (x) ... (x) factors[d-1]), factor k acting on mode k."""

    coefficient: float
    factors: Tuple[Array, ...]


def validate(t: TrainLike) -> Optional[str]:
    """
    Check the TT invariants of a tensor or operator train.

    Returns:
        None if every invariant holds, otherwise a description of the first
        violated invariant naming the (1-based) core index.
    """
    ndim = 4 if isinstance(t, TTMatrix) else 3
    cores = t.cores
    for k, core in enumerate(cores, start=1):
        if core.ndim != ndim:
            return f"core order at k={k}: expected {ndim}, got {core.ndim}"
        if any(extent < 1 for extent in core.shape):
            return f"empty extent at k={k}: {core.shape}"
    if cores[0].shape[0] != 1 or cores[-1].shape[-1] != 1:
        return f"boundary rank: r_0={cores[0].shape[0]}, r_d={cores[-1].shape[-1]}"
    for k in range(len(cores) - 1):
        right, left = cores[k].shape[-1], cores[k + 1].shape[0]
        if right != left:
            return f"rank chain at k={k + 1}: right rank {right} != next left rank {left}"
    return None


def element(t: TTTensor, idx: Sequence[int]) -> float:
    """Evaluate G_1(i_1) ... G_d(i_d) as a chain of vector-matrix products."""
    if len(idx) != t.d:
        raise ValueError(f"index {tuple(idx)} has {len(idx)} entries, expected {t.d}")
    row = np.ones(1)
    for k, (core, i) in enumerate(zip(t.cores, idx)):
        if not 0 <= i < core.shape[1]:
            raise ValueError(f"index {i} out of range for mode {k} of size {core.shape[1]}")
        row = row @ core[:, i, :]
    return float(row[0])


def full(t: TTTensor, guard: int = FULL_GUARD) -> DenseTensor:
    """Contract all cores into a dense tensor."""
    size = math.prod(t.shape)
    if size > guard:
        raise DenseGuardError(f"full tensor of {size} entries exceeds the guard {guard}")
    result = t.cores[0].reshape(-1, t.cores[0].shape[2])
    for core in t.cores[1:]:
        r, n, r_next = core.shape
        result = (result @ core.reshape(r, n * r_next)).reshape(-1, r_next)
    return DenseTensor.from_array(result.reshape(t.shape))


def truncation_rank(
    s: Array, threshold: float, cap: int, rows: int, cols: int
) -> int:
    """
    Smallest rank whose discarded singular tail has norm within ``threshold``.

    Singular values below ``s_max * max(rows, cols) * machine-eps`` count as zero,
    so exact low-rank inputs keep their rank at zero tolerance. The result is
    clipped to ``[1, min(cap, len(s))]``.
    """
    if s.size == 0:
        return 1
    floor = float(s[0]) * max(rows, cols) * np.finfo(np.float64).eps
    limit = max(threshold, floor)
    tails = np.sqrt(np.append(np.cumsum((s**2)[::-1])[::-1], 0.0))
    rank = int(np.argmax(tails <= limit))
    return max(1, min(rank, cap, s.size))


def _svd_chain(
    block: Array, modes: Sequence[int], r_end: int, threshold: float, caps: Sequence[int]
) -> List[Array]:
    """Split ``block`` of shape (r_0, *modes, r_end) into cores by sequential SVDs."""
    cores: List[Array] = []
    rank = block.shape[0]
    rest = block
    for k in range(len(modes) - 1):
        rest = rest.reshape(rank * modes[k], -1)
        u, s, vt = np.linalg.svd(rest, full_matrices=False)
        new = truncation_rank(s, threshold, caps[k], *rest.shape)
        cores.append(u[:, :new].reshape(rank, modes[k], new))
        rest = s[:new, None] * vt[:new]
        rank = new
    cores.append(rest.reshape(rank, modes[-1], r_end))
    return cores


def tt_svd(x: DenseTensor, eps: float = 0.0, rmax: Optional[int] = None) -> TTTensor:
    """
    Compress a dense tensor by a sequence of truncated SVDs.

    Each of the d-1 unfoldings is truncated at ``eps / sqrt(d-1) * ||x||_F`` so the
    total relative Frobenius error is at most ``eps``.
    """
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    caps = [rmax if rmax is not None else sys.maxsize] * max(x.d - 1, 1)
    return tt_svd_capped(x, eps, caps)


def tt_svd_capped(x: DenseTensor, eps: float, caps: Sequence[int]) -> TTTensor:
    """TT-SVD with an individual rank cap per unfolding."""
    array = x.array()
    if not np.all(np.isfinite(array)):
        raise ValueError("tensor has non-finite entries")
    d = x.d
    threshold = eps / math.sqrt(d - 1) * x.norm() if d > 1 else 0.0
    block = array.reshape((1,) + x.shape + (1,))
    return TTTensor(tuple(_svd_chain(block, x.shape, 1, threshold, caps)))


def zeros(shape: Sequence[int]) -> TTTensor:
    """The canonical all-rank-1 zero tensor."""
    return TTTensor(tuple(np.zeros((1, n, 1)) for n in shape))


def ones(shape: Sequence[int]) -> TTTensor:
    return TTTensor(tuple(np.ones((1, n, 1)) for n in shape))


def rank1(vectors: Sequence[npt.ArrayLike]) -> TTTensor:
    """Outer product v_1 o ... o v_d as a rank-1 train."""
    return TTTensor(tuple(np.asarray(v, dtype=np.float64).reshape(1, -1, 1) for v in vectors))


def _interior_ranks(d: int, ranks: Union[int, Sequence[int]]) -> List[int]:
    if isinstance(ranks, int):
        return [1] + [ranks] * (d - 1) + [1]
    interior = list(ranks)
    if len(interior) != d - 1:
        raise ValueError(f"expected {d - 1} interior ranks, got {len(interior)}")
    return [1] + interior + [1]


def random_tt(
    shape: Sequence[int], ranks: Union[int, Sequence[int]], rng: np.random.Generator
) -> TTTensor:
    """Random train with standard normal cores and the given interior ranks."""
    r = _interior_ranks(len(shape), ranks)
    return TTTensor(
        tuple(rng.standard_normal((r[k], n, r[k + 1])) for k, n in enumerate(shape))
    )


def random_tt_matrix(
    shape: Sequence[int], ranks: Union[int, Sequence[int]], rng: np.random.Generator
) -> TTMatrix:
    """Random square operator train with standard normal cores."""
    r = _interior_ranks(len(shape), ranks)
    return TTMatrix(
        tuple(rng.standard_normal((r[k], n, n, r[k + 1])) for k, n in enumerate(shape))
    )


def identity(shape: Sequence[int]) -> TTMatrix:
    return TTMatrix(tuple(np.eye(n).reshape(1, n, n, 1) for n in shape))


def tt_matrix_from_kron(terms: Sequence[KroneckerTerm]) -> TTMatrix:
    """
    Assemble sum_t c_t (F_1 (x) ... (x) F_d) as an operator train of formal rank len(terms).
    """
    if not terms:
        raise ValueError("at least one Kronecker term is required")
    d = len(terms[0].factors)
    shapes = [np.shape(f) for f in terms[0].factors]
    for t, term in enumerate(terms):
        if len(term.factors) != d:
            raise ValueError(f"term {t} has {len(term.factors)} factors, expected {d}")
        for k, factor in enumerate(term.factors):
            if np.ndim(factor) != 2 or np.shape(factor) != shapes[k]:
                raise ValueError(
                    f"term {t} factor {k} has shape {np.shape(factor)}, expected {shapes[k]}"
                )
    count = len(terms)
    if d == 1:
        total = sum(term.coefficient * np.asarray(term.factors[0], dtype=np.float64) for term in terms)
        return TTMatrix((np.asarray(total).reshape(1, *shapes[0], 1),))
    cores = []
    for k, (m, n) in enumerate(shapes):
        left = 1 if k == 0 else count
        right = 1 if k == d - 1 else count
        core = np.zeros((left, m, n, right))
        for t, term in enumerate(terms):
            factor = np.asarray(term.factors[k], dtype=np.float64)
            if k == 0:
                core[0, :, :, t] = term.coefficient * factor
            elif k == d - 1:
                core[t, :, :, 0] = factor
            else:
                core[t, :, :, t] = factor
        cores.append(core)
    return TTMatrix(tuple(cores))


def _digit_count(n: int, base: int) -> int:
    if n == 1:
        return 1
    count, rest = 0, n
    while rest % base == 0:
        rest //= base
        count += 1
    if rest != 1:
        raise ValueError(f"mode size {n} is not a power of {base}")
    return count


def digit_counts(
    shape: Sequence[int], base: int, modes: Optional[Sequence[int]] = None
) -> List[int]:
    """Grouping produced by :func:`quantize`; modes left out keep one core."""
    if base < 2:
        raise ValueError(f"base must be at least 2, got {base}")
    selected = set(range(len(shape)) if modes is None else modes)
    return [_digit_count(n, base) if k in selected else 1 for k, n in enumerate(shape)]


def _split_rows(core: Array, base: int, digits: int) -> Array:
    # least-significant digit first: a first-index-fastest reshape of the mode
    return np.reshape(
        core, (core.shape[0],) + (base,) * digits + (core.shape[-1],), order="F"
    )


def quantize(
    t: TTTensor, base: int = 2, modes: Optional[Sequence[int]] = None
) -> TTTensor:
    """
    Split every selected mode of size base^p into p modes of size ``base``.

    Digits of one mode stay contiguous, least significant first, so the dense
    values in first-index-fastest order are unchanged.
    """
    grouping = digit_counts(t.shape, base, modes)
    cores: List[Array] = []
    for core, count in zip(t.cores, grouping):
        if count == 1:
            cores.append(core)
            continue
        block = _split_rows(core, base, count)
        cores.extend(
            _svd_chain(block, (base,) * count, core.shape[2], 0.0, [sys.maxsize] * count)
        )
    return TTTensor(tuple(cores))


def _merge_group(group: Sequence[Array]) -> Array:
    block = group[0]
    for core in group[1:]:
        block = np.tensordot(block, core, axes=(block.ndim - 1, 0))
    return block


def _check_grouping(d: int, grouping: Sequence[int]) -> None:
    if any(count < 1 for count in grouping) or sum(grouping) != d:
        raise ValueError(f"grouping {list(grouping)} does not partition {d} cores")


def dequantize(t: TTTensor, grouping: Sequence[int], base: int = 2) -> TTTensor:
    """Merge consecutive digit cores back into modes of size base^count."""
    _check_grouping(t.d, grouping)
    cores: List[Array] = []
    position = 0
    for count in grouping:
        group = t.cores[position : position + count]
        position += count
        if count == 1:
            cores.append(group[0])
            continue
        if any(core.shape[1] != base for core in group):
            raise ValueError(
                f"cores {position - count}..{position - 1} are not all of size {base}"
            )
        block = _merge_group(group)
        cores.append(
            np.reshape(block, (block.shape[0], base**count, block.shape[-1]), order="F")
        )
    return TTTensor(tuple(cores))


def quantize_matrix(
    a: TTMatrix, base: int = 2, modes: Optional[Sequence[int]] = None
) -> TTMatrix:
    """
    Quantize the row and column modes of an operator consistently with :func:`quantize`.

    Row digit q and column digit q share one quantized core.
    """
    rows = digit_counts(a.row_shape, base, modes)
    cols = digit_counts(a.col_shape, base, modes)
    if rows != cols:
        raise ValueError(f"row digits {rows} and column digits {cols} differ")
    cores: List[Array] = []
    for core, count in zip(a.cores, rows):
        if count == 1:
            cores.append(core)
            continue
        r, _, _, r_next = core.shape
        block = np.reshape(core, (r,) + (base,) * (2 * count) + (r_next,), order="F")
        order = [0]
        for q in range(count):
            order += [1 + q, 1 + count + q]
        order.append(2 * count + 1)
        block = block.transpose(order).reshape((r,) + (base * base,) * count + (r_next,))
        pieces = _svd_chain(block, (base * base,) * count, r_next, 0.0, [sys.maxsize] * count)
        cores.extend(p.reshape(p.shape[0], base, base, p.shape[2]) for p in pieces)
    return TTMatrix(tuple(cores))


def dequantize_matrix(a: TTMatrix, grouping: Sequence[int], base: int = 2) -> TTMatrix:
    """Inverse of :func:`quantize_matrix` on its image."""
    _check_grouping(a.d, grouping)
    cores: List[Array] = []
    position = 0
    for count in grouping:
        group = a.cores[position : position + count]
        position += count
        if count == 1:
            cores.append(group[0])
            continue
        block = _merge_group(group)
        r, r_next = block.shape[0], block.shape[-1]
        # block axes: r, i0, j0, i1, j1, ..., r'
        order = [0] + [1 + 2 * q for q in range(count)] + [2 + 2 * q for q in range(count)]
        order.append(block.ndim - 1)
        block = block.transpose(order)
        size = base**count
        cores.append(np.reshape(block, (r, size, size, r_next), order="F"))
    return TTMatrix(tuple(cores))
