"""Exact TT arithmetic. Ranks grow formally; nothing here rounds."""

import math
from typing import Sequence

import numpy as np

from ttkry.tensor import Array, TTMatrix, TTTensor, check_rank_guard


def _check_shapes(a: TTTensor, b: TTTensor, operation: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{operation}: shape mismatch {a.shape} vs {b.shape}")


def linear_combination(coefficients: Sequence[float], tensors: Sequence[TTTensor]) -> TTTensor:
    """
    Exact sum c_1 t_1 + ... + c_p t_p with block-diagonal cores.

    Interior ranks are the sums of the operands' ranks; coefficients are folded
    into the first core.
    """
    if len(coefficients) != len(tensors):
        raise ValueError(
            f"{len(coefficients)} coefficients for {len(tensors)} tensors"
        )
    if not tensors:
        raise ValueError("linear combination of no tensors")
    for t in tensors[1:]:
        _check_shapes(tensors[0], t, "linear combination")
    d = tensors[0].d
    if d == 1:
        core = sum(c * t.cores[0] for c, t in zip(coefficients, tensors))
        return TTTensor((np.asarray(core),))

    ranks = [sum(t.ranks[k] for t in tensors) for k in range(1, d)]
    check_rank_guard(ranks, "addition")

    cores = [
        np.concatenate([c * t.cores[0] for c, t in zip(coefficients, tensors)], axis=2)
    ]
    for k in range(1, d - 1):
        blocks = [t.cores[k] for t in tensors]
        core = np.zeros(
            (sum(b.shape[0] for b in blocks), blocks[0].shape[1], sum(b.shape[2] for b in blocks))
        )
        row = col = 0
        for block in blocks:
            core[row : row + block.shape[0], :, col : col + block.shape[2]] = block
            row += block.shape[0]
            col += block.shape[2]
        cores.append(core)
    cores.append(np.concatenate([t.cores[-1] for t in tensors], axis=0))
    return TTTensor(tuple(cores))


def add(a: TTTensor, b: TTTensor) -> TTTensor:
    _check_shapes(a, b, "add")
    return linear_combination([1.0, 1.0], [a, b])


def subtract(a: TTTensor, b: TTTensor) -> TTTensor:
    _check_shapes(a, b, "subtract")
    return linear_combination([1.0, -1.0], [a, b])


def scale(a: TTTensor, c: float) -> TTTensor:
    """c * a, folded into the first core."""
    return TTTensor((c * a.cores[0],) + a.cores[1:])


def dot(a: TTTensor, b: TTTensor) -> float:
    """Inner product by a left-to-right sweep of r(a) x r(b) interface matrices."""
    _check_shapes(a, b, "dot")
    interface: Array = np.ones((1, 1))
    for core_a, core_b in zip(a.cores, b.cores):
        interface = np.einsum("ab,aic,bid->cd", interface, core_a, core_b, optimize=True)
    return float(interface[0, 0])


def norm(a: TTTensor) -> float:
    return math.sqrt(max(dot(a, a), 0.0))


def hadamard(a: TTTensor, b: TTTensor) -> TTTensor:
    """Elementwise product; every slice is the Kronecker product of the operands' slices."""
    _check_shapes(a, b, "hadamard")
    check_rank_guard(
        [ra * rb for ra, rb in zip(a.ranks, b.ranks)], "hadamard product"
    )
    cores = []
    for core_a, core_b in zip(a.cores, b.cores):
        ra, n, ra_next = core_a.shape
        rb, _, rb_next = core_b.shape
        cores.append(
            np.einsum("aib,cid->acibd", core_a, core_b).reshape(ra * rb, n, ra_next * rb_next)
        )
    return TTTensor(tuple(cores))


def matvec(a: TTMatrix, x: TTTensor) -> TTTensor:
    """Operator-vector product; interior ranks are r(A) * r(x)."""
    if a.col_shape != x.shape:
        raise ValueError(
            f"matvec: operator columns {a.col_shape} do not match vector shape {x.shape}"
        )
    check_rank_guard([ra * rx for ra, rx in zip(a.ranks, x.ranks)], "matvec")
    cores = []
    for core_a, core_x in zip(a.cores, x.cores):
        ra, m, _, ra_next = core_a.shape
        rx, _, rx_next = core_x.shape
        cores.append(
            np.einsum("aijb,cjd->acibd", core_a, core_x).reshape(ra * rx, m, ra_next * rx_next)
        )
    return TTTensor(tuple(cores))


def diag(a: TTTensor) -> TTMatrix:
    """The diagonal operator diag(vec(a))."""
    cores = []
    for core in a.cores:
        r, n, r_next = core.shape
        block = np.zeros((r, n, n, r_next))
        idx = np.arange(n)
        block[:, idx, idx, :] = core
        cores.append(block)
    return TTMatrix(tuple(cores))
