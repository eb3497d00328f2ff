"""Versioned binary format for TT tensors and operators."""

import struct
from pathlib import Path
from typing import List, Union

import numpy as np

from ttkry.tensor import TTMatrix, TTTensor, validate

MAGIC = b"TTKR"
FORMAT_VERSION = 1
KIND_TENSOR = 0
KIND_MATRIX = 1

# magic, version, kind, d
_HEADER = struct.Struct("<4sHBI")
_DTYPE = np.dtype("<f8")

Train = Union[TTTensor, TTMatrix]


def tt_to_bytes(t: Train) -> bytes:
    """
    Serialize a train.

    Layout: header (magic, version, kind, d), mode sizes (row sizes then column
    sizes for an operator), ranks r_0..r_d, then every core as little-endian
    float64 in row-major order.
    """
    if isinstance(t, TTMatrix):
        kind, modes = KIND_MATRIX, list(t.row_shape) + list(t.col_shape)
    else:
        kind, modes = KIND_TENSOR, list(t.shape)
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, kind, t.d),
        struct.pack(f"<{len(modes)}Q", *modes),
        struct.pack(f"<{t.d + 1}Q", *t.ranks),
    ]
    parts.extend(np.ascontiguousarray(core, dtype=_DTYPE).tobytes() for core in t.cores)
    return b"".join(parts)


def bytes_to_tt(data: bytes) -> Train:
    """Inverse of :func:`tt_to_bytes`."""
    if len(data) < _HEADER.size:
        raise ValueError("truncated TT header")
    magic, version, kind, d = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"not a TT file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported TT format version {version}")
    if kind not in (KIND_TENSOR, KIND_MATRIX):
        raise ValueError(f"unknown train kind {kind}")
    offset = _HEADER.size
    mode_count = d * (2 if kind == KIND_MATRIX else 1)
    try:
        modes = struct.unpack_from(f"<{mode_count}Q", data, offset)
        offset += 8 * mode_count
        ranks = struct.unpack_from(f"<{d + 1}Q", data, offset)
        offset += 8 * (d + 1)
    except struct.error as e:
        raise ValueError(f"truncated TT header: {e}")

    cores: List[np.ndarray] = []
    for k in range(d):
        if kind == KIND_MATRIX:
            shape = (ranks[k], modes[k], modes[d + k], ranks[k + 1])
        else:
            shape = (ranks[k], modes[k], ranks[k + 1])
        count = int(np.prod(shape))
        end = offset + count * _DTYPE.itemsize
        if end > len(data):
            raise ValueError(f"truncated core {k + 1}")
        cores.append(np.frombuffer(data, dtype=_DTYPE, count=count, offset=offset).reshape(shape))
        offset = end
    if offset != len(data):
        raise ValueError(f"{len(data) - offset} trailing bytes after the last core")

    train: Train = TTMatrix(tuple(cores)) if kind == KIND_MATRIX else TTTensor(tuple(cores))
    problem = validate(train)
    if problem is not None:
        raise ValueError(f"invalid train in file: {problem}")
    return train


def write_tt(path: Path, t: Train) -> None:
    path.write_bytes(tt_to_bytes(t))


def read_tt(path: Path) -> Train:
    return bytes_to_tt(path.read_bytes())
