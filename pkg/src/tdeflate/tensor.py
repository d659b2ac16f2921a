"""Dense order-d tensors: rank-one outer products, contractions, unfoldings.

Tensors are plain C-ordered float64 ``ndarray`` objects (last index
fastest).  Modes are numbered from 0, as numpy axes are.  A "vector tuple"
is a sequence holding one vector per mode.
"""

from __future__ import annotations

import struct
from functools import reduce
from pathlib import Path
from typing import Sequence

import numpy as np

from ._validation import check_mode, check_tensor, check_vectors

__all__ = [
    "outer_rank_one",
    "contract_all_but_mode",
    "full_contract",
    "mode_unfold",
    "axpy_rank_one",
    "frobenius_norm",
    "write_tensor",
    "read_tensor",
    "TensorFileError",
    "MAGIC",
]

MAGIC = b"SPKT"


def outer_rank_one(scale: float, vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Return ``scale * v_0 ⊗ v_1 ⊗ ... ⊗ v_{d-1}`` as a dense array."""
    vecs = check_vectors(vectors)
    if not vecs:
        raise ValueError("need at least one vector")
    out = reduce(np.multiply.outer, vecs)
    return float(scale) * np.ascontiguousarray(out)


def contract_all_but_mode(t, vectors: Sequence, mode: int) -> np.ndarray:
    """Contract ``t`` with every vector except the one at ``mode``.

    Returns the vector ``T(u_0, ..., u_{mode-1}, ., u_{mode+1}, ..., u_{d-1})``
    of length ``t.shape[mode]``.  The entry of ``vectors`` at ``mode`` is
    ignored and may be ``None``.
    """
    t = np.asarray(t, dtype=np.float64)
    mode = check_mode(mode, t.ndim)
    vecs = check_vectors(vectors, t.shape, skip=mode)
    res = t
    # contract trailing axes first so the indices of leading axes stay put
    for j in range(t.ndim - 1, -1, -1):
        if j == mode:
            continue
        res = np.tensordot(res, vecs[j], axes=([j], [0]))
    return np.asarray(res)


def full_contract(t, vectors: Sequence) -> float:
    """Scalar contraction ``T(u_0, ..., u_{d-1})``."""
    t = np.asarray(t, dtype=np.float64)
    vecs = check_vectors(vectors, t.shape)
    res = t
    for j in range(t.ndim - 1, -1, -1):
        res = np.tensordot(res, vecs[j], axes=([j], [0]))
    return float(res)


def mode_unfold(t, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization.

    Rows are indexed by mode ``mode``; columns run over the remaining
    indices in ascending mode order with the last index fastest.
    """
    t = np.asarray(t, dtype=np.float64)
    mode = check_mode(mode, t.ndim)
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def axpy_rank_one(t, scale: float, vectors: Sequence, *, out: np.ndarray | None = None) -> np.ndarray:
    """Return ``t + scale * v_0 ⊗ ... ⊗ v_{d-1}``.

    Pass ``out=t`` to update ``t`` in place.
    """
    t = np.asarray(t, dtype=np.float64)
    vecs = check_vectors(vectors, t.shape)
    update = outer_rank_one(scale, vecs)
    if out is None:
        return t + update
    np.add(t, update, out=out)
    return out


def frobenius_norm(t) -> float:
    return float(np.linalg.norm(np.asarray(t, dtype=np.float64).ravel()))


class TensorFileError(ValueError):
    """Malformed SPKT tensor file."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def write_tensor(path, t) -> None:
    """Write ``t`` in the SPKT binary format.

    Layout: ``b"SPKT"``, uint32 LE order, ``order`` uint32 LE dims, then
    the entries as float64 LE in row-major order.
    """
    t = check_tensor(t, min_order=1)
    header = MAGIC + struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(t, dtype="<f8").tobytes())


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise TensorFileError("file too short for header", len(data))
    if data[:4] != MAGIC:
        raise TensorFileError(f"bad magic {data[:4]!r}", 0)
    (order,) = struct.unpack_from("<I", data, 4)
    if order == 0:
        raise TensorFileError("order must be positive", 4)
    dims_end = 8 + 4 * order
    if len(data) < dims_end:
        raise TensorFileError("truncated dimension list", len(data))
    dims = struct.unpack_from(f"<{order}I", data, 8)
    if any(n == 0 for n in dims):
        raise TensorFileError("zero dimension", 8 + 4 * dims.index(0))
    expected = dims_end + 8 * int(np.prod(dims, dtype=np.int64))
    if len(data) != expected:
        raise TensorFileError(
            f"payload length mismatch: expected {expected} bytes, got {len(data)}",
            min(len(data), expected),
        )
    values = np.frombuffer(data, dtype="<f8", offset=dims_end).astype(np.float64)
    return check_tensor(values.reshape(dims), min_order=1)
