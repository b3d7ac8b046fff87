from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError


MAGIC = b"DCFT"
_HEADER = len(MAGIC) + 1


def pack_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if np.iscomplexobj(array):
        raise FormatError("complex_tensor", "DCFT tensors hold real values only")
    if array.ndim > 255:
        raise FormatError("rank_too_large", "DCFT rank must fit in one byte", {"rank": array.ndim})
    header = MAGIC + struct.pack("<B", array.ndim) + np.asarray(array.shape, dtype="<u4").tobytes()
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def unpack_tensor(data: bytes) -> np.ndarray:
    if len(data) < _HEADER or data[: len(MAGIC)] != MAGIC:
        raise FormatError("bad_magic", "not a DCFT tensor")
    rank = data[len(MAGIC)]
    payload_start = _HEADER + 4 * rank
    if len(data) < payload_start:
        raise FormatError("truncated_tensor", "DCFT header is truncated", {"rank": rank, "bytes": len(data)})
    dims = tuple(int(dim) for dim in np.frombuffer(data, dtype="<u4", count=rank, offset=_HEADER))
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    actual = len(data) - payload_start
    if actual != expected:
        raise FormatError(
            "tensor_size_mismatch",
            "DCFT payload size disagrees with its declared dims",
            {"dims": list(dims), "expected_bytes": expected, "actual_bytes": actual},
        )
    return np.frombuffer(data, dtype="<f4", offset=payload_start).reshape(dims).astype(np.float32)


def read_tensor(path: str | Path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError("unreadable_tensor", f"cannot read tensor file: {exc}", {"path": str(path)}) from exc
    return unpack_tensor(data)


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(pack_tensor(array))
