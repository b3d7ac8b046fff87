from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError, ShapeError
from ..formats.tensor import read_tensor
from ..models import Segment


logger = logging.getLogger(__name__)


def window_tensor_path(directory: str | Path, window_id: int) -> Path:
    return Path(directory) / f"window_{window_id:05d}.dcft"


def load_window_tensor(directory: str | None, window_id: int, shape: tuple[int, ...]) -> np.ndarray:
    if not directory:
        raise ConfigError("missing_path", "external-file estimator needs a path", {"window_id": window_id})
    path = window_tensor_path(directory, window_id)
    tensor = read_tensor(path)
    if tensor.shape != tuple(shape):
        raise ShapeError(
            "external_shape_mismatch",
            "external tensor shape does not match the window",
            {"path": str(path), "expected": list(shape), "actual": list(tensor.shape)},
        )
    if not np.all(np.isfinite(tensor)):
        raise FormatError("non_finite_tensor", "external tensor holds non-finite values", {"path": str(path)})
    logger.debug("loaded external tensor %s %s", path, tensor.shape)
    return tensor.astype(np.float64)


def load_external_embeddings(manifest_path: str | Path) -> list[tuple[Segment, np.ndarray]]:
    manifest_path = Path(manifest_path)
    try:
        entries = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError("malformed_manifest", f"cannot read segment manifest: {exc}", {"path": str(manifest_path)}) from exc
    if not isinstance(entries, list) or not entries:
        raise FormatError("malformed_manifest", "segment manifest must be a non-empty array", {"path": str(manifest_path)})

    loaded: list[tuple[Segment, np.ndarray]] = []
    dimension: int | None = None
    for index, entry in enumerate(entries):
        try:
            segment = Segment(stream=int(entry["stream"]), onset=float(entry["onset"]), offset=float(entry["offset"]))
            vector = read_tensor(manifest_path.parent / str(entry["file"])).astype(np.float64).ravel()
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError("malformed_manifest", f"entry {index}: {exc}", {"entry": index}) from exc
        if dimension is None:
            dimension = vector.size
        if vector.size != dimension:
            raise ShapeError("embedding_dim_mismatch", "embeddings differ in dimension", {"entry": index})
        norm = np.linalg.norm(vector)
        if norm == 0.0:
            raise FormatError("zero_embedding", f"entry {index} is an all-zero embedding", {"entry": index})
        loaded.append((segment, vector / norm))
    logger.info("loaded %d external embedding(s) from %s", len(loaded), manifest_path)
    return loaded
