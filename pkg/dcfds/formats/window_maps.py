from __future__ import annotations

import json
from typing import Any

from ..errors import FormatError
from ..models import IndexMap, WindowPrior


def window_maps_to_json(windows: list[tuple[WindowPrior, IndexMap]]) -> str:
    """Sidecar rows are 1-based: ``{"window_id", "start_frame", "map": {n_w: n_g}}``."""
    rows = [
        {
            "window_id": prior.window_id + 1,
            "start_frame": prior.start_frame + 1,
            "map": {str(row + 1): speaker + 1 for row, speaker in index_map.items()},
        }
        for prior, index_map in windows
    ]
    return json.dumps(rows, indent=2)


def window_maps_from_json(text: str) -> list[tuple[int, int, IndexMap]]:
    try:
        rows: Any = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError("malformed_window_map", f"invalid JSON: {exc}", {"line": exc.lineno}) from exc
    if not isinstance(rows, list):
        raise FormatError("malformed_window_map", "window map JSON must be an array")

    parsed: list[tuple[int, int, IndexMap]] = []
    for index, row in enumerate(rows):
        try:
            window_id = int(row["window_id"]) - 1
            start_frame = int(row["start_frame"]) - 1
            pairs = {int(n_w) - 1: int(n_g) - 1 for n_w, n_g in row["map"].items()}
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise FormatError("malformed_window_map", f"entry {index}: {exc}", {"entry": index}) from exc
        if window_id < 0 or start_frame < 0 or any(key < 0 or value < 0 for key, value in pairs.items()):
            raise FormatError("malformed_window_map", f"entry {index} has an index below 1", {"entry": index})
        parsed.append((window_id, start_frame, IndexMap(pairs)))
    return parsed
