from __future__ import annotations

import logging
import math

import numpy as np

from .errors import ShapeError
from .models import GlobalPrior, IndexMap, WindowingConfig, WindowMode, WindowPrior


logger = logging.getLogger(__name__)


def window_starts(n_frames: int, window_len: int, hop: int) -> list[int]:
    if n_frames <= window_len:
        return [0]
    count = 1 + math.ceil((n_frames - window_len) / hop)
    return [index * hop for index in range(count)]


def _select_speakers(durations: np.ndarray, n_w: int) -> list[int]:
    active = [int(n) for n in np.flatnonzero(durations > 0)]
    if len(active) <= n_w:
        return active
    longest = sorted(active, key=lambda n: (-int(durations[n]), n))[:n_w]
    return sorted(longest)


def swsp(g: GlobalPrior, cfg: WindowingConfig) -> list[tuple[WindowPrior, IndexMap]]:
    """Cut the global prior into fixed windows with densely renumbered speaker rows.

    Rows follow ascending global index. A window with more than ``n_w`` active
    speakers keeps the longest-talking ones in decoding mode and is skipped in
    training mode; the skipped window still consumes its ``window_id``.
    """
    windows: list[tuple[WindowPrior, IndexMap]] = []
    discarded = 0
    for window_id, start in enumerate(window_starts(g.n_frames, cfg.window_len, cfg.hop)):
        segment = g.activity[:, start:start + cfg.window_len]
        valid = int(segment.shape[1])
        durations = segment.sum(axis=1, dtype=np.int64)
        n_active = int(np.count_nonzero(durations))

        if n_active > cfg.n_w and cfg.mode == WindowMode.TRAINING:
            discarded += 1
            logger.debug("window %d has %d active speakers; discarded for training", window_id, n_active)
            continue

        kept = _select_speakers(durations, cfg.n_w)
        if n_active > len(kept):
            dropped = sorted(set(np.flatnonzero(durations).tolist()) - set(kept))
            logger.warning(
                "window %d: %d active speakers exceed n_w=%d; dropped %s",
                window_id,
                n_active,
                cfg.n_w,
                [g.speaker_ids[n] for n in dropped],
            )

        activity = np.zeros((cfg.n_w, cfg.window_len), dtype=np.uint8)
        if kept:
            activity[: len(kept), :valid] = segment[kept]
        windows.append(
            (
                WindowPrior(activity=activity, start_frame=start, window_id=window_id, valid_frames=valid),
                IndexMap({row: speaker for row, speaker in enumerate(kept)}),
            )
        )

    if discarded:
        logger.warning("%d window(s) discarded in training mode for exceeding n_w=%d", discarded, cfg.n_w)
    logger.info("swsp produced %d window(s) over %d frame(s)", len(windows), g.n_frames)
    return windows


def invert_window(w: WindowPrior, m: IndexMap, g_shape: tuple[int, int]) -> np.ndarray:
    n_global, n_frames = g_shape
    fragment = np.zeros((n_global, n_frames), dtype=np.uint8)
    stop = min(w.start_frame + w.valid_frames, n_frames)
    span = stop - w.start_frame
    for row, speaker in m.items():
        if not 0 <= row < w.n_rows or not 0 <= speaker < n_global:
            raise ShapeError(
                "map_out_of_range",
                "index map entry outside the window or global speaker range",
                {"window_id": w.window_id, "row": row, "speaker": speaker},
            )
        if span > 0:
            fragment[speaker, w.start_frame:stop] = w.activity[row, :span]
    return fragment
