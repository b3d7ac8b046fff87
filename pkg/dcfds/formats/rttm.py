from __future__ import annotations

import logging
import math

import numpy as np

from ..errors import FormatError
from ..models import GlobalPrior


logger = logging.getLogger(__name__)

RTTM_LINE = "SPEAKER {file} 1 {onset:.3f} {duration:.3f} <NA> <NA> {speaker} <NA> <NA>"
_SNAP_TOLERANCE = 1e-3
# NIST RTTM record types; only SPEAKER carries diarization.
RTTM_TYPES = frozenset(
    {
        "SPEAKER",
        "SPKR-INFO",
        "SEGMENT",
        "NOSCORE",
        "NO_RT_METADATA",
        "LEXEME",
        "NON-LEX",
        "NON-SPEECH",
        "FILLER",
        "EDIT",
        "IP",
        "SU",
        "CB",
        "A/P",
    }
)


def _to_frame(seconds: float, frame_hop: float, rounding) -> int:
    value = seconds / frame_hop
    nearest = round(value)
    if abs(value - nearest) < _SNAP_TOLERANCE:
        return int(nearest)
    return int(rounding(value))


def _parse_segments(text: str) -> list[tuple[str, float, float]]:
    segments: list[tuple[str, float, float]] = []
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] not in RTTM_TYPES:
            raise FormatError(
                "malformed_rttm", f"RTTM line {line_no} has unknown type {fields[0]!r}", {"line": line_no, "type": fields[0]}
            )
        if fields[0] != "SPEAKER":
            continue
        if len(fields) < 8:
            raise FormatError("malformed_rttm", f"RTTM line {line_no} has {len(fields)} fields", {"line": line_no})
        try:
            onset = float(fields[3])
            duration = float(fields[4])
        except ValueError as exc:
            raise FormatError("malformed_rttm", f"RTTM line {line_no}: {exc}", {"line": line_no}) from exc
        if onset < 0 or duration < 0 or not math.isfinite(onset + duration):
            raise FormatError("malformed_rttm", f"RTTM line {line_no} has a negative or non-finite time", {"line": line_no})
        segments.append((fields[7], onset, onset + duration))
    return segments


def prior_from_rttm(text: str, frame_hop: float, n_frames: int | None = None) -> GlobalPrior:
    """Frame-quantise RTTM segments: onset floors, offset ceils, rows in sorted label order."""
    segments = _parse_segments(text)
    if not segments:
        raise FormatError("no_speakers", "no speakers")

    speaker_ids = sorted({speaker for speaker, _, _ in segments})
    rows = {speaker: index for index, speaker in enumerate(speaker_ids)}
    spans = [
        (rows[speaker], _to_frame(onset, frame_hop, math.floor), _to_frame(offset, frame_hop, math.ceil))
        for speaker, onset, offset in segments
    ]
    total = n_frames if n_frames is not None else max(1, max(end for _, _, end in spans))

    activity = np.zeros((len(speaker_ids), total), dtype=np.uint8)
    for row, start, end in spans:
        activity[row, start:min(end, total)] = 1
    if n_frames is not None and any(end > n_frames for _, _, end in spans):
        logger.warning("RTTM segments extend past %d frame(s); truncated", n_frames)
    return GlobalPrior(activity=activity, frame_hop=frame_hop, speaker_ids=speaker_ids)


def _runs(row: np.ndarray) -> list[tuple[int, int]]:
    edges = np.diff(np.concatenate([[0], row.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def prior_to_rttm(prior: GlobalPrior, file_id: str = "mix") -> str:
    entries: list[tuple[float, str, float]] = []
    for speaker, row in zip(prior.speaker_ids, prior.activity):
        for start, end in _runs(row):
            entries.append((start * prior.frame_hop, speaker, (end - start) * prior.frame_hop))
    entries.sort()
    lines = [
        RTTM_LINE.format(file=file_id, onset=onset, duration=duration, speaker=speaker)
        for onset, speaker, duration in entries
    ]
    return "\n".join(lines) + ("\n" if lines else "")
