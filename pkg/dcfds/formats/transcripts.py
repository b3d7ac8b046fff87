from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from ..errors import FormatError
from ..models import TranscriptSet, Word


def _optional_time(item: dict[str, Any], key: str, index: int) -> float | None:
    value = item.get(key)
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise FormatError("malformed_transcript", f"entry {index}: {key} is not a number", {"entry": index}) from exc


def transcripts_from_json(text: str) -> TranscriptSet:
    try:
        entries = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError("malformed_transcript", f"invalid JSON: {exc}", {"line": exc.lineno}) from exc
    if not isinstance(entries, list):
        raise FormatError("malformed_transcript", "transcript JSON must be an array of words")

    words: dict[str, list[Word]] = {}
    for index, item in enumerate(entries):
        if not isinstance(item, dict) or "speaker" not in item or "token" not in item:
            raise FormatError("malformed_transcript", f"entry {index} needs speaker and token", {"entry": index})
        words.setdefault(str(item["speaker"]), []).append(
            Word(
                token=str(item["token"]),
                onset=_optional_time(item, "onset", index),
                offset=_optional_time(item, "offset", index),
            )
        )
    return TranscriptSet(words)


def transcripts_to_json(transcripts: TranscriptSet) -> str:
    entries = [
        {"speaker": speaker, "token": word.token, "onset": word.onset, "offset": word.offset}
        for speaker, words in transcripts.words.items()
        for word in words
    ]
    return json.dumps(entries, indent=2)


def read_ctm(text: str) -> TranscriptSet:
    words: dict[str, list[Word]] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith(";;") or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 5:
            raise FormatError("malformed_ctm", f"CTM line {line_no} has {len(fields)} fields", {"line": line_no})
        try:
            onset = float(fields[2])
            duration = float(fields[3])
        except ValueError as exc:
            raise FormatError("malformed_ctm", f"CTM line {line_no}: {exc}", {"line": line_no}) from exc
        words.setdefault(fields[0], []).append(Word(token=fields[4], onset=onset, offset=onset + duration))
    return TranscriptSet(words)


def load_transcripts(path: str | Path) -> TranscriptSet:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".ctm":
        return read_ctm(text)
    return transcripts_from_json(text)
