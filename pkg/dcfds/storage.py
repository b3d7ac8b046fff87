from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import __version__
from .formats.wav import write_wav
from .models import RunManifest, Waveform


logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _dt_now() -> datetime:
    return datetime.now(timezone.utc)


def _to_iso(value: datetime | None) -> str | None:
    if value is None:
        return None
    return value.astimezone(timezone.utc).isoformat()


def file_digest(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactStore:
    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()
        self._digests: dict[str, str] = {}

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _record(self, name: str) -> Path:
        target = self.path(name)
        with self._write_lock:
            self._digests[name] = file_digest(target)
        logger.debug("wrote %s", target)
        return target

    def write_text(self, name: str, text: str) -> Path:
        self.path(name).write_text(text, encoding="utf-8")
        return self._record(name)

    def write_json(self, name: str, payload: Any) -> Path:
        return self.write_text(name, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def write_wav(self, name: str, w: Waveform) -> Path:
        write_wav(self.path(name), w)
        return self._record(name)

    @property
    def output_digests(self) -> dict[str, str]:
        return dict(sorted(self._digests.items()))

    def write_manifest(
        self,
        command: str,
        started_at: datetime,
        inputs: dict[str, str | Path],
        parameters: dict[str, Any],
        config_hash: str | None = None,
    ) -> RunManifest:
        manifest = RunManifest(
            tool_version=__version__,
            command=command,
            config_hash=config_hash,
            input_digests={name: file_digest(path) for name, path in sorted(inputs.items())},
            output_digests=self.output_digests,
            parameters=parameters,
            started_at=_to_iso(started_at) or "",
            elapsed_s=(_dt_now() - started_at).total_seconds(),
        )
        self.path(MANIFEST_NAME).write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info("%s wrote %d artifact(s) to %s", command, len(manifest.output_digests), self.out_dir)
        return manifest
