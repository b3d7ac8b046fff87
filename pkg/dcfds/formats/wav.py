from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import soundfile as sf

from ..errors import FormatError
from ..models import Waveform


logger = logging.getLogger(__name__)


def read_wav(path: str | Path, expected_rate: int | None = None) -> Waveform:
    try:
        samples, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as exc:
        raise FormatError("unreadable_wav", f"cannot read WAV file: {exc}", {"path": str(path)}) from exc
    if samples.shape[1] != 1:
        raise FormatError("not_mono", "only mono WAV files are supported", {"path": str(path), "channels": samples.shape[1]})
    if expected_rate is not None and sample_rate != expected_rate:
        raise FormatError(
            "unsupported_sample_rate",
            f"WAV sample rate {sample_rate} Hz differs from configured {expected_rate} Hz; resample first",
            {"path": str(path), "sample_rate": sample_rate, "expected": expected_rate},
        )
    return Waveform(samples[:, 0], int(sample_rate))


def write_wav(path: str | Path, w: Waveform) -> None:
    peak = float(np.max(np.abs(w.samples))) if len(w) else 0.0
    if peak > 1.0:
        logger.warning("Waveform peak %.3f exceeds full scale; %s will clip", peak, path)
    sf.write(str(path), w.samples, w.sample_rate, subtype="PCM_16")
