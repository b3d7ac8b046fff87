from __future__ import annotations

import logging
import math
from functools import lru_cache

import librosa
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import check_COLA, get_window

from .errors import DcfdsError, ShapeError
from .models import MASK_CEILING, ComplexSpectrogram, FeatureMatrix, MagnitudeSpectrogram, Waveform


logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-10
# 80 dB of power expressed in natural-log units.
EMBEDDING_DYNAMIC_RANGE = 8.0 * math.log(10.0)


@lru_cache(maxsize=16)
def _analysis_window(window_fn: str, frame_len: int, hop: int) -> np.ndarray:
    window = get_window(window_fn, frame_len, fftbins=True)
    if not check_COLA(window, frame_len, frame_len - hop):
        raise DcfdsError(
            "not_cola",
            "window does not satisfy the constant-overlap-add condition at this hop",
            {"window_fn": window_fn, "frame_len": frame_len, "hop": hop},
        )
    window.setflags(write=False)
    return window


def _check_framing(frame_len: int, hop: int) -> None:
    if not frame_len >= hop > 0:
        raise DcfdsError("invalid_framing", "framing requires frame_len >= hop > 0", {"frame_len": frame_len, "hop": hop})


def frame_count(n_samples: int, hop: int) -> int:
    return 1 + math.ceil(n_samples / hop)


def stft(w: Waveform, frame_len: int, hop: int, window_fn: str = "hann") -> ComplexSpectrogram:
    _check_framing(frame_len, hop)
    n_samples = len(w)
    if n_samples == 0:
        raise DcfdsError("empty_input", "empty input")
    window = _analysis_window(window_fn, frame_len, hop)

    n_frames = frame_count(n_samples, hop)
    pad_left = frame_len // 2
    pad_right = (n_frames - 1) * hop + frame_len - n_samples - pad_left
    mode = "reflect" if n_samples > 1 else "constant"
    padded = np.pad(w.samples, (pad_left, pad_right), mode=mode)

    frames = sliding_window_view(padded, frame_len)[::hop][:n_frames]
    bins = np.fft.rfft(frames * window, axis=1)
    return ComplexSpectrogram(
        bins=bins,
        frame_len=frame_len,
        hop=hop,
        window_fn=window_fn,
        sample_rate=w.sample_rate,
        n_samples=n_samples,
    )


def istft(s: ComplexSpectrogram, n_samples: int | None = None) -> Waveform:
    _check_framing(s.frame_len, s.hop)
    window = _analysis_window(s.window_fn, s.frame_len, s.hop)
    length = n_samples if n_samples is not None else s.n_samples
    if length is None:
        length = (s.n_frames - 1) * s.hop
    if length > (s.n_frames - 1) * s.hop:
        raise ShapeError(
            "inconsistent_metadata",
            "requested length exceeds what the frames cover",
            {"n_samples": length, "n_frames": s.n_frames, "hop": s.hop},
        )

    frames = np.fft.irfft(s.bins, n=s.frame_len, axis=1) * window
    total = (s.n_frames - 1) * s.hop + s.frame_len
    signal = np.zeros(total)
    norm = np.zeros(total)
    squared = window**2
    for t in range(s.n_frames):
        start = t * s.hop
        signal[start:start + s.frame_len] += frames[t]
        norm[start:start + s.frame_len] += squared

    np.divide(signal, norm, out=signal, where=norm > LOG_FLOOR)
    pad_left = s.frame_len // 2
    return Waveform(signal[pad_left:pad_left + length], s.sample_rate)


def magnitude(s: ComplexSpectrogram) -> MagnitudeSpectrogram:
    return MagnitudeSpectrogram(
        mags=np.abs(s.bins),
        frame_len=s.frame_len,
        hop=s.hop,
        window_fn=s.window_fn,
        sample_rate=s.sample_rate,
    )


def apply_mask(mask: np.ndarray, mix: ComplexSpectrogram, mask_ceiling: float = MASK_CEILING) -> ComplexSpectrogram:
    mask = np.asarray(mask)
    if mask.shape != mix.bins.shape:
        raise ShapeError("shape_mismatch", "mask shape must equal mixture shape", {"mask": mask.shape, "mix": mix.bins.shape})
    if not np.iscomplexobj(mask) and mask.size and (mask.min() < 0.0 or mask.max() > mask_ceiling):
        raise DcfdsError(
            "mask_out_of_range",
            "mask entries must lie in [0, mask_ceiling]",
            {"min": float(mask.min()), "max": float(mask.max()), "mask_ceiling": mask_ceiling},
        )
    return ComplexSpectrogram(
        bins=mask * mix.bins,
        frame_len=mix.frame_len,
        hop=mix.hop,
        window_fn=mix.window_fn,
        sample_rate=mix.sample_rate,
        n_samples=mix.n_samples,
    )


@lru_cache(maxsize=16)
def _mel_basis(sample_rate: int, frame_len: int, n_mels: int) -> np.ndarray:
    basis = librosa.filters.mel(sr=sample_rate, n_fft=frame_len, n_mels=n_mels, fmin=0.0, fmax=sample_rate / 2.0)
    basis.setflags(write=False)
    return basis


def compute_fbank(s: MagnitudeSpectrogram, n_mels: int = 40) -> FeatureMatrix:
    n_bins = s.mags.shape[1]
    if n_mels < 1 or n_mels > n_bins:
        raise DcfdsError("invalid_n_mels", "n_mels must lie in [1, F]", {"n_mels": n_mels, "bins": n_bins})
    basis = _mel_basis(s.sample_rate, s.frame_len, n_mels)
    power = s.mags**2
    return FeatureMatrix(feats=np.log(np.maximum(power @ basis.T, LOG_FLOOR)))


def fbank_statistics(feats: np.ndarray) -> np.ndarray:
    """Unit-norm per-band mean and std of log-mel frames, range-clamped below the peak so gain cancels."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ShapeError("empty_features", "statistics need at least one feature frame", {"shape": feats.shape})
    floor = feats.max() - EMBEDDING_DYNAMIC_RANGE
    shifted = np.maximum(feats, floor) - floor
    vector = np.concatenate([shifted.mean(axis=0), shifted.std(axis=0)])
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        raise DcfdsError("zero_embedding", "statistics embedding is all zero")
    return vector / norm
