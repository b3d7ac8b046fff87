from __future__ import annotations

import logging

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ConfigError, DcfdsError, ShapeError
from ..models import MASK_CEILING, ComplexSpectrogram, EstimatorConfig, EstimatorKind, MagnitudeSpectrogram, TFMask, TimeMask
from .external import load_window_tensor


logger = logging.getLogger(__name__)


def dimension_extend(t: TimeMask, n_bins: int) -> np.ndarray:
    if n_bins < 1:
        raise DcfdsError("invalid_bins", "frequency bin count must be at least 1", {"bins": n_bins})
    n_rows, n_frames = t.probs.shape
    return np.broadcast_to(t.probs[:, :, None], (n_rows, n_frames, n_bins))


def concat_inputs(broadcast: np.ndarray, mag: MagnitudeSpectrogram) -> np.ndarray:
    if broadcast.shape[1:] != mag.mags.shape:
        raise ShapeError(
            "shape_mismatch",
            "time masks and magnitude disagree on frames or bins",
            {"masks": list(broadcast.shape), "magnitude": list(mag.mags.shape)},
        )
    return np.concatenate([broadcast, mag.mags[None, :, :]], axis=0)


def _safe_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # 0/0 and x/0 both give 0.
    out = np.zeros(np.broadcast_shapes(num.shape, den.shape), dtype=np.result_type(num, den, np.float64))
    np.divide(num, den, out=out, where=den != 0)
    return out


def ground_truth_masks(
    sources: np.ndarray,
    mix: np.ndarray,
    kind: EstimatorKind = EstimatorKind.ORACLE_MAGNITUDE_RATIO,
    mask_ceiling: float = MASK_CEILING,
    clamp: bool = True,
) -> np.ndarray:
    if sources.shape[1:] != mix.shape:
        raise ShapeError("shape_mismatch", "sources and mixture disagree", {"sources": list(sources.shape), "mix": list(mix.shape)})

    if kind == EstimatorKind.ORACLE_MAGNITUDE_RATIO:
        return np.clip(_safe_divide(np.abs(sources), np.abs(mix)[None]), 0.0, mask_ceiling)
    if kind == EstimatorKind.ORACLE_COMPLEX_RATIO:
        ratio = _safe_divide(sources.astype(np.complex128), mix[None].astype(np.complex128))
        if not clamp:
            return ratio
        return np.clip(ratio.real, 0.0, mask_ceiling)
    if kind == EstimatorKind.ORACLE_BINARY:
        energy = np.abs(sources) ** 2
        if energy.shape[0] == 0:
            return np.zeros(energy.shape)
        loudest = energy.argmax(axis=0)
        mask = np.arange(energy.shape[0])[:, None, None] == loudest[None]
        return (mask & (energy.max(axis=0) > 0)[None]).astype(np.float64)
    raise ConfigError("unsupported_kind", "estimator kind has no ground-truth mask", {"kind": kind.value})


def _noisy_masks(sources: np.ndarray, mix: np.ndarray, cfg: EstimatorConfig, window_id: int) -> np.ndarray:
    masks = ground_truth_masks(sources, mix, EstimatorKind.ORACLE_MAGNITUDE_RATIO, cfg.mask_ceiling)
    if cfg.blur_sigma > 0:
        masks = gaussian_filter(masks, sigma=(0.0, cfg.blur_sigma, cfg.blur_sigma), mode="nearest")
    rng = np.random.default_rng([cfg.seed, window_id])
    replace = rng.random(masks.shape) < cfg.flip_rate
    noise = rng.random(masks.shape)
    return np.clip(np.where(replace, noise, masks), 0.0, cfg.mask_ceiling)


def _estimate(
    n_rows: int,
    mix: np.ndarray,
    sources: np.ndarray | None,
    cfg: EstimatorConfig,
    window_id: int,
) -> np.ndarray:
    shape = (n_rows, *mix.shape)
    if cfg.kind == EstimatorKind.EXTERNAL_FILE:
        return np.clip(load_window_tensor(cfg.path, window_id, shape), 0.0, cfg.mask_ceiling)

    if sources is None:
        raise DcfdsError("missing_sources", "oracle estimators need clean sources", {"kind": cfg.kind.value, "window_id": window_id})
    if sources.shape != shape:
        raise ShapeError("shape_mismatch", "sources do not match the window", {"sources": list(sources.shape), "expected": list(shape)})
    if cfg.kind == EstimatorKind.NOISY_ORACLE:
        return _noisy_masks(sources, mix, cfg, window_id)
    return ground_truth_masks(sources, mix, cfg.kind, cfg.mask_ceiling, cfg.clamp)


def separate_window(
    inputs: np.ndarray,
    mix: ComplexSpectrogram,
    sources: np.ndarray | None,
    cfg: EstimatorConfig,
    window_id: int = 0,
) -> TFMask:
    """Map the concat input (time masks plus magnitude) to per-speaker T-F masks.

    ``sources`` holds the clean spectra of the windowed speakers in row order,
    zero rows for padding. The identity kind passes the extended time masks
    through as T-F masks.
    """
    n_rows = inputs.shape[0] - 1
    if inputs.shape[1:] != mix.bins.shape:
        raise ShapeError("shape_mismatch", "concat input and mixture disagree", {"inputs": list(inputs.shape), "mix": list(mix.bins.shape)})
    time_masks = inputs[:n_rows]

    if cfg.kind == EstimatorKind.IDENTITY:
        masks = np.array(time_masks, dtype=np.float64)
    else:
        masks = _estimate(n_rows, mix.bins, sources, cfg, window_id)
        if cfg.gate_with_time_mask:
            masks = masks * time_masks
    return TFMask(masks=masks)


def mimo_se_window(
    prev: TFMask,
    mag: MagnitudeSpectrogram,
    cfg: EstimatorConfig,
    sources: np.ndarray | None = None,
    mix: ComplexSpectrogram | None = None,
    window_id: int = 0,
) -> TFMask:
    if prev.masks.shape[1:] != mag.mags.shape:
        raise ShapeError(
            "shape_mismatch",
            "previous masks and magnitude disagree",
            {"masks": list(prev.masks.shape), "magnitude": list(mag.mags.shape)},
        )
    if cfg.kind == EstimatorKind.IDENTITY:
        return prev
    if cfg.kind != EstimatorKind.EXTERNAL_FILE and mix is None:
        raise DcfdsError("missing_sources", "oracle enhancement needs the mixture spectrum", {"window_id": window_id})

    mix_bins = mix.bins if mix is not None else np.zeros(mag.mags.shape, dtype=np.complex128)
    return TFMask(masks=_estimate(prev.masks.shape[0], mix_bins, sources, cfg, window_id))
