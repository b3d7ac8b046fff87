from __future__ import annotations

import logging

import numpy as np
from scipy.ndimage import gaussian_filter1d

from ..errors import ConfigError
from ..models import EmbeddingSet, EstimatorConfig, EstimatorKind, FeatureMatrix, TimeMask, WindowPrior
from ..signal import fbank_statistics
from .external import load_window_tensor


logger = logging.getLogger(__name__)

DIARIZER_KINDS = frozenset({EstimatorKind.ORACLE_BINARY, EstimatorKind.NOISY_ORACLE, EstimatorKind.EXTERNAL_FILE})


def window_embeddings(prior: WindowPrior, feats: FeatureMatrix) -> EmbeddingSet:
    valid = min(prior.valid_frames, feats.feats.shape[0])
    vectors = np.zeros((prior.n_rows, 2 * feats.n_mels))
    for row in range(prior.n_rows):
        active = prior.activity[row, :valid].astype(bool)
        if active.any():
            vectors[row] = fbank_statistics(feats.feats[:valid][active])
    return EmbeddingSet(vectors=vectors)


def _flip_bits(activity: np.ndarray, valid: int, cfg: EstimatorConfig, window_id: int) -> np.ndarray:
    # One uniform draw per bit for every rate, so flips at a higher rate contain those at a lower one.
    rng = np.random.default_rng([cfg.seed, window_id])
    draws = rng.random(activity.shape)
    flips = draws < cfg.flip_rate
    flips[:, valid:] = False
    return np.where(flips, 1.0 - activity, activity)


def diarize_window(prior: WindowPrior, emb: EmbeddingSet, feats: FeatureMatrix, cfg: EstimatorConfig) -> TimeMask:
    activity = prior.activity.astype(np.float64)

    if cfg.kind == EstimatorKind.ORACLE_BINARY:
        probs = activity
    elif cfg.kind == EstimatorKind.NOISY_ORACLE:
        probs = _flip_bits(activity, prior.valid_frames, cfg, prior.window_id)
        if cfg.blur_sigma > 0:
            probs = gaussian_filter1d(probs, cfg.blur_sigma, axis=1, mode="nearest")
    elif cfg.kind == EstimatorKind.EXTERNAL_FILE:
        probs = load_window_tensor(cfg.path, prior.window_id, activity.shape)
    else:
        raise ConfigError("unsupported_kind", "estimator kind cannot diarize", {"kind": cfg.kind.value})

    logger.debug(
        "window %d diarized (%s): %d active row(s), %d embedding row(s)",
        prior.window_id,
        cfg.kind.value,
        prior.n_active,
        int(np.count_nonzero(np.linalg.norm(emb.vectors, axis=1))),
    )
    return TimeMask(probs=probs)
