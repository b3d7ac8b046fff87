from __future__ import annotations

import asyncio
import logging
from collections.abc import Iterable, Mapping, Sequence

import numpy as np

from .errors import DcfdsError, ShapeError
from .estimators.diarization import diarize_window, window_embeddings
from .estimators.separation import concat_inputs, dimension_extend, mimo_se_window, separate_window
from .logging import window_logger
from .models import (
    ORACLE_KINDS,
    ComplexSpectrogram,
    GlobalPrior,
    GlobalTFMask,
    IndexMap,
    OverlapMerge,
    PipelineConfig,
    SeparationResult,
    TFMask,
    Waveform,
    WindowPrior,
)
from .priors import swsp
from .recluster import align_prior, recluster
from .scheduler import WindowScheduler
from .signal import apply_mask, compute_fbank, istft, magnitude, stft


logger = logging.getLogger(__name__)


def window_spectrum(spec: ComplexSpectrogram, start_frame: int, window_len: int) -> ComplexSpectrogram:
    bins = np.zeros((window_len, spec.n_bins), dtype=spec.bins.dtype)
    piece = spec.bins[start_frame:start_frame + window_len]
    bins[: piece.shape[0]] = piece
    return ComplexSpectrogram(
        bins=bins,
        frame_len=spec.frame_len,
        hop=spec.hop,
        window_fn=spec.window_fn,
        sample_rate=spec.sample_rate,
    )


def window_sources(
    source_bins: Sequence[np.ndarray | None],
    index_map: IndexMap,
    start_frame: int,
    n_rows: int,
    window_len: int,
) -> np.ndarray | None:
    if not source_bins:
        return None
    n_bins = next((bins.shape[1] for bins in source_bins if bins is not None), None)
    if n_bins is None:
        return None
    window = np.zeros((n_rows, window_len, n_bins), dtype=np.complex128)
    for row, speaker in index_map.items():
        bins = source_bins[speaker]
        if bins is None:
            continue
        piece = bins[start_frame:start_frame + window_len]
        window[row, : piece.shape[0]] = piece
    return window


def run_window(
    mix_window: ComplexSpectrogram,
    wp: WindowPrior,
    im: IndexMap,
    cfg: PipelineConfig,
    sources: np.ndarray | None = None,
) -> TFMask:
    if mix_window.n_frames != wp.n_frames:
        raise ShapeError(
            "window_length_mismatch",
            "window spectrum and window prior disagree on frame count",
            {"spectrum": mix_window.n_frames, "prior": wp.n_frames, "window_id": wp.window_id},
        )
    n_bins = mix_window.n_bins
    log = window_logger(logger, wp.window_id)
    if not len(im):
        log.debug("no active speakers; masks are zero")
        return TFMask(masks=np.zeros((wp.n_rows, wp.n_frames, n_bins)))

    mag = magnitude(mix_window)
    feats = compute_fbank(mag, cfg.n_mels)
    emb = window_embeddings(wp, feats)
    time_mask = diarize_window(wp, emb, feats, cfg.diarizer)
    inputs = concat_inputs(dimension_extend(time_mask, n_bins), mag)
    masks = separate_window(inputs, mix_window, sources, cfg.separator, window_id=wp.window_id)
    log.debug("separated %d speaker(s) with %s", len(im), cfg.separator.kind.value)
    for _ in range(cfg.se_stages):
        masks = mimo_se_window(masks, mag, cfg.enhancer, sources=sources, mix=mix_window, window_id=wp.window_id)

    mapped = np.zeros(wp.n_rows, dtype=bool)
    mapped[[row for row, _ in im.items()]] = True
    if mapped.all():
        return masks
    values = np.array(masks.masks, copy=True)
    values[~mapped] = 0
    return TFMask(masks=values)


def sis_stitch(
    window_masks: Iterable[tuple[TFMask, IndexMap, int]],
    g_shape: tuple[int, int, int],
    merge: OverlapMerge = OverlapMerge.AVERAGE,
) -> GlobalTFMask:
    """Scatter windowed mask rows to their global speakers.

    Windows are reduced in start-frame order, so the result does not depend on
    the order they were produced in. Frames past ``T_G`` are dropped.
    """
    n_global, n_frames, n_bins = g_shape
    ordered = sorted(window_masks, key=lambda entry: entry[2])
    starts = [start for _, _, start in ordered]
    if len(set(starts)) != len(starts):
        raise DcfdsError("conflicting_coverage", "two windows claim the same start frame", {"starts": starts})

    dtype = np.result_type(np.float64, *(masks.masks.dtype for masks, _, _ in ordered)) if ordered else np.float64
    total = np.zeros((n_global, n_frames, n_bins), dtype=dtype)
    coverage = np.zeros((n_global, n_frames), dtype=np.int32)
    for masks, index_map, start in ordered:
        if not 0 <= start < n_frames:
            raise DcfdsError("conflicting_coverage", "window starts outside the recording", {"start": start, "frames": n_frames})
        if masks.masks.shape[2] != n_bins:
            raise ShapeError("shape_mismatch", "window mask bins disagree with the global shape", {"start": start})
        span = min(masks.masks.shape[1], n_frames - start)
        for row, speaker in index_map.items():
            if not 0 <= speaker < n_global or not 0 <= row < masks.masks.shape[0]:
                raise ShapeError("map_out_of_range", "index map entry outside the mask or global range", {"row": row, "speaker": speaker})
            piece = masks.masks[row, :span]
            if merge == OverlapMerge.FIRST_WINS:
                fresh = coverage[speaker, start:start + span] == 0
                total[speaker, start:start + span][fresh] = piece[fresh]
            else:
                total[speaker, start:start + span] += piece
            coverage[speaker, start:start + span] += 1

    if merge == OverlapMerge.AVERAGE:
        counts = np.maximum(coverage, 1)[:, :, None]
        total = total / counts
    return GlobalTFMask(masks=total, coverage=coverage)


def reconstruct(
    gm: GlobalTFMask,
    mix: ComplexSpectrogram,
    prior: GlobalPrior | None = None,
    windows: Sequence[tuple[WindowPrior, IndexMap]] = (),
    mask_ceiling: float | None = None,
) -> SeparationResult:
    if gm.masks.shape[1:] != mix.bins.shape:
        raise ShapeError("shape_mismatch", "global masks and mixture disagree", {"masks": list(gm.masks.shape), "mix": list(mix.bins.shape)})
    ceiling = mask_ceiling if mask_ceiling is not None else float(np.max(np.real(gm.masks), initial=0.0))
    streams = [istft(apply_mask(gm.masks[speaker], mix, ceiling)) for speaker in range(gm.n_speakers)]
    return SeparationResult(streams=streams, masks=gm, prior=prior, windows=list(windows))


class DecodeService:
    def __init__(self, config: PipelineConfig, workers: int | None = None):
        self.config = config
        self.scheduler = WindowScheduler(workers if workers is not None else config.workers)

    async def decode(
        self,
        mix: Waveform,
        prior: GlobalPrior,
        sources: Mapping[str, Waveform] | None = None,
    ) -> SeparationResult:
        cfg = self.config
        if mix.sample_rate != cfg.sample_rate:
            raise DcfdsError(
                "sample_rate_mismatch",
                "mixture sample rate differs from the configuration",
                {"mixture": mix.sample_rate, "config": cfg.sample_rate},
            )
        if abs(prior.frame_hop - cfg.frame_hop_s) > 1e-9:
            raise DcfdsError(
                "frame_rate_mismatch",
                "prior frame hop must equal the STFT hop",
                {"prior": prior.frame_hop, "stft": cfg.frame_hop_s},
            )
        if self._needs_sources() and sources is None:
            raise DcfdsError("missing_sources", "oracle estimators need clean sources")

        spec = stft(mix, cfg.frame_len, cfg.hop_len)
        source_cache: dict[str, np.ndarray] = {}
        if sources is not None:
            source_cache = {label: stft(wave, cfg.frame_len, cfg.hop_len).bins for label, wave in sources.items()}

        current = self._fit_prior(prior, spec.n_frames)
        result = await self._decode_once(spec, current, source_cache)
        for round_index in range(cfg.recluster_rounds):
            refreshed = await asyncio.to_thread(recluster, result, cfg)
            current = self._fit_prior(align_prior(refreshed, current), spec.n_frames)
            logger.info("re-clustering round %d: %d speaker(s)", round_index + 1, current.n_speakers)
            result = await self._decode_once(spec, current, source_cache)
            result.recluster_rounds = round_index + 1
        return result

    def _needs_sources(self) -> bool:
        cfg = self.config
        if cfg.separator.kind in ORACLE_KINDS:
            return True
        return cfg.se_stages > 0 and cfg.enhancer.kind in ORACLE_KINDS

    @staticmethod
    def _fit_prior(prior: GlobalPrior, n_frames: int) -> GlobalPrior:
        if prior.n_frames == n_frames:
            return prior
        logger.warning("prior has %d frame(s), STFT has %d; padding or trimming the prior", prior.n_frames, n_frames)
        activity = np.zeros((prior.n_speakers, n_frames), dtype=np.uint8)
        keep = min(n_frames, prior.n_frames)
        activity[:, :keep] = prior.activity[:, :keep]
        return GlobalPrior(activity=activity, frame_hop=prior.frame_hop, speaker_ids=list(prior.speaker_ids))

    async def _decode_once(
        self,
        spec: ComplexSpectrogram,
        prior: GlobalPrior,
        source_cache: Mapping[str, np.ndarray],
    ) -> SeparationResult:
        cfg = self.config
        windowing = cfg.windowing
        windows = swsp(prior, windowing)

        source_bins: list[np.ndarray | None] = []
        if source_cache:
            for label in prior.speaker_ids:
                bins = source_cache.get(label)
                if bins is None:
                    logger.warning("no clean source for speaker %s; its oracle masks will be zero", label)
                source_bins.append(bins)

        def _work(window: tuple[WindowPrior, IndexMap]) -> TFMask:
            wp, im = window
            return run_window(
                window_spectrum(spec, wp.start_frame, windowing.window_len),
                wp,
                im,
                cfg,
                sources=window_sources(source_bins, im, wp.start_frame, wp.n_rows, windowing.window_len),
            )

        masks = await self.scheduler.run(windows, _work)
        logger.info("decoded %d window(s) with %d worker(s)", len(masks), self.scheduler.workers)

        gm = sis_stitch(
            [(mask, im, wp.start_frame) for mask, (wp, im) in zip(masks, windows)],
            (prior.n_speakers, spec.n_frames, spec.n_bins),
            cfg.overlap_merge,
        )
        return reconstruct(gm, spec, prior=prior, windows=windows, mask_ceiling=self._reconstruct_ceiling())

    def _reconstruct_ceiling(self) -> float:
        cfg = self.config
        ceilings = [cfg.mask_ceiling, cfg.separator.mask_ceiling]
        if cfg.se_stages:
            ceilings.append(cfg.enhancer.mask_ceiling)
        return max(ceilings)


def decode(
    mix: Waveform,
    prior: GlobalPrior,
    cfg: PipelineConfig,
    sources: Mapping[str, Waveform] | None = None,
    workers: int | None = None,
) -> SeparationResult:
    return asyncio.run(DecodeService(cfg, workers=workers).decode(mix, prior, sources=sources))
