"""Tests for per-window decoding, stitching, reconstruction and the decode service."""

import asyncio
import logging
import random

import numpy as np
import pytest

from dcfds.errors import DcfdsError
from dcfds.estimators.separation import ground_truth_masks
from dcfds.models import (
    EstimatorConfig,
    EstimatorKind,
    GlobalTFMask,
    IndexMap,
    OverlapMerge,
    TFMask,
    Waveform,
    WindowPrior,
)
from dcfds.pipeline import (
    DecodeService,
    decode,
    reconstruct,
    run_window,
    sis_stitch,
    window_sources,
    window_spectrum,
)
from dcfds.priors import swsp
from dcfds.signal import stft

from conftest import FRAME_LEN, HOP, SR, make_prior, oracle_config


F = FRAME_LEN // 2 + 1


def _mask(rng, rows: int, frames: int, bins: int = 4) -> TFMask:
    return TFMask(rng.random((rows, frames, bins)))


def _scene_inputs(scene, cfg):
    spec = stft(scene.mixture, cfg.frame_len, cfg.hop_len)
    source_bins = [stft(source, cfg.frame_len, cfg.hop_len).bins for source in scene.sources]
    return spec, source_bins


# ---------------------------------------------------------------------------
# window slicing
# ---------------------------------------------------------------------------


class TestWindowSpectrum:
    def test_zero_pads_past_end(self, rng):
        spec = stft(Waveform(rng.standard_normal(SR), SR), FRAME_LEN, HOP)
        window = window_spectrum(spec, spec.n_frames - 10, 40)
        assert window.n_frames == 40
        assert np.array_equal(window.bins[:10], spec.bins[-10:])
        assert not window.bins[10:].any()

    def test_sources_follow_rows(self, rng):
        bins = [rng.standard_normal((30, 5)) + 0j, None, rng.standard_normal((30, 5)) + 0j]
        out = window_sources(bins, IndexMap({0: 2, 1: 0}), 10, 3, 25)
        assert out.shape == (3, 25, 5)
        assert np.array_equal(out[0, :20], bins[2][10:30])
        assert np.array_equal(out[1, :20], bins[0][10:30])
        assert not out[2].any()
        assert not out[:, 20:].any()


# ---------------------------------------------------------------------------
# sis_stitch
# ---------------------------------------------------------------------------


class TestSisStitch:
    def test_single_window_identity(self, rng):
        m = _mask(rng, 2, 10)
        gm = sis_stitch([(m, IndexMap({0: 0, 1: 1}), 0)], (2, 10, 4))
        assert np.array_equal(gm.masks, m.masks)
        assert np.all(gm.coverage == 1)

    def test_scatters_to_global_rows(self, rng):
        a = _mask(rng, 1, 5)
        b = _mask(rng, 1, 5)
        gm = sis_stitch([(a, IndexMap({0: 1}), 0), (b, IndexMap({0: 3}), 5)], (4, 10, 4))
        assert np.array_equal(gm.masks[1, :5], a.masks[0])
        assert np.array_equal(gm.masks[3, 5:], b.masks[0])
        assert not gm.masks[1, 5:].any() and not gm.masks[3, :5].any()
        assert not gm.masks[[0, 2]].any()

    def test_overlap_average_of_equal_masks(self):
        value = np.full((1, 10, 4), 0.37)
        gm = sis_stitch(
            [(TFMask(value), IndexMap({0: 0}), 0), (TFMask(value), IndexMap({0: 0}), 5)],
            (1, 15, 4),
        )
        assert np.all(gm.masks == 0.37)
        assert gm.coverage[0].tolist() == [1] * 5 + [2] * 5 + [1] * 5

    def test_overlap_average_of_different_masks(self):
        gm = sis_stitch(
            [(TFMask(np.zeros((1, 4, 2))), IndexMap({0: 0}), 0), (TFMask(np.ones((1, 4, 2))), IndexMap({0: 0}), 2)],
            (1, 6, 2),
        )
        np.testing.assert_allclose(gm.masks[0, :, 0], [0.0, 0.0, 0.5, 0.5, 1.0, 1.0])

    def test_first_wins(self):
        gm = sis_stitch(
            [(TFMask(np.ones((1, 4, 2))), IndexMap({0: 0}), 2), (TFMask(np.zeros((1, 4, 2))), IndexMap({0: 0}), 0)],
            (1, 6, 2),
            OverlapMerge.FIRST_WINS,
        )
        np.testing.assert_allclose(gm.masks[0, :, 0], [0.0, 0.0, 0.0, 0.0, 1.0, 1.0])

    def test_input_order_does_not_matter(self, rng):
        entries = [(_mask(rng, 2, 8), IndexMap({0: k % 3, 1: (k + 1) % 3}), 4 * k) for k in range(6)]
        reference = sis_stitch(entries, (3, 28, 4))
        shuffled = list(entries)
        random.Random(5).shuffle(shuffled)
        again = sis_stitch(shuffled, (3, 28, 4))
        assert np.array_equal(reference.masks, again.masks)
        assert np.array_equal(reference.coverage, again.coverage)

    def test_duplicate_start_rejected(self, rng):
        entries = [(_mask(rng, 1, 4), IndexMap({0: 0}), 0), (_mask(rng, 1, 4), IndexMap({0: 0}), 0)]
        with pytest.raises(DcfdsError, match="same start"):
            sis_stitch(entries, (1, 4, 4))

    def test_frames_past_end_dropped(self, rng):
        m = _mask(rng, 1, 10)
        gm = sis_stitch([(m, IndexMap({0: 0}), 4)], (1, 8, 4))
        assert np.array_equal(gm.masks[0, 4:], m.masks[0, :4])


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------


class TestReconstruct:
    def test_unit_mask_returns_mixture(self, rng):
        mix = Waveform(rng.standard_normal(SR // 2), SR)
        spec = stft(mix, FRAME_LEN, HOP)
        gm = GlobalTFMask(np.ones((1, spec.n_frames, F)), np.ones((1, spec.n_frames), dtype=np.int32))
        [stream] = reconstruct(gm, spec).streams
        assert len(stream) == len(mix)
        assert np.max(np.abs(stream.samples - mix.samples)) < 1e-6

    def test_zero_mask_is_silent(self, rng):
        spec = stft(Waveform(rng.standard_normal(SR // 2), SR), FRAME_LEN, HOP)
        gm = GlobalTFMask(np.zeros((2, spec.n_frames, F)), np.zeros((2, spec.n_frames), dtype=np.int32))
        streams = reconstruct(gm, spec).streams
        assert len(streams) == 2
        assert all(not s.samples.any() for s in streams)


# ---------------------------------------------------------------------------
# run_window
# ---------------------------------------------------------------------------


class TestRunWindow:
    def _first_window(self, scene, cfg):
        spec, source_bins = _scene_inputs(scene, cfg)
        windowing = cfg.windowing
        wp, im = next((wp, im) for wp, im in swsp(scene.prior, windowing) if len(im))
        mix_window = window_spectrum(spec, wp.start_frame, windowing.window_len)
        sources = window_sources(source_bins, im, wp.start_frame, wp.n_rows, windowing.window_len)
        return wp, im, mix_window, sources

    def test_oracle_chain_gives_ground_truth(self, two_speaker_scene):
        cfg = oracle_config()
        wp, im, mix_window, sources = self._first_window(two_speaker_scene, cfg)
        out = run_window(mix_window, wp, im, cfg, sources=sources)
        assert np.array_equal(out.masks, ground_truth_masks(sources, mix_window.bins))

    def test_identity_enhancement_is_transparent(self, two_speaker_scene):
        cfg = oracle_config()
        staged = oracle_config(se_stages=2)
        wp, im, mix_window, sources = self._first_window(two_speaker_scene, cfg)
        assert np.array_equal(
            run_window(mix_window, wp, im, cfg, sources=sources).masks,
            run_window(mix_window, wp, im, staged, sources=sources).masks,
        )

    def test_empty_window_gives_zero_masks(self):
        cfg = oracle_config()
        wp = WindowPrior(activity=np.zeros((3, 188)), start_frame=0, window_id=0)
        mix_window = window_spectrum(stft(Waveform(np.ones(SR), SR), FRAME_LEN, HOP), 0, 188)
        out = run_window(mix_window, wp, IndexMap(), cfg)
        assert out.masks.shape == (3, 188, F)
        assert not out.masks.any()

    def test_logs_under_window_id(self, caplog):
        cfg = oracle_config()
        wp = WindowPrior(activity=np.zeros((3, 188)), start_frame=0, window_id=7)
        mix_window = window_spectrum(stft(Waveform(np.ones(SR), SR), FRAME_LEN, HOP), 0, 188)
        with caplog.at_level(logging.DEBUG, logger="dcfds.pipeline"):
            run_window(mix_window, wp, IndexMap(), cfg)
        [record] = [r for r in caplog.records if r.name == "dcfds.pipeline"]
        assert record.getMessage() == "[window 7] no active speakers; masks are zero"
        assert record.window_id == 7

    def test_unmapped_rows_are_zeroed(self, two_speaker_scene):
        cfg = oracle_config(separator=EstimatorConfig(EstimatorKind.IDENTITY))
        wp, im, mix_window, _ = self._first_window(two_speaker_scene, cfg)
        wp.activity[cfg.n_w - 1, :] = 1
        out = run_window(mix_window, wp, im, cfg)
        unmapped = [row for row in range(wp.n_rows) if im.global_index(row) is None]
        assert unmapped and not out.masks[unmapped].any()

    def test_length_mismatch(self, two_speaker_scene):
        cfg = oracle_config()
        wp, im, mix_window, sources = self._first_window(two_speaker_scene, cfg)
        short = window_spectrum(mix_window, 0, wp.n_frames - 1)
        with pytest.raises(DcfdsError, match="frame count"):
            run_window(short, wp, im, cfg, sources=sources)


# ---------------------------------------------------------------------------
# DecodeService
# ---------------------------------------------------------------------------


class TestDecodeService:
    def test_streams_cover_every_prior_speaker(self, two_speaker_scene):
        scene = two_speaker_scene
        result = decode(scene.mixture, scene.prior, oracle_config(), sources=scene.sources_by_label())
        assert len(result.streams) == 2
        assert all(len(s) == len(scene.mixture) for s in result.streams)
        assert result.prior.speaker_ids == scene.prior.speaker_ids
        assert result.windows

    def test_idempotent(self, two_speaker_scene):
        scene = two_speaker_scene
        cfg = oracle_config()
        first = decode(scene.mixture, scene.prior, cfg, sources=scene.sources_by_label())
        second = decode(scene.mixture, scene.prior, cfg, sources=scene.sources_by_label())
        for a, b in zip(first.streams, second.streams):
            assert np.array_equal(a.samples, b.samples)

    def test_worker_count_does_not_change_output(self, overlapping_scene):
        scene = overlapping_scene
        cfg = oracle_config()
        one = decode(scene.mixture, scene.prior, cfg, sources=scene.sources_by_label(), workers=1)
        four = decode(scene.mixture, scene.prior, cfg, sources=scene.sources_by_label(), workers=4)
        assert np.array_equal(one.masks.masks, four.masks.masks)
        for a, b in zip(one.streams, four.streams):
            assert np.array_equal(a.samples, b.samples)

    def test_frame_hop_mismatch(self, two_speaker_scene):
        scene = two_speaker_scene
        prior = make_prior(scene.prior.activity, frame_hop=0.01)
        with pytest.raises(DcfdsError, match="frame hop"):
            decode(scene.mixture, prior, oracle_config(), sources=scene.sources_by_label())

    def test_sample_rate_mismatch(self, two_speaker_scene):
        mix = Waveform(two_speaker_scene.mixture.samples, 8000)
        with pytest.raises(DcfdsError, match="sample rate"):
            decode(mix, two_speaker_scene.prior, oracle_config(), sources=two_speaker_scene.sources_by_label())

    def test_oracle_needs_sources(self, two_speaker_scene):
        with pytest.raises(DcfdsError, match="clean sources"):
            decode(two_speaker_scene.mixture, two_speaker_scene.prior, oracle_config())

    def test_short_prior_is_padded(self, two_speaker_scene, caplog):
        scene = two_speaker_scene
        short = make_prior(scene.prior.activity[:, :-10], labels=scene.prior.speaker_ids)
        with caplog.at_level(logging.WARNING, logger="dcfds.pipeline"):
            result = decode(scene.mixture, short, oracle_config(), sources=scene.sources_by_label())
        assert "padding or trimming" in caplog.text
        assert result.prior.n_frames == scene.prior.n_frames

    def test_service_runs_inside_an_event_loop(self, two_speaker_scene):
        scene = two_speaker_scene
        service = DecodeService(oracle_config(), workers=2)
        result = asyncio.run(service.decode(scene.mixture, scene.prior, sources=scene.sources_by_label()))
        assert len(result.streams) == 2

    def test_recluster_round_keeps_labels_and_streams(self, two_speaker_scene):
        scene = two_speaker_scene
        base = decode(scene.mixture, scene.prior, oracle_config(window_s=10.0), sources=scene.sources_by_label())
        refreshed = decode(
            scene.mixture,
            scene.prior,
            oracle_config(window_s=10.0, recluster_rounds=1),
            sources=scene.sources_by_label(),
        )
        assert refreshed.recluster_rounds == 1
        assert refreshed.prior.speaker_ids == scene.prior.speaker_ids
        for a, b in zip(base.streams, refreshed.streams):
            assert np.array_equal(a.samples, b.samples)
