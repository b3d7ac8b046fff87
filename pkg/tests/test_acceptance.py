"""End-to-end properties of the decode chain on simulated conversations."""

import numpy as np
import pytest

from dcfds.estimators.losses import mae_loss
from dcfds.metrics.der import der
from dcfds.metrics.sdr import si_sdr
from dcfds.models import EstimatorConfig, EstimatorKind, ScenarioSpec
from dcfds.pipeline import decode
from dcfds.recluster import align_prior, recluster
from dcfds.signal import apply_mask, stft
from dcfds.sim import generate

from conftest import FRAME_LEN, HOP, complex_oracle, oracle_config


def _si_sdrs(result, scene) -> list[float]:
    clean = scene.sources_by_label()
    return [si_sdr(stream, clean[label]) for stream, label in zip(result.streams, result.prior.speaker_ids)]


@pytest.fixture(scope="module")
def meeting():
    return generate(ScenarioSpec(n_speakers=4, duration=60.0, target_overlap_ratio=0.2, seed=8))


class TestOracleExactness:
    @pytest.fixture(scope="class")
    def result(self, meeting):
        cfg = oracle_config(window_s=12.8, window_hop_s=12.8, n_w=4, separator=complex_oracle(clamp=False))
        return decode(meeting.mixture, meeting.prior, cfg, sources=meeting.sources_by_label())

    def test_long_windows_are_used(self, result):
        assert [wp.start_frame for wp, _ in result.windows] == [0, 800, 1600, 2400, 3200]
        assert all(wp.n_frames == 800 for wp, _ in result.windows)

    def test_streams_match_clean_sources(self, result, meeting):
        assert all(value > 40.0 for value in _si_sdrs(result, meeting))

    def test_masked_spectra_sum_to_mixture(self, result, meeting):
        spec = stft(meeting.mixture, FRAME_LEN, HOP)
        total = sum(apply_mask(result.masks.masks[k], spec).bins for k in range(result.masks.n_speakers))
        assert np.linalg.norm(total - spec.bins) <= 1e-9 * np.linalg.norm(spec.bins)


class TestWorkerIndependence:
    def test_bit_identical_across_worker_counts(self, overlapping_scene):
        scene = overlapping_scene
        cfg = oracle_config()
        results = [decode(scene.mixture, scene.prior, cfg, sources=scene.sources_by_label(), workers=w) for w in (1, 2, 8)]
        first = results[0]
        for other in results[1:]:
            assert np.array_equal(first.masks.masks, other.masks.masks)
            assert np.array_equal(first.masks.coverage, other.masks.coverage)
            for a, b in zip(first.streams, other.streams):
                assert np.array_equal(a.samples, b.samples)


class TestReclusterRecovery:
    @pytest.fixture(scope="class")
    def separated(self, three_speaker_scene):
        scene = three_speaker_scene
        return decode(scene.mixture, scene.prior, oracle_config(), sources=scene.sources_by_label())

    def test_recovers_reference_speakers(self, separated, three_speaker_scene):
        refreshed = recluster(separated, oracle_config())
        assert refreshed.n_speakers == 3
        report = der(three_speaker_scene.prior, refreshed)
        assert report.confusion == pytest.approx(0.0, abs=1e-9)
        assert report.der < 0.05

    def test_refresh_is_a_fixed_point(self, separated, three_speaker_scene):
        scene = three_speaker_scene
        cfg = oracle_config()
        first = align_prior(recluster(separated, cfg), scene.prior)
        again = decode(scene.mixture, first, cfg, sources=scene.sources_by_label())
        second = recluster(again, cfg)
        report = der(first, second)
        assert report.confusion == pytest.approx(0.0, abs=1e-9)
        assert report.der < 0.01


class TestPriorDegradation:
    RATES = (0.0, 0.05, 0.15)
    SEEDS = range(5)

    def test_si_sdr_does_not_improve_with_worse_priors(self, two_speaker_scene):
        scene = two_speaker_scene
        means = []
        for rate in self.RATES:
            values = []
            for seed in self.SEEDS:
                cfg = oracle_config(
                    diarizer=EstimatorConfig(EstimatorKind.NOISY_ORACLE, flip_rate=rate, seed=seed),
                    separator=EstimatorConfig(EstimatorKind.ORACLE_MAGNITUDE_RATIO, gate_with_time_mask=True),
                )
                result = decode(scene.mixture, scene.prior, cfg, sources=scene.sources_by_label())
                values.extend(_si_sdrs(result, scene))
            means.append(float(np.mean(values)))
        assert means[0] >= means[1] >= means[2]
        assert means[0] > means[2]


class TestEnhancementStages:
    def test_identity_stage_changes_nothing(self, overlapping_scene):
        scene = overlapping_scene
        sources = scene.sources_by_label()
        plain = decode(scene.mixture, scene.prior, oracle_config(se_stages=0), sources=sources)
        staged = decode(scene.mixture, scene.prior, oracle_config(se_stages=1), sources=sources)
        assert np.array_equal(plain.masks.masks, staged.masks.masks)
        for a, b in zip(plain.streams, staged.streams):
            assert np.array_equal(a.samples, b.samples)

    def test_oracle_stage_repairs_corrupted_masks(self, overlapping_scene):
        scene = overlapping_scene
        sources = scene.sources_by_label()
        noisy = EstimatorConfig(EstimatorKind.NOISY_ORACLE, flip_rate=0.3, seed=2)
        truth = decode(scene.mixture, scene.prior, oracle_config(), sources=sources).masks.masks
        corrupted = decode(scene.mixture, scene.prior, oracle_config(separator=noisy), sources=sources).masks.masks
        repaired = decode(
            scene.mixture,
            scene.prior,
            oracle_config(separator=noisy, se_stages=1, enhancer=EstimatorConfig(EstimatorKind.ORACLE_MAGNITUDE_RATIO)),
            sources=sources,
        ).masks.masks

        before, _ = mae_loss(corrupted, truth)
        after, _ = mae_loss(repaired, truth)
        assert before > 0.0
        assert after < before
        assert after == pytest.approx(0.0, abs=1e-12)
