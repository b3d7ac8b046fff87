"""Tests for windowing the global prior and scattering windows back."""

import logging

import numpy as np
import pytest

from dcfds.errors import DcfdsError, ShapeError
from dcfds.models import IndexMap, WindowingConfig, WindowMode, WindowPrior
from dcfds.priors import invert_window, swsp, window_starts

from conftest import make_prior


def _runs_prior(durations: list[int], n_frames: int):
    activity = np.zeros((len(durations), n_frames), dtype=np.uint8)
    for row, d in enumerate(durations):
        activity[row, :d] = 1
    return make_prior(activity)


def block_prior(rng: np.random.Generator, n_speakers: int, n_blocks: int, hop: int, n_w: int):
    """Random prior whose every two consecutive hop blocks hold at most ``n_w`` active speakers."""
    per_block = max(1, n_w // 2)
    activity = np.zeros((n_speakers, n_blocks * hop), dtype=np.uint8)
    for block in range(n_blocks):
        chosen = rng.choice(n_speakers, size=rng.integers(0, per_block + 1), replace=False)
        for speaker in chosen:
            activity[speaker, block * hop:(block + 1) * hop] = rng.random(hop) < 0.6
    return make_prior(activity)


class TestWindowStarts:
    def test_short_recording_gets_one_window(self):
        assert window_starts(50, 100, 50) == [0]
        assert window_starts(100, 100, 50) == [0]

    def test_covers_the_tail(self):
        assert window_starts(10, 4, 2) == [0, 2, 4, 6]
        assert window_starts(11, 4, 2) == [0, 2, 4, 6, 8]


class TestWindowingConfig:
    def test_zero_speakers_rejected(self):
        with pytest.raises(DcfdsError, match="n_w"):
            WindowingConfig(window_len=10, hop=5, n_w=0)

    def test_hop_longer_than_window_rejected(self):
        with pytest.raises(DcfdsError, match="hop"):
            WindowingConfig(window_len=10, hop=11, n_w=2)


class TestSwsp:
    def test_compacts_active_speakers(self):
        activity = np.zeros((5, 20), dtype=np.uint8)
        activity[1, 2:8] = 1
        activity[3, 5:15] = 1
        [(w, m)] = swsp(make_prior(activity), WindowingConfig(window_len=20, hop=20, n_w=3))
        assert m.items() == [(0, 1), (1, 3)]
        assert np.array_equal(w.activity[0], activity[1])
        assert np.array_equal(w.activity[1], activity[3])
        assert not w.activity[2].any()

    def test_empty_window(self):
        activity = np.zeros((2, 40), dtype=np.uint8)
        activity[0, :10] = 1
        windows = swsp(make_prior(activity), WindowingConfig(window_len=20, hop=20, n_w=2))
        w, m = windows[1]
        assert len(m) == 0
        assert not w.activity.any()
        assert w.window_id == 1 and w.start_frame == 20

    def test_last_window_is_padded(self):
        activity = np.ones((1, 30), dtype=np.uint8)
        windows = swsp(make_prior(activity), WindowingConfig(window_len=20, hop=20, n_w=1))
        w, _ = windows[-1]
        assert w.n_frames == 20
        assert w.valid_frames == 10
        assert w.activity[0, :10].all() and not w.activity[0, 10:].any()

    def test_overflow_keeps_longest_speakers(self, caplog):
        prior = _runs_prior([40, 100, 20, 80, 60], 100)
        with caplog.at_level(logging.WARNING, logger="dcfds.priors"):
            [(w, m)] = swsp(prior, WindowingConfig(window_len=100, hop=100, n_w=4))
        assert m.items() == [(0, 0), (1, 1), (2, 3), (3, 4)]
        assert w.n_active == 4
        assert "spk02" in caplog.text

    def test_overflow_ties_prefer_lower_index(self):
        prior = _runs_prior([50] * 5, 100)
        [(_, m)] = swsp(prior, WindowingConfig(window_len=100, hop=100, n_w=4))
        assert [g for _, g in m.items()] == [0, 1, 2, 3]

    def test_training_discards_overflow_but_keeps_numbering(self):
        activity = np.zeros((3, 200), dtype=np.uint8)
        activity[:, :100] = 1
        activity[0, 100:] = 1
        windows = swsp(make_prior(activity), WindowingConfig(window_len=100, hop=100, n_w=2, mode=WindowMode.TRAINING))
        assert [w.window_id for w, _ in windows] == [1]

    def test_never_exceeds_n_w(self, rng):
        prior = make_prior((rng.random((8, 500)) < 0.5).astype(np.uint8))
        for w, m in swsp(prior, WindowingConfig(window_len=100, hop=50, n_w=3)):
            assert w.n_rows == 3
            assert len(m) <= 3
            assert w.n_active <= 3

    def test_deterministic(self, rng):
        prior = make_prior((rng.random((6, 300)) < 0.3).astype(np.uint8))
        cfg = WindowingConfig(window_len=60, hop=30, n_w=2)
        first = swsp(prior, cfg)
        second = swsp(prior, cfg)
        assert len(first) == len(second)
        for (w1, m1), (w2, m2) in zip(first, second):
            assert np.array_equal(w1.activity, w2.activity)
            assert m1 == m2


class TestInvertWindow:
    def test_scatters_rows(self):
        w = WindowPrior(activity=np.array([[1, 1, 0, 0], [0, 1, 1, 0]]), start_frame=2, window_id=0)
        fragment = invert_window(w, IndexMap({0: 2, 1: 0}), (3, 8))
        expected = np.zeros((3, 8), dtype=np.uint8)
        expected[2, 2:6] = [1, 1, 0, 0]
        expected[0, 2:6] = [0, 1, 1, 0]
        assert np.array_equal(fragment, expected)

    def test_clips_past_recording_end(self):
        w = WindowPrior(activity=np.ones((1, 4)), start_frame=6, window_id=0)
        fragment = invert_window(w, IndexMap({0: 0}), (1, 8))
        assert fragment[0, 6:].tolist() == [1, 1]

    def test_row_out_of_range(self):
        w = WindowPrior(activity=np.ones((2, 4)), start_frame=0, window_id=0)
        with pytest.raises(ShapeError, match="outside"):
            invert_window(w, IndexMap({2: 0}), (3, 4))

    def test_speaker_out_of_range(self):
        w = WindowPrior(activity=np.ones((2, 4)), start_frame=0, window_id=0)
        with pytest.raises(ShapeError, match="outside"):
            invert_window(w, IndexMap({0: 3}), (3, 4))

    def test_non_injective_map_rejected(self):
        with pytest.raises(DcfdsError, match="injective"):
            IndexMap({0: 1, 1: 1})


class TestRoundTrip:
    @pytest.mark.parametrize("seed", range(200))
    def test_random_priors_survive_windowing(self, seed):
        rng = np.random.default_rng(seed)
        n_w = int(rng.integers(2, 5))
        hop = int(rng.integers(5, 20))
        n_speakers = int(rng.integers(1, 9))
        prior = block_prior(rng, n_speakers, int(rng.integers(1, 12)), hop, n_w)
        cfg = WindowingConfig(window_len=2 * hop, hop=hop, n_w=n_w)
        shape = prior.activity.shape

        for w, m in swsp(prior, cfg):
            fragment = invert_window(w, m, shape)
            span = slice(w.start_frame, w.start_frame + w.valid_frames)
            assert np.array_equal(fragment[:, span], prior.activity[:, span])
            outside = np.ones(shape[1], dtype=bool)
            outside[span] = False
            assert not fragment[:, outside].any()
