from __future__ import annotations

import numpy as np
import pytest

from dcfds.models import (
    EstimatorConfig,
    EstimatorKind,
    GlobalPrior,
    PipelineConfig,
    ScenarioSpec,
    Waveform,
)
from dcfds.sim import generate


SR = 16000
FRAME_LEN = 1024
HOP = 256
FRAME_HOP_S = HOP / SR


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    monkeypatch.delenv("DCFDS_WORKERS", raising=False)
    monkeypatch.delenv("DCFDS_LOG_LEVEL", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tone(freq: float, seconds: float, sr: int = SR, amplitude: float = 0.5) -> Waveform:
    t = np.arange(int(round(seconds * sr))) / sr
    return Waveform(amplitude * np.sin(2.0 * np.pi * freq * t), sr)


def burst(freq: float, total_s: float, spans: list[tuple[float, float]], sr: int = SR) -> Waveform:
    base = tone(freq, total_s, sr).samples
    gate = np.zeros_like(base)
    for onset, offset in spans:
        gate[int(round(onset * sr)):int(round(offset * sr))] = 1.0
    return Waveform(base * gate, sr)


def make_prior(activity, frame_hop: float = FRAME_HOP_S, labels: list[str] | None = None) -> GlobalPrior:
    activity = np.asarray(activity, dtype=np.uint8)
    if labels is None:
        labels = [f"spk{k:02d}" for k in range(activity.shape[0])]
    return GlobalPrior(activity=activity, frame_hop=frame_hop, speaker_ids=labels)


def oracle_config(**overrides) -> PipelineConfig:
    """Oracle diarization and separation, no re-clustering."""
    cfg = PipelineConfig(recluster_rounds=0)
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def complex_oracle(clamp: bool = False) -> EstimatorConfig:
    return EstimatorConfig(EstimatorKind.ORACLE_COMPLEX_RATIO, clamp=clamp)


@pytest.fixture(scope="session")
def two_speaker_scene():
    return generate(ScenarioSpec(n_speakers=2, duration=8.0, target_overlap_ratio=0.0, seed=3))


@pytest.fixture(scope="session")
def three_speaker_scene():
    return generate(ScenarioSpec(n_speakers=3, duration=20.0, target_overlap_ratio=0.0, seed=5))


@pytest.fixture(scope="session")
def overlapping_scene():
    return generate(ScenarioSpec(n_speakers=3, duration=15.0, target_overlap_ratio=0.2, seed=11))
