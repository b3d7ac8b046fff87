from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .errors import DcfdsError, ShapeError


DEFAULT_SAMPLE_RATE = 16000
MASK_CEILING = 2.0


class WindowMode(str, Enum):
    TRAINING = "training"
    DECODING = "decoding"


class EstimatorKind(str, Enum):
    ORACLE_BINARY = "oracle-binary"
    ORACLE_MAGNITUDE_RATIO = "oracle-magnitude-ratio"
    ORACLE_COMPLEX_RATIO = "oracle-complex-ratio"
    NOISY_ORACLE = "noisy-oracle"
    EXTERNAL_FILE = "external-file"
    IDENTITY = "identity"


ORACLE_KINDS = frozenset(
    {
        EstimatorKind.ORACLE_BINARY,
        EstimatorKind.ORACLE_MAGNITUDE_RATIO,
        EstimatorKind.ORACLE_COMPLEX_RATIO,
        EstimatorKind.NOISY_ORACLE,
    }
)


class OverlapMerge(str, Enum):
    AVERAGE = "average"
    FIRST_WINS = "first-wins"


class SourceKind(str, Enum):
    MULTITONE = "multitone"
    FILTERED_NOISE = "filtered-noise"
    WAV_BANK = "wav-bank"


def seconds_to_frames(seconds: float, frame_hop: float) -> int:
    """Round-half-up conversion that tolerates binary representation error (3 s at 16 ms is 188)."""
    return int(math.floor(seconds / frame_hop + 0.5 + 1e-9))


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError("not_mono", "waveform must be one-dimensional", {"shape": self.samples.shape})
        if self.sample_rate <= 0:
            raise DcfdsError("invalid_sample_rate", "sample_rate must be positive", {"sample_rate": self.sample_rate})
        if not np.all(np.isfinite(self.samples)):
            raise DcfdsError("non_finite_input", "non-finite samples in waveform")

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def slice(self, onset: float, offset: float) -> Waveform:
        start = max(0, int(round(onset * self.sample_rate)))
        stop = min(len(self), int(round(offset * self.sample_rate)))
        return Waveform(self.samples[start:max(start, stop)], self.sample_rate)


@dataclass(slots=True)
class ComplexSpectrogram:
    bins: np.ndarray
    frame_len: int
    hop: int
    window_fn: str = "hann"
    sample_rate: int = DEFAULT_SAMPLE_RATE
    n_samples: int | None = None

    def __post_init__(self) -> None:
        self.bins = np.asarray(self.bins)
        if self.bins.ndim != 2 or self.bins.shape[1] != self.frame_len // 2 + 1:
            raise ShapeError(
                "inconsistent_metadata",
                "spectrogram bins must be frames x (frame_len/2 + 1)",
                {"shape": self.bins.shape, "frame_len": self.frame_len},
            )

    @property
    def n_frames(self) -> int:
        return int(self.bins.shape[0])

    @property
    def n_bins(self) -> int:
        return int(self.bins.shape[1])


@dataclass(slots=True)
class MagnitudeSpectrogram:
    mags: np.ndarray
    frame_len: int
    hop: int
    window_fn: str = "hann"
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        self.mags = np.asarray(self.mags, dtype=np.float64)
        if self.mags.ndim != 2:
            raise ShapeError("inconsistent_metadata", "magnitudes must be frames x bins", {"shape": self.mags.shape})
        if np.any(self.mags < 0):
            raise DcfdsError("negative_magnitude", "magnitudes must be nonnegative")


@dataclass(slots=True)
class FeatureMatrix:
    feats: np.ndarray

    @property
    def n_mels(self) -> int:
        return int(self.feats.shape[1])


# ---------------------------------------------------------------------------
# Priors and windows
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class GlobalPrior:
    activity: np.ndarray
    frame_hop: float
    speaker_ids: list[str]

    def __post_init__(self) -> None:
        self.activity = np.asarray(self.activity, dtype=np.uint8)
        if self.activity.ndim != 2 or self.activity.shape[0] < 1 or self.activity.shape[1] < 1:
            raise ShapeError("invalid_prior", "prior must have at least one speaker and one frame", {"shape": self.activity.shape})
        if np.any(self.activity > 1):
            raise DcfdsError("invalid_prior", "prior entries must be 0 or 1")
        if len(self.speaker_ids) != self.activity.shape[0]:
            raise ShapeError(
                "invalid_prior",
                "speaker_ids must name every prior row",
                {"rows": self.activity.shape[0], "speaker_ids": len(self.speaker_ids)},
            )
        if len(set(self.speaker_ids)) != len(self.speaker_ids):
            raise DcfdsError("invalid_prior", "speaker_ids must be unique", {"speaker_ids": list(self.speaker_ids)})
        if self.frame_hop <= 0:
            raise DcfdsError("invalid_prior", "frame_hop must be positive", {"frame_hop": self.frame_hop})

    @property
    def n_speakers(self) -> int:
        return int(self.activity.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.activity.shape[1])

    @property
    def duration(self) -> float:
        return self.n_frames * self.frame_hop


@dataclass(slots=True)
class WindowPrior:
    activity: np.ndarray
    start_frame: int
    window_id: int
    valid_frames: int | None = None

    def __post_init__(self) -> None:
        self.activity = np.asarray(self.activity, dtype=np.uint8)
        if self.valid_frames is None:
            self.valid_frames = int(self.activity.shape[1])

    @property
    def n_rows(self) -> int:
        return int(self.activity.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.activity.shape[1])

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.activity.any(axis=1)))


@dataclass(slots=True)
class IndexMap:
    pairs: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.pairs = {int(n_w): int(n_g) for n_w, n_g in self.pairs.items()}
        if len(set(self.pairs.values())) != len(self.pairs):
            raise DcfdsError("map_not_injective", "window index map must be injective", {"pairs": self.pairs})

    def __len__(self) -> int:
        return len(self.pairs)

    def items(self) -> list[tuple[int, int]]:
        return sorted(self.pairs.items())

    def global_index(self, n_w: int) -> int | None:
        return self.pairs.get(n_w)


@dataclass(slots=True)
class WindowingConfig:
    window_len: int
    hop: int
    n_w: int
    mode: WindowMode = WindowMode.DECODING

    def __post_init__(self) -> None:
        if not 0 < self.hop <= self.window_len:
            raise DcfdsError(
                "invalid_windowing",
                "window hop must satisfy 0 < hop <= window_len",
                {"hop": self.hop, "window_len": self.window_len},
            )
        if self.n_w < 1:
            raise DcfdsError("invalid_windowing", "n_w must be at least 1", {"n_w": self.n_w})


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class TimeMask:
    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ShapeError("invalid_time_mask", "time mask must be speakers x frames", {"shape": probs.shape})
        if not np.all(np.isfinite(probs)):
            raise DcfdsError("non_finite_mask", "time mask entries must be finite")
        self.probs = np.clip(probs, 0.0, 1.0)


@dataclass(slots=True)
class TFMask:
    # Complex only for the unclamped complex-ratio oracle.
    masks: np.ndarray

    def __post_init__(self) -> None:
        self.masks = np.asarray(self.masks)
        if self.masks.ndim != 3:
            raise ShapeError("invalid_tf_mask", "T-F mask must be speakers x frames x bins", {"shape": self.masks.shape})
        if not np.iscomplexobj(self.masks) and np.any(self.masks < 0):
            raise DcfdsError("negative_mask", "T-F mask entries must be nonnegative")


@dataclass(slots=True)
class EmbeddingSet:
    vectors: np.ndarray


@dataclass(slots=True)
class EstimatorConfig:
    kind: EstimatorKind
    flip_rate: float = 0.0
    blur_sigma: float = 0.0
    path: str | None = None
    seed: int = 0
    gate_with_time_mask: bool = False
    clamp: bool = True
    mask_ceiling: float = MASK_CEILING


@dataclass(slots=True)
class TrainingWindow:
    prior: WindowPrior
    index_map: IndexMap
    label: TimeMask
    target: TFMask
    mix: ComplexSpectrogram


@dataclass(slots=True)
class LossReport:
    bce: float
    mae: float
    overall: float
    se_mae: float | None = None


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class ReclusterConfig:
    vad_threshold_db: float = 30.0
    min_segment_s: float = 0.2
    min_gap_s: float = 0.1
    max_speakers: int = 8
    affinity_threshold: float = 0.5
    seed: int = 0
    embeddings_manifest: str | None = None


@dataclass(slots=True)
class PipelineConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_ms: float = 64.0
    hop_ms: float = 16.0
    n_mels: int = 40
    window_s: float = 3.0
    window_hop_s: float | None = None
    n_w: int = 3
    mode: WindowMode = WindowMode.DECODING
    se_stages: int = 0
    recluster_rounds: int = 1
    overlap_merge: OverlapMerge = OverlapMerge.AVERAGE
    mask_ceiling: float = MASK_CEILING
    workers: int = 1
    log_level: str = "INFO"
    diarizer: EstimatorConfig = field(default_factory=lambda: EstimatorConfig(EstimatorKind.ORACLE_BINARY))
    separator: EstimatorConfig = field(default_factory=lambda: EstimatorConfig(EstimatorKind.ORACLE_MAGNITUDE_RATIO))
    enhancer: EstimatorConfig = field(default_factory=lambda: EstimatorConfig(EstimatorKind.IDENTITY))
    recluster: ReclusterConfig = field(default_factory=ReclusterConfig)

    @property
    def frame_len(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000.0))

    @property
    def hop_len(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    @property
    def frame_hop_s(self) -> float:
        return self.hop_len / self.sample_rate

    @property
    def windowing(self) -> WindowingConfig:
        window_len = seconds_to_frames(self.window_s, self.frame_hop_s)
        if self.window_hop_s is None:
            hop = max(1, window_len // 2)
        else:
            hop = seconds_to_frames(self.window_hop_s, self.frame_hop_s)
        return WindowingConfig(window_len=window_len, hop=hop, n_w=self.n_w, mode=self.mode)


@dataclass(slots=True)
class GlobalTFMask:
    masks: np.ndarray
    coverage: np.ndarray

    @property
    def n_speakers(self) -> int:
        return int(self.masks.shape[0])


@dataclass(slots=True)
class SeparationResult:
    streams: list[Waveform]
    masks: GlobalTFMask | None = None
    prior: GlobalPrior | None = None
    windows: list[tuple[WindowPrior, IndexMap]] = field(default_factory=list)
    recluster_rounds: int = 0


# ---------------------------------------------------------------------------
# Re-clustering
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class Segment:
    stream: int
    onset: float
    offset: float

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass(slots=True)
class SegmentEmbedding:
    vector: np.ndarray
    stream: int
    onset: float
    offset: float

    def __post_init__(self) -> None:
        if self.offset <= self.onset:
            raise DcfdsError("invalid_segment", "segment offset must exceed onset", {"onset": self.onset, "offset": self.offset})


@dataclass(slots=True)
class AffinityMatrix:
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ShapeError("invalid_affinity", "affinity matrix must be square", {"shape": values.shape})
        self.values = values


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class Word:
    token: str
    onset: float | None = None
    offset: float | None = None

    @property
    def center(self) -> float | None:
        if self.onset is None or self.offset is None:
            return None
        return 0.5 * (self.onset + self.offset)


@dataclass(slots=True)
class TranscriptSet:
    words: dict[str, list[Word]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ordered: dict[str, list[Word]] = {}
        for speaker, words in self.words.items():
            for word in words:
                if word.onset is not None and word.offset is not None and word.offset < word.onset:
                    raise DcfdsError(
                        "invalid_word",
                        "word offset precedes onset",
                        {"speaker": speaker, "token": word.token},
                    )
            if all(word.onset is not None for word in words):
                words = sorted(words, key=lambda item: item.onset)
            ordered[str(speaker)] = list(words)
        self.words = ordered

    @property
    def speakers(self) -> list[str]:
        return list(self.words)

    @property
    def word_count(self) -> int:
        return sum(len(words) for words in self.words.values())


@dataclass(slots=True)
class DERReport:
    der: float
    miss: float
    false_alarm: float
    confusion: float
    mapping: dict[str, str]
    reference_speech_s: float = 0.0


@dataclass(slots=True)
class WERReport:
    error_rate: float
    substitutions: int
    deletions: int
    insertions: int
    reference_words: int
    permutation: dict[str, str | None]


# ---------------------------------------------------------------------------
# Simulation and run bookkeeping
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class ScenarioSpec:
    n_speakers: int
    duration: float
    target_overlap_ratio: float = 0.0
    noise_snr: float | None = None
    seed: int = 0
    source_kind: SourceKind = SourceKind.MULTITONE
    wav_bank: list[str] = field(default_factory=list)
    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_ms: float = 64.0
    hop_ms: float = 16.0


@dataclass(slots=True)
class Utterance:
    speaker: int
    onset: float
    offset: float


@dataclass(slots=True)
class GroundTruth:
    mixture: Waveform
    sources: list[Waveform]
    noise: Waveform
    prior: GlobalPrior
    transcripts: TranscriptSet
    utterances: list[Utterance]
    spec: ScenarioSpec

    def sources_by_label(self) -> dict[str, Waveform]:
        return dict(zip(self.prior.speaker_ids, self.sources))


@dataclass(slots=True)
class RunManifest:
    tool_version: str
    command: str
    config_hash: str | None
    input_digests: dict[str, str]
    output_digests: dict[str, str]
    parameters: dict[str, Any]
    started_at: str
    elapsed_s: float
