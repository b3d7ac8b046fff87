from __future__ import annotations

import logging
from dataclasses import replace

import librosa
import numpy as np
from scipy.signal import butter, sosfilt

from .errors import DcfdsError
from .estimators.separation import ground_truth_masks
from .formats.wav import read_wav
from .models import (
    ComplexSpectrogram,
    EstimatorKind,
    GlobalPrior,
    GroundTruth,
    IndexMap,
    MASK_CEILING,
    PipelineConfig,
    ScenarioSpec,
    SourceKind,
    TFMask,
    TimeMask,
    TrainingWindow,
    TranscriptSet,
    Utterance,
    Waveform,
    WindowMode,
    WindowPrior,
    Word,
)
from .pipeline import window_sources, window_spectrum
from .priors import swsp
from .signal import stft


logger = logging.getLogger(__name__)

GRID_S = 0.01
UTTERANCE_S = (1.0, 4.0)
GAP_S = (0.2, 1.5)
MIN_TAIL_S = 0.3
FADE_S = 0.02
ACTIVITY_ENERGY = 1e-10
MAX_PEAK = 0.9
MAX_OVERLAP_FRACTION = 0.9
TONES_PER_SPEAKER = 3


def speaker_label(index: int) -> str:
    return f"spk{index:02d}"


def validate_scenario(spec: ScenarioSpec) -> None:
    if spec.n_speakers < 1:
        raise DcfdsError("invalid_scenario", "n_speakers must be at least 1", {"n_speakers": spec.n_speakers})
    if spec.duration <= 0:
        raise DcfdsError("invalid_scenario", "duration must be positive", {"duration": spec.duration})
    if not 0.0 <= spec.target_overlap_ratio <= 1.0:
        raise DcfdsError("invalid_scenario", "target_overlap_ratio must lie in [0, 1]", {"ratio": spec.target_overlap_ratio})
    if spec.n_speakers == 1 and spec.target_overlap_ratio > 0:
        raise DcfdsError("infeasible_overlap", "a single speaker cannot overlap", {"ratio": spec.target_overlap_ratio})
    if spec.source_kind == SourceKind.WAV_BANK and not spec.wav_bank:
        raise DcfdsError("invalid_scenario", "wav-bank sources need at least one WAV file")


def _grid(seconds: float) -> int:
    return int(round(seconds / GRID_S))


def schedule_utterances(spec: ScenarioSpec, rng: np.random.Generator) -> list[Utterance]:
    """Greedy turn-taking on a 10 ms grid that steers the running overlap ratio toward the target.

    Below target, the next utterance starts early enough to overlap the
    previous one by the amount that would hit the target exactly; otherwise it
    follows a pause.
    """
    n_grid = _grid(spec.duration)
    counts = np.zeros(n_grid, dtype=np.int32)
    busy_until = np.zeros(spec.n_speakers, dtype=np.int64)
    ratio = spec.target_overlap_ratio
    utterances: list[tuple[int, int, int]] = []

    while True:
        length = _grid(rng.uniform(*UTTERANCE_S))
        gap = _grid(rng.uniform(*GAP_S))
        previous = utterances[-1] if utterances else None
        onset = None
        speaker = None

        if previous is not None and ratio > 0:
            speech = int(np.count_nonzero(counts))
            overlap = int(np.count_nonzero(counts >= 2))
            if overlap < ratio * speech:
                wanted = (ratio * (speech + length) - overlap) / (1.0 + ratio)
                limit = MAX_OVERLAP_FRACTION * min(length, previous[2] - previous[1])
                shift = int(round(min(max(wanted, 0.0), limit)))
                candidate = previous[2] - shift
                free = [s for s in range(spec.n_speakers) if s != previous[0] and busy_until[s] <= candidate]
                if free:
                    onset = candidate
                    speaker = int(rng.choice(free))

        if onset is None:
            onset = (previous[2] if previous is not None else 0) + gap
            choices = [s for s in range(spec.n_speakers) if previous is None or spec.n_speakers == 1 or s != previous[0]]
            speaker = int(rng.choice(choices))

        if onset >= n_grid:
            break
        offset = min(onset + length, n_grid)
        if offset - onset < _grid(MIN_TAIL_S):
            break
        utterances.append((speaker, onset, offset))
        counts[onset:offset] += 1
        busy_until[speaker] = offset
        if offset == n_grid:
            break

    return [Utterance(speaker=s, onset=on * GRID_S, offset=off * GRID_S) for s, on, off in utterances]


def overlap_ratio(utterances: list[Utterance], duration: float) -> float:
    counts = np.zeros(_grid(duration), dtype=np.int32)
    for utt in utterances:
        counts[_grid(utt.onset):_grid(utt.offset)] += 1
    speech = np.count_nonzero(counts)
    return float(np.count_nonzero(counts >= 2) / speech) if speech else 0.0


def _fade(n_samples: int, sample_rate: int) -> np.ndarray:
    envelope = np.ones(n_samples)
    ramp = min(int(round(FADE_S * sample_rate)), n_samples // 2)
    if ramp > 0:
        rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        envelope[:ramp] = rise
        envelope[n_samples - ramp:] = rise[::-1]
    return envelope


def speaker_bands(n_speakers: int, sample_rate: int) -> list[tuple[float, float]]:
    edges = librosa.mel_frequencies(n_mels=n_speakers + 1, fmin=150.0, fmax=min(7000.0, 0.45 * sample_rate))
    return [(float(edges[k]), float(edges[k + 1])) for k in range(n_speakers)]


def _multitone(n_samples: int, band: tuple[float, float], sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    tones = librosa.mel_frequencies(n_mels=TONES_PER_SPEAKER + 2, fmin=band[0], fmax=band[1])[1:-1]
    t = np.arange(n_samples) / sample_rate
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(tones))
    signal = np.sum(np.sin(2.0 * np.pi * tones[:, None] * t[None, :] + phases[:, None]), axis=0) / len(tones)
    rate = rng.uniform(3.0, 5.0)
    modulation = (1.0 + 0.5 * np.sin(2.0 * np.pi * rate * t + rng.uniform(0.0, 2.0 * np.pi))) / 1.5
    return signal * modulation


def _filtered_noise(n_samples: int, band: tuple[float, float], sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    sos = butter(4, band, btype="bandpass", fs=sample_rate, output="sos")
    signal = sosfilt(sos, rng.standard_normal(n_samples))
    rms = np.sqrt(np.mean(signal**2))
    return signal * (0.1 / rms) if rms > 0 else signal


def _bank_excerpt(bank: np.ndarray, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    start = int(rng.integers(len(bank)))
    return np.resize(np.roll(bank, -start), n_samples)


def _render_sources(spec: ScenarioSpec, utterances: list[Utterance], rng: np.random.Generator) -> list[np.ndarray]:
    sr = spec.sample_rate
    n_samples = int(round(spec.duration * sr))
    bands = speaker_bands(spec.n_speakers, sr)
    banks: list[np.ndarray] = []
    if spec.source_kind == SourceKind.WAV_BANK:
        banks = [read_wav(path, expected_rate=sr).samples for path in spec.wav_bank]

    sources = [np.zeros(n_samples) for _ in range(spec.n_speakers)]
    for utt in utterances:
        start = int(round(utt.onset * sr))
        stop = min(int(round(utt.offset * sr)), n_samples)
        length = stop - start
        if spec.source_kind == SourceKind.MULTITONE:
            piece = _multitone(length, bands[utt.speaker], sr, rng)
        elif spec.source_kind == SourceKind.FILTERED_NOISE:
            piece = _filtered_noise(length, bands[utt.speaker], sr, rng)
        else:
            piece = _bank_excerpt(banks[utt.speaker % len(banks)], length, rng)
        sources[utt.speaker][start:stop] += piece * _fade(length, sr)
    return sources


def _activity_prior(sources: list[Waveform], spec: ScenarioSpec) -> GlobalPrior:
    frame_len = int(round(spec.frame_ms * spec.sample_rate / 1000.0))
    hop = int(round(spec.hop_ms * spec.sample_rate / 1000.0))
    rows = [np.sum(np.abs(stft(source, frame_len, hop).bins) ** 2, axis=1) > ACTIVITY_ENERGY for source in sources]
    return GlobalPrior(
        activity=np.array(rows, dtype=np.uint8),
        frame_hop=hop / spec.sample_rate,
        speaker_ids=[speaker_label(k) for k in range(len(sources))],
    )


def generate(spec: ScenarioSpec) -> GroundTruth:
    """Simulate a conversation; ``mixture == sum(sources) + noise`` holds sample for sample."""
    validate_scenario(spec)
    rng = np.random.default_rng(spec.seed)
    utterances = schedule_utterances(spec, rng)
    rendered = _render_sources(spec, utterances, rng)

    clean = np.zeros_like(rendered[0])
    for source in rendered:
        clean += source
    peak = float(np.max(np.abs(clean), initial=0.0))
    if peak > MAX_PEAK:
        scale = MAX_PEAK / peak
        rendered = [source * scale for source in rendered]
        clean = np.zeros_like(rendered[0])
        for source in rendered:
            clean += source

    if spec.noise_snr is None:
        noise_raw = np.zeros_like(clean)
    else:
        noise_raw = rng.standard_normal(clean.shape[0])
        clean_power = float(np.mean(clean**2))
        noise_raw *= np.sqrt(clean_power / (10.0 ** (spec.noise_snr / 10.0)) / np.mean(noise_raw**2))
    mixture = clean + noise_raw
    noise = mixture - clean

    sr = spec.sample_rate
    sources = [Waveform(source, sr) for source in rendered]
    prior = _activity_prior(sources, spec)

    words: dict[str, list[Word]] = {speaker_label(k): [] for k in range(spec.n_speakers)}
    for index, utt in enumerate(utterances):
        label = speaker_label(utt.speaker)
        words[label].append(Word(token=f"{label}_w{index:03d}", onset=utt.onset, offset=utt.offset))

    logger.info(
        "simulated %d speaker(s), %.1f s, %d utterance(s), overlap ratio %.3f",
        spec.n_speakers,
        spec.duration,
        len(utterances),
        overlap_ratio(utterances, spec.duration),
    )
    return GroundTruth(
        mixture=Waveform(mixture, sr),
        sources=sources,
        noise=Waveform(noise, sr),
        prior=prior,
        transcripts=TranscriptSet(words),
        utterances=utterances,
        spec=spec,
    )


def _window_masks(
    mix: ComplexSpectrogram,
    source_bins: list[np.ndarray],
    window: tuple[WindowPrior, IndexMap],
    kind: EstimatorKind,
    mask_ceiling: float,
    clamp: bool,
) -> TFMask:
    wp, im = window
    for row, speaker in im.items():
        if not 0 <= speaker < len(source_bins) or not 0 <= row < wp.n_rows:
            raise DcfdsError("unmapped_speaker", "window maps a speaker the scenario does not have", {"row": row, "speaker": speaker})
    mix_window = window_spectrum(mix, wp.start_frame, wp.n_frames)
    sources = window_sources(source_bins, im, wp.start_frame, wp.n_rows, wp.n_frames)
    return TFMask(masks=ground_truth_masks(sources, mix_window.bins, kind, mask_ceiling, clamp))


def oracle_masks(
    gt: GroundTruth,
    window: tuple[WindowPrior, IndexMap],
    kind: EstimatorKind = EstimatorKind.ORACLE_MAGNITUDE_RATIO,
    frame_len: int = 1024,
    hop: int = 256,
    mask_ceiling: float = MASK_CEILING,
    clamp: bool = True,
) -> TFMask:
    mix = stft(gt.mixture, frame_len, hop)
    source_bins = [stft(source, frame_len, hop).bins for source in gt.sources]
    return _window_masks(mix, source_bins, window, kind, mask_ceiling, clamp)


def training_windows(gt: GroundTruth, cfg: PipelineConfig) -> list[TrainingWindow]:
    windowing = replace(cfg.windowing, mode=WindowMode.TRAINING)
    mix = stft(gt.mixture, cfg.frame_len, cfg.hop_len)
    source_bins = [stft(source, cfg.frame_len, cfg.hop_len).bins for source in gt.sources]
    examples: list[TrainingWindow] = []
    for wp, im in swsp(gt.prior, windowing):
        examples.append(
            TrainingWindow(
                prior=wp,
                index_map=im,
                label=TimeMask(probs=wp.activity.astype(np.float64)),
                target=_window_masks(
                    mix, source_bins, (wp, im), EstimatorKind.ORACLE_MAGNITUDE_RATIO, cfg.mask_ceiling, True
                ),
                mix=window_spectrum(mix, wp.start_frame, wp.n_frames),
            )
        )
    logger.info("prepared %d training window(s)", len(examples))
    return examples
