from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.metrics.pairwise import cosine_similarity

from .errors import DcfdsError
from .estimators.external import load_external_embeddings
from .models import (
    AffinityMatrix,
    GlobalPrior,
    PipelineConfig,
    Segment,
    SegmentEmbedding,
    SeparationResult,
    Waveform,
)
from .scheduler import WindowScheduler
from .signal import compute_fbank, fbank_statistics, frame_count, magnitude, stft


logger = logging.getLogger(__name__)

ENERGY_FLOOR = 1e-10
AFFINITY_THRESHOLD = 0.5


def _active_runs(active: np.ndarray) -> list[tuple[int, int]]:
    edges = np.diff(np.concatenate([[0], active.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def _stream_segments(
    stream: Waveform,
    index: int,
    vad_threshold_db: float,
    min_segment_s: float,
    min_gap_s: float,
    frame_len: int,
    hop: int,
) -> list[Segment]:
    spec = stft(stream, frame_len, hop)
    energy = np.sum(np.abs(spec.bins) ** 2, axis=1)
    peak = float(energy.max(initial=0.0))
    if peak <= ENERGY_FLOOR:
        return []
    threshold = max(peak * 10.0 ** (-vad_threshold_db / 10.0), ENERGY_FLOOR)

    frame_hop = hop / stream.sample_rate
    spans: list[list[float]] = []
    for start, end in _active_runs(energy > threshold):
        onset, offset = start * frame_hop, min(end * frame_hop, stream.duration)
        if spans and onset - spans[-1][1] < min_gap_s:
            spans[-1][1] = offset
        else:
            spans.append([onset, offset])
    return [Segment(stream=index, onset=onset, offset=offset) for onset, offset in spans if offset - onset >= min_segment_s]


def segment_streams(
    r: SeparationResult,
    vad_threshold_db: float = 30.0,
    min_segment_s: float = 0.2,
    min_gap_s: float = 0.1,
    frame_len: int = 1024,
    hop: int = 256,
) -> list[list[Segment]]:
    if vad_threshold_db <= 0:
        raise DcfdsError("invalid_threshold", "VAD threshold must be positive", {"vad_threshold_db": vad_threshold_db})
    return [
        _stream_segments(stream, index, vad_threshold_db, min_segment_s, min_gap_s, frame_len, hop)
        for index, stream in enumerate(r.streams)
    ]


def embed_segment(
    w: Waveform,
    stream: int = 0,
    onset: float = 0.0,
    frame_len: int = 1024,
    hop: int = 256,
    n_mels: int = 40,
    min_segment_s: float = 0.2,
) -> SegmentEmbedding:
    if w.duration + 1e-9 < min_segment_s:
        raise DcfdsError(
            "segment_too_short",
            "segment is shorter than the minimum duration",
            {"duration": w.duration, "min_segment_s": min_segment_s},
        )
    feats = compute_fbank(magnitude(stft(w, frame_len, hop)), n_mels)
    return SegmentEmbedding(vector=fbank_statistics(feats.feats), stream=stream, onset=onset, offset=onset + w.duration)


def affinity_matrix(vectors: np.ndarray) -> AffinityMatrix:
    values = cosine_similarity(np.asarray(vectors, dtype=np.float64))
    values = (values + values.T) / 2.0
    np.fill_diagonal(values, 1.0)
    return AffinityMatrix(values=np.clip(values, -1.0, 1.0))


def _farthest_point_centers(points: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(points.shape[0]))]
    nearest = np.linalg.norm(points - points[chosen[0]], axis=1)
    while len(chosen) < k:
        candidate = int(np.argmax(nearest))
        chosen.append(candidate)
        nearest = np.minimum(nearest, np.linalg.norm(points - points[candidate], axis=1))
    return points[chosen]


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    order: dict[int, int] = {}
    for label in labels.tolist():
        order.setdefault(label, len(order))
    return np.array([order[label] for label in labels.tolist()], dtype=np.int64)


def spectral_cluster(
    embs: Sequence[SegmentEmbedding] | np.ndarray,
    k: int | None = None,
    max_speakers: int = 8,
    seed: int = 0,
    threshold: float = AFFINITY_THRESHOLD,
) -> np.ndarray:
    """Cluster unit-norm embeddings; labels are numbered by first occurrence.

    Affinities below ``threshold`` are pruned to zero. When every point may be its own
    speaker, a sentinel eigenvalue of 1 closes the eigengap search so k = n stays reachable.
    """
    if isinstance(embs, np.ndarray):
        vectors = np.asarray(embs, dtype=np.float64)
    else:
        vectors = np.stack([emb.vector for emb in embs]) if len(embs) else np.zeros((0, 0))
    n_points = vectors.shape[0]
    if n_points == 0:
        raise DcfdsError("no_embeddings", "spectral clustering needs at least one embedding")
    if k is not None and not 1 <= k <= n_points:
        raise DcfdsError("too_many_clusters", "cluster count must lie in [1, number of points]", {"k": k, "points": n_points})
    if n_points == 1:
        return np.zeros(1, dtype=np.int64)

    weights = affinity_matrix(vectors).values.copy()
    weights[weights < threshold] = 0.0
    degree = weights.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    laplacian = np.eye(n_points) - inv_sqrt[:, None] * weights * inv_sqrt[None, :]
    eigenvalues, eigenvectors = eigh(laplacian)

    if k is None:
        limit = min(max_speakers, n_points)
        candidates = eigenvalues[: limit + 1]
        if limit == n_points:
            candidates = np.append(candidates, 1.0)
        gaps = np.diff(candidates)
        k = int(np.argmax(gaps)) + 1 if gaps.size else 1
        logger.debug("eigengap selected k=%d from %d point(s)", k, n_points)
    if k == 1:
        return np.zeros(n_points, dtype=np.int64)
    if k == n_points:
        return np.arange(n_points, dtype=np.int64)

    spectral = eigenvectors[:, :k]
    norms = np.linalg.norm(spectral, axis=1, keepdims=True)
    spectral = np.divide(spectral, norms, out=np.zeros_like(spectral), where=norms > 0)
    kmeans = KMeans(
        n_clusters=k,
        init=_farthest_point_centers(spectral, k, seed),
        n_init=1,
        max_iter=100,
        tol=1e-6,
        random_state=seed,
    )
    return _canonical_labels(kmeans.fit_predict(spectral))


def _embed_job(job: tuple[Waveform, Segment, PipelineConfig]) -> SegmentEmbedding:
    stream, segment, cfg = job
    return embed_segment(
        stream.slice(segment.onset, segment.offset),
        stream=segment.stream,
        onset=segment.onset,
        frame_len=cfg.frame_len,
        hop=cfg.hop_len,
        n_mels=cfg.n_mels,
        min_segment_s=min(cfg.recluster.min_segment_s, segment.duration),
    )


def recluster(r: SeparationResult, cfg: PipelineConfig) -> GlobalPrior:
    rc = cfg.recluster
    if rc.embeddings_manifest:
        loaded = load_external_embeddings(rc.embeddings_manifest)
        segments = [segment for segment, _ in loaded]
        vectors = np.stack([vector for _, vector in loaded])
    else:
        segments = [
            segment
            for stream_segments in segment_streams(
                r, rc.vad_threshold_db, rc.min_segment_s, rc.min_gap_s, cfg.frame_len, cfg.hop_len
            )
            for segment in stream_segments
        ]
        jobs = [(r.streams[segment.stream], segment, cfg) for segment in segments]
        embeddings = WindowScheduler(cfg.workers).run_sync(jobs, _embed_job)
        vectors = np.stack([emb.vector for emb in embeddings]) if embeddings else np.zeros((0, 0))

    if not segments:
        raise DcfdsError("no_speech", "no speech detected")
    labels = spectral_cluster(vectors, max_speakers=rc.max_speakers, seed=rc.seed, threshold=rc.affinity_threshold)

    frame_hop = cfg.frame_hop_s
    if r.masks is not None:
        n_frames = int(r.masks.coverage.shape[1])
    else:
        n_frames = frame_count(len(r.streams[0]), cfg.hop_len)
    activity = np.zeros((int(labels.max()) + 1, n_frames), dtype=np.uint8)
    for segment, label in zip(segments, labels.tolist()):
        start = int(round(segment.onset / frame_hop))
        end = int(round(segment.offset / frame_hop))
        activity[label, start:min(end, n_frames)] = 1

    logger.info("re-clustered %d segment(s) into %d speaker(s)", len(segments), activity.shape[0])
    return GlobalPrior(
        activity=activity,
        frame_hop=frame_hop,
        speaker_ids=[f"spk{index:02d}" for index in range(activity.shape[0])],
    )


def align_prior(new: GlobalPrior, reference: GlobalPrior) -> GlobalPrior:
    frames = min(new.n_frames, reference.n_frames)
    overlap = new.activity[:, :frames].astype(np.int64) @ reference.activity[:, :frames].T.astype(np.int64)
    rows, cols = linear_sum_assignment(overlap, maximize=True)

    labels: dict[int, str] = {
        int(row): reference.speaker_ids[col] for row, col in zip(rows, cols) if overlap[row, col] > 0
    }
    taken = set(reference.speaker_ids)
    fresh = 0
    for row in range(new.n_speakers):
        if row in labels:
            continue
        while f"spk{fresh:02d}" in taken:
            fresh += 1
        labels[row] = f"spk{fresh:02d}"
        taken.add(labels[row])

    rank = {label: index for index, label in enumerate(reference.speaker_ids)}
    order = sorted(range(new.n_speakers), key=lambda row: (rank.get(labels[row], len(rank)), labels[row]))
    return GlobalPrior(
        activity=new.activity[order],
        frame_hop=new.frame_hop,
        speaker_ids=[labels[row] for row in order],
    )
