from __future__ import annotations

import logging
import math

import numpy as np
from pyannote.core import Annotation, Segment, Timeline
from pyannote.metrics.diarization import DiarizationErrorRate

from ..errors import DcfdsError
from ..models import DERReport, GlobalPrior


logger = logging.getLogger(__name__)

EVAL_FRAME_S = 0.01


def resample_activity(prior: GlobalPrior, frame: float, n_frames: int) -> np.ndarray:
    centres = (np.arange(n_frames) + 0.5) * frame
    source = np.floor(centres / prior.frame_hop).astype(np.int64)
    # frames past the prior's end stay silent
    inside = source < prior.n_frames
    out = np.zeros((prior.n_speakers, n_frames), dtype=bool)
    out[:, inside] = prior.activity[:, source[inside]].astype(bool)
    return out


def to_annotation(activity: np.ndarray, labels: list[str], frame: float) -> Annotation:
    annotation = Annotation()
    for row, label in zip(activity, labels):
        edges = np.diff(np.concatenate([[0], row.astype(np.int8), [0]]))
        for start, end in zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()):
            annotation[Segment(start * frame, end * frame), label] = label
    return annotation


def der(ref: GlobalPrior, hyp: GlobalPrior, frame: float = EVAL_FRAME_S) -> DERReport:
    n_frames = int(math.ceil(max(ref.duration, hyp.duration) / frame - 1e-9))
    r = resample_activity(ref, frame, n_frames)
    h = resample_activity(hyp, frame, n_frames)
    if not r.any():
        raise DcfdsError("undefined_der", "undefined DER")

    reference = to_annotation(r, ref.speaker_ids, frame)
    hypothesis = to_annotation(h, hyp.speaker_ids, frame)
    uem = Timeline([Segment(0.0, n_frames * frame)])
    metric = DiarizationErrorRate(collar=0.0, skip_overlap=False)
    components = metric(reference, hypothesis, detailed=True, uem=uem)

    rows = {label: index for index, label in enumerate(ref.speaker_ids)}
    cols = {label: index for index, label in enumerate(hyp.speaker_ids)}
    mapping = {
        ref_label: hyp_label
        for hyp_label, ref_label in metric.optimal_mapping(reference, hypothesis, uem=uem).items()
        if (r[rows[ref_label]] & h[cols[hyp_label]]).any()
    }

    total = float(components["total"])
    report = DERReport(
        der=float(components["diarization error rate"]),
        miss=float(components["missed detection"]) / total,
        false_alarm=float(components["false alarm"]) / total,
        confusion=float(components["confusion"]) / total,
        mapping=dict(sorted(mapping.items())),
        reference_speech_s=total,
    )
    logger.debug("DER %.4f (miss %.4f, fa %.4f, conf %.4f)", report.der, report.miss, report.false_alarm, report.confusion)
    return report
