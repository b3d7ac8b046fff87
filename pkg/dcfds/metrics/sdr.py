from __future__ import annotations

import numpy as np

from ..errors import DcfdsError, ShapeError
from ..models import Waveform


SI_SDR_CAP_DB = 100.0


def si_sdr(est: Waveform, ref: Waveform) -> float:
    if len(est) != len(ref):
        raise ShapeError("length_mismatch", "estimate and reference lengths differ", {"est": len(est), "ref": len(ref)})
    reference = ref.samples - ref.samples.mean()
    estimate = est.samples - est.samples.mean()
    ref_energy = float(np.dot(reference, reference))
    if ref_energy == 0.0:
        raise DcfdsError("silent_reference", "reference signal is silent")

    if not np.any(estimate):
        return -SI_SDR_CAP_DB

    target = (float(np.dot(estimate, reference)) / ref_energy) * reference
    residual = estimate - target
    target_energy = float(np.dot(target, target))
    residual_energy = float(np.dot(residual, residual))
    if residual_energy == 0.0:
        return SI_SDR_CAP_DB
    if target_energy == 0.0:
        return -SI_SDR_CAP_DB
    value = 10.0 * np.log10(target_energy / residual_energy)
    return float(np.clip(value, -SI_SDR_CAP_DB, SI_SDR_CAP_DB))
