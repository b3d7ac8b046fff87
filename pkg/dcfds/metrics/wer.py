from __future__ import annotations

import logging
import math
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import DcfdsError
from ..models import TranscriptSet, Word, WERReport


logger = logging.getLogger(__name__)

EXHAUSTIVE_MAX_SPEAKERS = 8
SOLVERS = ("auto", "exhaustive", "assignment")


def edit_counts(
    ref: list[Word],
    hyp: list[Word],
    collar: float = math.inf,
) -> tuple[int, int, int]:
    """Levenshtein alignment of two word streams as ``(substitutions, deletions, insertions)``.

    With a finite collar a pair may align (match or substitute) only when
    their centre times are at most ``collar`` apart.
    """
    n_ref, n_hyp = len(ref), len(hyp)
    constrained = math.isfinite(collar)
    if constrained:
        ref_centres = np.array([word.center for word in ref], dtype=np.float64)
        hyp_centres = np.array([word.center for word in hyp], dtype=np.float64)
        allowed = np.abs(ref_centres[:, None] - hyp_centres[None, :]) <= collar if n_ref and n_hyp else None

    cost = np.zeros((n_ref + 1, n_hyp + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n_ref + 1)
    cost[0, :] = np.arange(n_hyp + 1)
    big = n_ref + n_hyp + 1
    for i in range(1, n_ref + 1):
        for j in range(1, n_hyp + 1):
            if constrained and not allowed[i - 1, j - 1]:
                diagonal = big
            else:
                diagonal = cost[i - 1, j - 1] + (ref[i - 1].token != hyp[j - 1].token)
            cost[i, j] = min(diagonal, cost[i - 1, j] + 1, cost[i, j - 1] + 1)

    substitutions = deletions = insertions = 0
    i, j = n_ref, n_hyp
    while i > 0 or j > 0:
        if i > 0 and j > 0 and (not constrained or allowed[i - 1, j - 1]):
            step = int(ref[i - 1].token != hyp[j - 1].token)
            if cost[i, j] == cost[i - 1, j - 1] + step:
                substitutions += step
                i, j = i - 1, j - 1
                continue
        if i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            deletions += 1
            i -= 1
        else:
            insertions += 1
            j -= 1
    return substitutions, deletions, insertions


def _best_assignment(cost: np.ndarray, solver: str) -> list[int]:
    n = cost.shape[0]
    if solver not in SOLVERS:
        raise DcfdsError("unknown_solver", "unknown permutation solver", {"solver": solver, "choices": list(SOLVERS)})
    if solver == "exhaustive" or (solver == "auto" and n <= EXHAUSTIVE_MAX_SPEAKERS):
        perms = np.array(list(permutations(range(n))), dtype=np.int64)
        totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
        return perms[int(np.argmin(totals))].tolist()
    rows, cols = linear_sum_assignment(cost)
    return cols[np.argsort(rows)].tolist()


def _permutation_wer(ref: TranscriptSet, hyp: TranscriptSet, collar: float, solver: str) -> WERReport:
    reference_words = ref.word_count
    if reference_words == 0:
        raise DcfdsError("empty_reference", "reference transcript has no words")

    ref_speakers = ref.speakers
    hyp_speakers = hyp.speakers
    size = max(len(ref_speakers), len(hyp_speakers))
    ref_streams = [ref.words[speaker] for speaker in ref_speakers] + [[]] * (size - len(ref_speakers))
    hyp_streams = [hyp.words[speaker] for speaker in hyp_speakers] + [[]] * (size - len(hyp_speakers))

    counts = [[edit_counts(r, h, collar) for h in hyp_streams] for r in ref_streams]
    cost = np.array([[sum(cell) for cell in row] for row in counts], dtype=np.int64)
    assignment = _best_assignment(cost, solver)

    substitutions = deletions = insertions = 0
    permutation: dict[str, str | None] = {}
    for ref_index, hyp_index in enumerate(assignment):
        s, d, i = counts[ref_index][hyp_index]
        substitutions, deletions, insertions = substitutions + s, deletions + d, insertions + i
        if ref_index < len(ref_speakers):
            permutation[ref_speakers[ref_index]] = hyp_speakers[hyp_index] if hyp_index < len(hyp_speakers) else None

    errors = substitutions + deletions + insertions
    return WERReport(
        error_rate=errors / reference_words,
        substitutions=substitutions,
        deletions=deletions,
        insertions=insertions,
        reference_words=reference_words,
        permutation=permutation,
    )


def cpwer(ref: TranscriptSet, hyp: TranscriptSet, solver: str = "auto") -> WERReport:
    return _permutation_wer(ref, hyp, math.inf, solver)


def tcpwer(ref: TranscriptSet, hyp: TranscriptSet, collar: float = 5.0, solver: str = "auto") -> WERReport:
    if collar < 0:
        raise DcfdsError("invalid_collar", "collar must be nonnegative", {"collar": collar})
    for name, transcripts in (("reference", ref), ("hypothesis", hyp)):
        for speaker, words in transcripts.words.items():
            if any(word.center is None for word in words):
                raise DcfdsError("missing_timestamps", f"{name} words need onset and offset", {"speaker": speaker})
    return _permutation_wer(ref, hyp, collar, solver)
