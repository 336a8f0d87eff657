"""Turn raw long-form VAD output into pre-training segments.

Stages: merge, extend short segments, merge again, cap long segments.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

from .corpus import Recording
from .timeline import Timeline, intersection, total_duration, union

MIN_LEN = 2.0
MAX_GAP = 2.0
MAX_LEN = 30.0
# lengths within 1 ns of min_len count as long enough, so re-running is a no-op
LEN_TOL = 1e-9


def _check_sorted_disjoint(pairs: List[Tuple[float, float]]) -> None:
    for (a_on, a_off), (b_on, b_off) in zip(pairs, pairs[1:]):
        if b_on < a_on:
            raise ValueError("timeline is not sorted by onset")
        if b_on < a_off:
            raise ValueError(f"overlapping segments [{a_on}, {a_off}) and [{b_on}, {b_off})")


def extend_short_segments(
    speech: Timeline,
    min_len: float = MIN_LEN,
    bounds: Optional[Tuple[float, float]] = None,
) -> Timeline:
    """Grow every segment shorter than ``min_len`` into surrounding context.

    Half the deficit goes to each side; whatever a recording boundary cuts off
    on one side is taken from the other. The result may overlap neighbours.
    """
    pairs = speech.pairs()
    _check_sorted_disjoint(pairs)
    lo, hi = bounds if bounds is not None else (0.0, float("inf"))
    out = []
    for on, off in pairs:
        if on < lo or off > hi:
            raise ValueError(f"segment [{on}, {off}) outside bounds [{lo}, {hi}]")
        deficit = min_len - (off - on)
        if deficit > LEN_TOL:
            new_on = on - deficit / 2
            new_off = off + deficit / 2
            if new_on < lo:
                new_off = min(hi, new_off + (lo - new_on))
                new_on = lo
            elif new_off > hi:
                new_on = max(lo, new_on - (new_off - hi))
                new_off = hi
            on, off = new_on, new_off
        out.append((on, off))
    return speech.with_pairs(out)


def merge_segments(speech: Timeline, max_gap: float = MAX_GAP) -> Timeline:
    """Join overlapping segments and segments separated by less than ``max_gap``."""
    out: List[Tuple[float, float]] = []
    for on, off in sorted(speech.pairs()):
        if out and on - out[-1][1] < max_gap:
            out[-1] = (out[-1][0], max(out[-1][1], off))
        else:
            out.append((on, off))
    return speech.with_pairs(out)


def cap_segments(speech: Timeline, max_len: float = MAX_LEN) -> Timeline:
    """Split segments longer than ``max_len`` into adjacent ``max_len`` chunks."""
    out = []
    for on, off in speech.pairs():
        start = on
        while off - start > max_len:
            out.append((start, start + max_len))
            start += max_len
        out.append((start, off))
    return speech.with_pairs(out)


def preprocess_pipeline(
    vad: Timeline,
    recording: Recording,
    min_len: float = MIN_LEN,
    max_gap: float = MAX_GAP,
    max_len: float = MAX_LEN,
) -> Timeline:
    for on, off in vad.pairs():
        if off > recording.duration + 1e-9:
            raise ValueError(f"VAD segment [{on}, {off}) beyond recording end {recording.duration}")
    tl = merge_segments(vad, max_gap)
    tl = extend_short_segments(tl, min_len, bounds=(0.0, recording.duration))
    tl = merge_segments(tl, max_gap)
    return cap_segments(tl, max_len)


def non_speech_ratio(segments: Timeline, reference_speech: Timeline) -> float:
    """Fraction of segment time that is not reference speech (0 for no segments)."""
    seg = union(segments.segments)
    total = total_duration(seg)
    if total == 0:
        return 0.0
    speech = total_duration(intersection(seg, reference_speech.segments))
    return (total - speech) / total
