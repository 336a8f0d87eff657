"""Duration-based detection precision / recall / F per voice type."""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .corpus import VOICE_TYPES, CorpusManifest, RTTMEntry, VoiceType
from .timeline import Timeline, difference, intersection, total_duration, union

logger = logging.getLogger(__name__)

GLOBAL, PER_FILE, PER_DATASET = "global", "file", "dataset"


@dataclass
class ClassCounts:
    tp: float = 0.0
    fp: float = 0.0
    fn: float = 0.0

    def __iadd__(self, other: "ClassCounts") -> "ClassCounts":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self

    @property
    def reference(self) -> float:
        return self.tp + self.fn

    @property
    def hypothesis(self) -> float:
        return self.tp + self.fp


@dataclass
class DetectionCounts:
    per_class: Dict[VoiceType, ClassCounts] = field(default_factory=lambda: {vt: ClassCounts() for vt in VOICE_TYPES})

    def __getitem__(self, vt: VoiceType) -> ClassCounts:
        return self.per_class[vt]

    def __iadd__(self, other: "DetectionCounts") -> "DetectionCounts":
        for vt in VOICE_TYPES:
            self.per_class[vt] += other.per_class[vt]
        return self


def _pairs(tl) -> List[Tuple[float, float]]:
    if tl is None:
        return []
    if isinstance(tl, Timeline):
        return tl.pairs()
    return [tuple(s) for s in tl]


def _get(timelines: Mapping, vt: VoiceType):
    if vt in timelines:
        return timelines[vt]
    return timelines.get(str(vt))


def detection_counts(reference: Mapping, hypothesis: Mapping, uem) -> DetectionCounts:
    """Exact interval arithmetic: tp = |ref & hyp|, fp = |hyp - ref|, fn = |ref - hyp|, all inside ``uem``."""
    region = union(_pairs(uem))
    if total_duration(region) <= 0:
        raise ValueError("evaluated region (uem) is empty")
    counts = DetectionCounts()
    for vt in VOICE_TYPES:
        ref = intersection(_pairs(_get(reference, vt)), region)
        hyp = intersection(_pairs(_get(hypothesis, vt)), region)
        tp = total_duration(intersection(ref, hyp))
        counts.per_class[vt] = ClassCounts(
            tp=tp,
            fp=total_duration(difference(hyp, ref)),
            fn=total_duration(difference(ref, hyp)),
        )
    return counts


@dataclass
class PRF:
    precision: float
    recall: float
    f: float
    no_hypothesis: bool = False
    no_reference: bool = False


def precision_recall_f(counts: ClassCounts) -> PRF:
    """Conventions: no hypothesis -> P = 1; no reference -> R = 1; P + R = 0 -> F = 0."""
    no_hyp = counts.tp + counts.fp <= 0
    no_ref = counts.tp + counts.fn <= 0
    p = 1.0 if no_hyp else counts.tp / (counts.tp + counts.fp)
    r = 1.0 if no_ref else counts.tp / (counts.tp + counts.fn)
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return PRF(p, r, f, no_hyp, no_ref)


def round_half_up(x: float, ndigits: int = 1) -> float:
    q = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def macro_average(values: Sequence[float], ndigits: Optional[int] = 1) -> float:
    """Unweighted mean of the four class scores (rounded half-up for display)."""
    if len(values) != len(VOICE_TYPES):
        raise ValueError(f"expected {len(VOICE_TYPES)} class values, got {len(values)}")
    mean = math.fsum(values) / len(values)
    return mean if ndigits is None else round_half_up(mean, ndigits)


@dataclass
class EvalReport:
    """Per-class precision/recall/F in percent plus the macro average."""

    scores: Dict[VoiceType, PRF]
    counts: DetectionCounts
    group: str = "global"

    @property
    def macro_f(self) -> float:
        return macro_average([100.0 * self.scores[vt].f for vt in VOICE_TYPES], ndigits=None)

    @property
    def flags(self) -> Dict[str, List[str]]:
        return {
            "no_reference": [str(vt) for vt in VOICE_TYPES if self.scores[vt].no_reference],
            "no_hypothesis": [str(vt) for vt in VOICE_TYPES if self.scores[vt].no_hypothesis],
        }

    def to_dict(self) -> dict:
        out = {
            str(vt): {
                "precision": 100.0 * s.precision,
                "recall": 100.0 * s.recall,
                "f": 100.0 * s.f,
                "tp_s": self.counts[vt].tp,
                "fp_s": self.counts[vt].fp,
                "fn_s": self.counts[vt].fn,
            }
            for vt, s in self.scores.items()
        }
        out["macro_f"] = self.macro_f
        out["flags"] = self.flags
        return out


def report_from_counts(counts: DetectionCounts, group: str = "global") -> EvalReport:
    return EvalReport({vt: precision_recall_f(counts[vt]) for vt in VOICE_TYPES}, counts, group)


def format_table(reports: Mapping[str, EvalReport]) -> str:
    """Plain-text F-score table (percent, 1 decimal), one row per group."""
    width = max([len(g) for g in reports] + [5])
    head = f"{'Group':<{width}}  " + "  ".join(f"{str(vt):>5}" for vt in VOICE_TYPES) + "   Ave."
    lines = [head]
    for g, rep in reports.items():
        cells = "  ".join(f"{round_half_up(100.0 * rep.scores[vt].f):>5.1f}" for vt in VOICE_TYPES)
        lines.append(f"{g:<{width}}  {cells}  {round_half_up(rep.macro_f):>5.1f}")
    return "\n".join(lines)


def reports_to_json(reports: Mapping[str, EvalReport]) -> str:
    return json.dumps({g: r.to_dict() for g, r in reports.items()}, sort_keys=True)


def _hyp_by_recording(hypothesis: Iterable[RTTMEntry]) -> Dict[str, Dict[VoiceType, list]]:
    out: Dict[str, Dict[VoiceType, list]] = defaultdict(lambda: defaultdict(list))
    unknown = set()
    for rec_id, label, seg in hypothesis:
        if isinstance(label, VoiceType):
            out[rec_id][label].append((seg.onset, seg.offset))
        else:
            unknown.add(str(label))
    if unknown:
        logger.warning("ignoring hypothesis labels outside the voice types: %s", sorted(unknown))
    return out


def evaluate_corpus(
    reference: CorpusManifest,
    hypothesis: Iterable[RTTMEntry],
    grouping: str = GLOBAL,
    extra_references: Sequence[CorpusManifest] = (),
) -> Dict[str, EvalReport]:
    """Accumulate counts per group (micro pooling) and score each group.

    The evaluated region of a recording is ``[0, duration]``. Recordings with no
    hypothesis are scored as empty predictions.
    """
    manifests = [reference, *extra_references]
    if not any(m.recordings for m in manifests):
        raise ValueError("reference manifest has no recordings to score")
    hyp = _hyp_by_recording(hypothesis)
    known = {r.id for m in manifests for r in m.recordings}
    stray = sorted(set(hyp) - known)
    if stray:
        raise ValueError(f"hypothesis for unknown recording(s): {stray}")
    if grouping not in (GLOBAL, PER_FILE, PER_DATASET):
        raise ValueError(f"unknown grouping {grouping!r}")

    grouped: Dict[str, DetectionCounts] = {}
    for m in manifests:
        unknown_labels = {str(lab) for items in m.annotations.values() for lab, _ in items
                          if not isinstance(lab, VoiceType)}
        if unknown_labels:
            logger.warning("reference labels excluded from scoring: %s", sorted(unknown_labels))
        for rec in m.recordings:
            if rec.id not in hyp:
                logger.warning("no hypothesis for recording %s; scoring it as empty", rec.id)
            ref = m.class_timelines(rec.id)
            counts = detection_counts(ref, hyp.get(rec.id, {}), [(0.0, rec.duration)])
            key = {GLOBAL: "global", PER_FILE: rec.id, PER_DATASET: m.dataset_name}[grouping]
            grouped.setdefault(key, DetectionCounts())
            grouped[key] += counts
    return {k: report_from_counts(c, k) for k, c in grouped.items()}
