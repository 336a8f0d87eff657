"""Recordings, voice-type annotations, RTTM I/O, child-disjoint splits and duration stats."""

from __future__ import annotations

import enum
import json
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .timeline import Segment, Timeline, total_duration

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000


class VoiceType(str, enum.Enum):
    KCHI = "KCHI"
    OCH = "OCH"
    MAL = "MAL"
    FEM = "FEM"

    def __str__(self) -> str:
        return self.value

    @property
    def index(self) -> int:
        return VOICE_TYPES.index(self)


# canonical report order
VOICE_TYPES: Tuple[VoiceType, ...] = (VoiceType.KCHI, VoiceType.OCH, VoiceType.MAL, VoiceType.FEM)

Label = Union[VoiceType, str]
RTTMEntry = Tuple[str, Label, Segment]


class RTTMParseError(ValueError):
    pass


def as_label(name: str) -> Label:
    """Map a label string to a VoiceType, keeping unknown labels as strings."""
    try:
        return VoiceType(name)
    except ValueError:
        return name


@dataclass(frozen=True)
class Recording:
    id: str
    child_id: str
    duration: float
    sample_rate: int = SAMPLE_RATE
    audio_path: Optional[str] = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"recording {self.id}: duration must be > 0")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"recording {self.id}: sample rate must be {SAMPLE_RATE} Hz")


@dataclass
class CorpusManifest:
    dataset_name: str
    recordings: List[Recording] = field(default_factory=list)
    annotations: Dict[str, List[Tuple[Label, Segment]]] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        durations = {r.id: r.duration for r in self.recordings}
        if len(durations) != len(self.recordings):
            raise ValueError("duplicate recording ids in manifest")
        for rec_id, items in self.annotations.items():
            if rec_id not in durations:
                raise ValueError(f"annotation references unknown recording {rec_id!r}")
            for label, seg in items:
                # 0.5 ms slack for RTTM rounding
                if seg.offset > durations[rec_id] + 5e-4:
                    raise ValueError(
                        f"{rec_id}: segment [{seg.onset}, {seg.offset}) exceeds duration {durations[rec_id]}")

    @property
    def recording_ids(self) -> List[str]:
        return [r.id for r in self.recordings]

    def recording(self, rec_id: str) -> Recording:
        for r in self.recordings:
            if r.id == rec_id:
                return r
        raise KeyError(rec_id)

    @property
    def total_duration(self) -> float:
        return sum(r.duration for r in self.recordings)

    def timeline(self, rec_id: str, label: Optional[Label] = None) -> Timeline:
        """Merged timeline of one recording; ``label=None`` pools every label."""
        segs = [s for lab, s in self.annotations.get(rec_id, []) if label is None or lab == label]
        name = None if label is None else str(label)
        return Timeline(rec_id, name, segs).merged()

    def class_timelines(self, rec_id: str) -> Dict[VoiceType, Timeline]:
        return {vt: self.timeline(rec_id, vt) for vt in VOICE_TYPES}

    def subset(self, rec_ids: Iterable[str], dataset_name: Optional[str] = None) -> "CorpusManifest":
        keep = set(rec_ids)
        return CorpusManifest(
            dataset_name=dataset_name or self.dataset_name,
            recordings=[r for r in self.recordings if r.id in keep],
            annotations={k: list(v) for k, v in self.annotations.items() if k in keep},
        )

    def entries(self) -> List[RTTMEntry]:
        out = []
        for rec in self.recordings:
            for label, seg in self.annotations.get(rec.id, []):
                out.append((rec.id, label, seg))
        return out

    # -- JSON --------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "recordings": [
                {
                    "id": r.id,
                    "child_id": r.child_id,
                    "duration_s": r.duration,
                    "sample_rate": r.sample_rate,
                    "audio_path": r.audio_path,
                }
                for r in self.recordings
            ],
            "annotations": {
                rec_id: [{"label": str(lab), "onset_s": s.onset, "offset_s": s.offset} for lab, s in items]
                for rec_id, items in self.annotations.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusManifest":
        recordings = [
            Recording(
                id=r["id"],
                child_id=r["child_id"],
                duration=float(r["duration_s"]),
                sample_rate=int(r.get("sample_rate", SAMPLE_RATE)),
                audio_path=r.get("audio_path"),
            )
            for r in data["recordings"]
        ]
        annotations = {
            rec_id: [(as_label(a["label"]), Segment(float(a["onset_s"]), float(a["offset_s"]))) for a in items]
            for rec_id, items in data.get("annotations", {}).items()
        }
        return cls(dataset_name=data["dataset_name"], recordings=recordings, annotations=annotations)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CorpusManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- RTTM --------------------------------------------------------------------


def parse_rttm(text: str) -> List[RTTMEntry]:
    """Parse SPEAKER lines of an RTTM document.

    Lines of other types are skipped. Labels that are not voice types are kept
    as plain strings.
    """
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0] != "SPEAKER":
            continue
        if len(fields) < 9:
            raise RTTMParseError(f"line {lineno}: expected at least 9 fields, got {len(fields)}")
        try:
            onset = float(fields[3])
            dur = float(fields[4])
        except ValueError:
            raise RTTMParseError(f"line {lineno}: non-numeric onset/duration") from None
        if not dur > 0:
            raise RTTMParseError(f"line {lineno}: non-positive duration {fields[4]}")
        if not onset >= 0:
            raise RTTMParseError(f"line {lineno}: negative onset {fields[3]}")
        # onset + dur carries float noise (1.234 + 2.345 != 3.579); snap it to 1 ns
        entries.append((fields[1], as_label(fields[7]), Segment(onset, round(onset + dur, 9))))
    return entries


def _format_line(rec_id: str, label: Label, seg: Segment) -> str:
    onset = round(seg.onset, 3)
    dur = round(seg.offset, 3) - onset
    if dur < 0.0005:
        raise ValueError(f"segment [{seg.onset}, {seg.offset}) is shorter than RTTM resolution")
    return f"SPEAKER {rec_id} 1 {onset:.3f} {dur:.3f} <NA> <NA> {label} <NA> <NA>"


def write_rttm(entries: Iterable[RTTMEntry]) -> str:
    lines = [_format_line(rec_id, label, seg) for rec_id, label, seg in entries]
    return "".join(line + "\n" for line in lines)


def read_rttm(path: Union[str, Path]) -> List[RTTMEntry]:
    return parse_rttm(Path(path).read_text())


def entries_by_recording(entries: Iterable[RTTMEntry]) -> Dict[str, List[Tuple[Label, Segment]]]:
    out: Dict[str, List[Tuple[Label, Segment]]] = defaultdict(list)
    for rec_id, label, seg in entries:
        out[rec_id].append((label, seg))
    return dict(out)


# -- splitting -----------------------------------------------------------------

SPLIT_NAMES = ("train", "val", "test")


def child_disjoint_split(
    manifest: CorpusManifest,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> Tuple[CorpusManifest, CorpusManifest, CorpusManifest]:
    """Partition recordings so that no child spans two splits.

    Children are visited largest total duration first (ties by child id) and
    each one goes to the split with the largest remaining duration deficit
    (ties to the earlier split). The rule is fully deterministic, so ``seed``
    only exists for interface symmetry with the other pipeline stages.
    """
    if not manifest.recordings:
        raise ValueError("cannot split an empty manifest")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")

    by_child: Dict[str, float] = defaultdict(float)
    for rec in manifest.recordings:
        if not rec.child_id:
            raise ValueError(f"recording {rec.id} has no child_id")
        by_child[rec.child_id] += rec.duration

    assignment = assign_children(by_child, ratios)
    if len(by_child) == 1:
        warnings.warn("only one child in manifest; all data assigned to train", stacklevel=2)

    splits = []
    for idx, name in enumerate(SPLIT_NAMES):
        rec_ids = [r.id for r in manifest.recordings if assignment[r.child_id] == idx]
        splits.append(manifest.subset(rec_ids, dataset_name=manifest.dataset_name))
    return splits[0], splits[1], splits[2]


def assign_children(child_durations: Dict[str, float], ratios: Sequence[float]) -> Dict[str, int]:
    """Greedy deficit filling; returns child id -> split index."""
    total = sum(child_durations.values())
    if len(child_durations) == 1:
        return {next(iter(child_durations)): 0}
    assigned = [0.0] * len(ratios)
    out = {}
    for child in sorted(child_durations, key=lambda c: (-child_durations[c], c)):
        deficits = [r * total - a for r, a in zip(ratios, assigned)]
        best = max(range(len(ratios)), key=lambda i: (deficits[i], -i))
        out[child] = best
        assigned[best] += child_durations[child]
    return out


# -- statistics ----------------------------------------------------------------


@dataclass
class DatasetStats:
    dataset_name: str
    total_s: float
    effective_s: float

    @property
    def total_h(self) -> float:
        return self.total_s / 3600.0

    @property
    def effective_h(self) -> float:
        return self.effective_s / 3600.0


@dataclass
class CorpusStats:
    rows: List[DatasetStats]
    total: DatasetStats

    def to_dict(self) -> dict:
        def row(r):
            return {"dataset_name": r.dataset_name, "total_s": r.total_s, "effective_s": r.effective_s}

        return {"rows": [row(r) for r in self.rows], "total": row(self.total)}

    def to_table(self) -> str:
        width = max([len(r.dataset_name) for r in self.rows] + [len("Total"), len("Dataset")])
        lines = [f"{'Dataset':<{width}}  {'Total (h)':>10}  {'Effective (h)':>14}"]
        for r in self.rows + [self.total]:
            lines.append(f"{r.dataset_name:<{width}}  {round(r.total_h):>10d}  {round(r.effective_h):>14d}")
        return "\n".join(lines)


def effective_duration(manifest: CorpusManifest) -> float:
    """Seconds covered by the manifest's annotations (all labels pooled)."""
    return sum(total_duration(seg for _, seg in manifest.annotations.get(r.id, [])) for r in manifest.recordings)


def corpus_stats(manifests: Sequence[CorpusManifest]) -> CorpusStats:
    """Per-dataset raw and effective durations plus a totals row (exact seconds)."""
    rows = [DatasetStats(m.dataset_name, m.total_duration, effective_duration(m)) for m in manifests]
    total = DatasetStats("Total", sum(r.total_s for r in rows), sum(r.effective_s for r in rows))
    return CorpusStats(rows=rows, total=total)
