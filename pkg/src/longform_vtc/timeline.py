"""Half-open interval algebra used for annotations, VAD output and predictions.

Every timeline query works on the *merged* form: sorted, non-overlapping
``[onset, offset)`` pairs where touching intervals are joined.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union


@dataclass(frozen=True, order=True)
class Segment:
    onset: float
    offset: float

    def __post_init__(self):
        if not (self.onset >= 0):
            raise ValueError(f"segment onset must be >= 0, got {self.onset}")
        if not (self.offset > self.onset):
            raise ValueError(f"segment offset must exceed onset: [{self.onset}, {self.offset})")

    @property
    def duration(self) -> float:
        return self.offset - self.onset

    def __iter__(self) -> Iterator[float]:
        yield self.onset
        yield self.offset


SegmentLike = Union[Segment, Tuple[float, float]]


def _pairs(segments: Iterable[SegmentLike]) -> List[Tuple[float, float]]:
    return [(float(s[0]), float(s[1])) if not isinstance(s, Segment) else (s.onset, s.offset)
            for s in segments]


def union(segments: Iterable[SegmentLike]) -> List[Tuple[float, float]]:
    """Sorted union; overlapping and touching intervals are joined."""
    pairs = sorted(_pairs(segments))
    out: List[Tuple[float, float]] = []
    for on, off in pairs:
        if off <= on:
            continue
        if out and on <= out[-1][1]:
            if off > out[-1][1]:
                out[-1] = (out[-1][0], off)
        else:
            out.append((on, off))
    return out


def intersection(a: Sequence[SegmentLike], b: Sequence[SegmentLike]) -> List[Tuple[float, float]]:
    """Intersection of two timelines (inputs are merged first)."""
    a, b = union(a), union(b)
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        on = max(a[i][0], b[j][0])
        off = min(a[i][1], b[j][1])
        if off > on:
            out.append((on, off))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def difference(a: Sequence[SegmentLike], b: Sequence[SegmentLike]) -> List[Tuple[float, float]]:
    """Parts of ``a`` not covered by ``b``."""
    a, b = union(a), union(b)
    out = []
    j = 0
    for on, off in a:
        cur = on
        while j < len(b) and b[j][1] <= cur:
            j += 1
        k = j
        while k < len(b) and b[k][0] < off:
            if b[k][0] > cur:
                out.append((cur, b[k][0]))
            cur = max(cur, b[k][1])
            if cur >= off:
                break
            k += 1
        if cur < off:
            out.append((cur, off))
    return out


def total_duration(segments: Iterable[SegmentLike]) -> float:
    return sum(off - on for on, off in union(segments))


def covers(outer: Sequence[SegmentLike], inner: Sequence[SegmentLike], tol: float = 0.0) -> bool:
    """True when every point of ``inner`` lies inside ``outer``."""
    return total_duration(difference(inner, outer)) <= tol


@dataclass
class Timeline:
    """Segments of one recording, optionally restricted to one label."""

    recording_id: str
    label: Optional[str] = None
    segments: List[Segment] = field(default_factory=list)

    def __post_init__(self):
        self.segments = sorted(
            s if isinstance(s, Segment) else Segment(float(s[0]), float(s[1])) for s in self.segments
        )

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def pairs(self) -> List[Tuple[float, float]]:
        return [(s.onset, s.offset) for s in self.segments]

    def merged(self) -> "Timeline":
        return self.with_pairs(union(self.segments))

    def with_pairs(self, pairs: Iterable[Tuple[float, float]]) -> "Timeline":
        return Timeline(self.recording_id, self.label, [Segment(on, off) for on, off in pairs])

    @property
    def duration(self) -> float:
        """Duration of the union (overlaps counted once)."""
        return total_duration(self.segments)

    def is_merged(self) -> bool:
        p = self.pairs()
        return all(p[i][1] < p[i + 1][0] for i in range(len(p) - 1))
