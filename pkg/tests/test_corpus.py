import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from longform_vtc.corpus import (CorpusManifest, Recording, RTTMParseError, VoiceType, child_disjoint_split,
                                 corpus_stats, effective_duration, parse_rttm, read_rttm, write_rttm)
from longform_vtc.timeline import Segment

H = 3600.0


def test_parse_single_line():
    (entry,) = parse_rttm("SPEAKER rec1 1 0.50 1.20 <NA> <NA> KCHI <NA> <NA>\n")
    rec, label, seg = entry
    assert rec == "rec1" and label is VoiceType.KCHI
    assert seg == Segment(0.5, 1.7)


def test_parse_rejects_non_positive_duration():
    with pytest.raises(RTTMParseError, match="line 2"):
        parse_rttm("SPEAKER rec1 1 0.00 1.00 <NA> <NA> MAL <NA> <NA>\n"
                   "SPEAKER rec1 1 0.50 -1.0 <NA> <NA> FEM <NA> <NA>\n")


def test_parse_rejects_short_and_non_numeric_lines():
    with pytest.raises(RTTMParseError):
        parse_rttm("SPEAKER rec1 1 0.5\n")
    with pytest.raises(RTTMParseError):
        parse_rttm("SPEAKER rec1 1 abc 1.0 <NA> <NA> FEM <NA> <NA>\n")


def test_parse_skips_other_line_types_and_keeps_unknown_labels():
    text = ("SPKR-INFO rec1 1 <NA> <NA> <NA> unknown KCHI <NA> <NA>\n"
            "SPEAKER rec1 1 1.000 1.000 <NA> <NA> SPEECH <NA> <NA>\n")
    (entry,) = parse_rttm(text)
    assert entry[1] == "SPEECH"


def test_write_format():
    line = write_rttm([("rec1", VoiceType.KCHI, Segment(0.5, 1.7))])
    assert line == "SPEAKER rec1 1 0.500 1.200 <NA> <NA> KCHI <NA> <NA>\n"
    assert write_rttm([]) == ""


def test_three_line_round_trip():
    entries = [("rec1", VoiceType.KCHI, Segment(0.5, 1.7)), ("rec1", VoiceType.FEM, Segment(1.0, 3.25)),
               ("rec2", VoiceType.MAL, Segment(0.0, 0.125))]
    assert parse_rttm(write_rttm(entries)) == entries


def test_random_round_trip_at_ms_resolution():
    rnd = random.Random(7)
    entries = []
    for _ in range(1000):
        on_ms = rnd.randrange(0, 3_600_000)
        off_ms = on_ms + rnd.randrange(1, 20_000)
        entries.append((f"rec{rnd.randrange(5)}", rnd.choice(list(VoiceType)), Segment(on_ms / 1000, off_ms / 1000)))
    text = write_rttm(entries)
    assert parse_rttm(text) == entries
    assert write_rttm(parse_rttm(text)) == text


def test_manifest_json_round_trip(small_manifest, tmp_path):
    path = tmp_path / "m.json"
    small_manifest.save(path)
    back = CorpusManifest.load(path)
    assert back == small_manifest
    assert back.timeline("rec_a").pairs() == [(0.0, 4.0), (6.0, 7.5)]


def test_manifest_rejects_segment_past_end():
    with pytest.raises(ValueError, match="exceeds"):
        CorpusManifest("x", [Recording("r", "c", 5.0)], {"r": [(VoiceType.FEM, Segment(4.0, 6.0))]})


def _children_manifest(hours):
    recs = [Recording(f"r{i}", f"child_{i}", h * H) for i, h in enumerate(hours)]
    return CorpusManifest("d", recs, {})


def _split_children(parts):
    return [sorted({r.child_id for r in p.recordings}) for p in parts]


def test_ten_equal_children_split_8_1_1():
    parts = child_disjoint_split(_children_manifest([1] * 10))
    assert [len(c) for c in _split_children(parts)] == [8, 1, 1]


def test_greedy_hand_trace():
    # targets 80/10/10 h; 50 then three 10s fill train, ties go to the earlier split
    parts = child_disjoint_split(_children_manifest([50, 10, 10, 10, 10, 10]))
    train, val, test = _split_children(parts)
    assert train == ["child_0", "child_1", "child_2", "child_3"]
    assert val == ["child_4"] and test == ["child_5"]


def test_single_child_warns():
    with pytest.warns(UserWarning, match="one child"):
        train, val, test = child_disjoint_split(_children_manifest([3]))
    assert len(train.recordings) == 1 and not val.recordings and not test.recordings


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=2, max_size=25), st.integers(0, 2 ** 16), st.integers(0, 2 ** 16))
def test_split_is_child_disjoint_and_seed_independent(hours, s1, s2):
    m = _children_manifest(hours)
    # several recordings for the same child
    recs = list(m.recordings) + [Recording(f"x{i}", r.child_id, 600.0) for i, r in enumerate(m.recordings[:3])]
    m = CorpusManifest("d", recs, {})
    a = child_disjoint_split(m, seed=s1)
    b = child_disjoint_split(m, seed=s2)
    assert [p.recording_ids for p in a] == [p.recording_ids for p in b]
    kids = _split_children(a)
    assert not (set(kids[0]) & set(kids[1])) and not (set(kids[0]) & set(kids[2])) and not (set(kids[1]) & set(kids[2]))
    assert sorted(sum((p.recording_ids for p in a), [])) == sorted(m.recording_ids)


def test_bad_ratios():
    with pytest.raises(ValueError):
        child_disjoint_split(_children_manifest([1, 1]), ratios=(0.5, 0.5, 0.5))


TABLE_ROWS = [
    ("Cougar", 8234, 3535), ("Timor-leste2022", 6635, 1838), ("Fausey-trio", 1907, 421),
    ("Solomon", 5484, 1855), ("Bergelson", 7065, 2018), ("Lucid", 3557, 1308), ("Png2019", 855, 325),
    ("Tsimanem2018", 740, 154), ("Png2016", 483, 245), ("Warlaumont", 499, 165), ("Tsimanec2018", 802, 209),
    ("Tseltal2015", 502, 201), ("Quechua", 975, 374), ("Ramirez", 537, 251), ("Israel-Haifa", 149, 85),
    ("Winnipeg", 351, 105), ("PhonSES", 114, 29), ("Nepal-havron", 103, 38), ("Lyon", 37, 8),
]


def table_manifests(rows=TABLE_ROWS):
    """One recording per dataset; effective time is a single annotation span."""
    out = []
    for name, total_h, eff_h in rows:
        rec = Recording(f"{name}_0", f"{name}_child", total_h * H)
        out.append(CorpusManifest(name, [rec], {rec.id: [(VoiceType.KCHI, Segment(0.0, eff_h * H))]}))
    return out


def test_table_totals():
    stats = corpus_stats(table_manifests())
    assert stats.total.total_h == 39029
    assert stats.total.effective_h == 13164
    assert stats.to_table().splitlines()[-1].split() == ["Total", "39029", "13164"]


def test_half_hour_dataset():
    rec = Recording("r", "c", 1800.0)
    stats = corpus_stats([CorpusManifest("tiny", [rec], {})])
    assert stats.total.total_h == 0.5
    assert stats.to_dict()["total"]["total_s"] == 1800.0
    assert stats.to_table().splitlines()[1].split() == ["tiny", "0", "0"]


def test_effective_duration_counts_overlap_once(small_manifest):
    # rec_a: [0,4) + [6,7.5); rec_b: [0.5,1.5) + [3,5)
    assert effective_duration(small_manifest) == pytest.approx(5.5 + 3.0)
