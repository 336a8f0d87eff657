import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from longform_vtc.corpus import VOICE_TYPES, CorpusManifest, Recording, VoiceType
from longform_vtc.metrics import (ClassCounts, detection_counts, evaluate_corpus, format_table, macro_average,
                                  precision_recall_f, report_from_counts, reports_to_json, round_half_up)
from longform_vtc.timeline import Segment

KCHI, OCH, MAL, FEM = VoiceType.KCHI, VoiceType.OCH, VoiceType.MAL, VoiceType.FEM


def random_timelines(rng, duration=10.0, max_segs=6):
    out = {}
    for vt in VOICE_TYPES:
        segs = []
        for _ in range(rng.integers(0, max_segs + 1)):
            a = round(float(rng.uniform(0, duration - 0.01)), 3)
            b = round(min(duration, a + float(rng.uniform(0.001, 3.0))), 3)
            if b > a:
                segs.append((a, b))
        out[vt] = segs
    return out


def brute_force_counts(ref, hyp, uem, step=0.001):
    n = int(round(max(b for _, b in uem) / step))
    mids = (np.arange(n) + 0.5) * step

    def grid(segs):
        g = np.zeros(n, dtype=bool)
        for a, b in segs:
            g |= (mids >= a) & (mids < b)
        return g

    inside = grid(uem)
    out = {}
    for vt in VOICE_TYPES:
        r, h = grid(ref.get(vt, [])) & inside, grid(hyp.get(vt, [])) & inside
        out[vt] = ((r & h).sum() * step, (h & ~r).sum() * step, (r & ~h).sum() * step)
    return out


def test_simple_counts():
    c = detection_counts({KCHI: [(0, 2)]}, {KCHI: [(1, 3)]}, [(0, 10)])
    assert (c[KCHI].tp, c[KCHI].fp, c[KCHI].fn) == (1, 1, 1)


def test_empty_hypothesis_counts():
    c = detection_counts({FEM: [(0, 2), (5, 6)]}, {}, [(0, 10)])
    assert (c[FEM].tp, c[FEM].fp, c[FEM].fn) == (0, 0, 3)


def test_uem_clips_and_must_be_non_empty():
    c = detection_counts({MAL: [(0, 4)]}, {MAL: [(2, 8)]}, [(1, 5)])
    assert (c[MAL].tp, c[MAL].fp, c[MAL].fn) == (2, 1, 1)
    with pytest.raises(ValueError):
        detection_counts({}, {}, [])


def test_prf_conventions():
    r = precision_recall_f(ClassCounts(1, 1, 1))
    assert (r.precision, r.recall, r.f) == (0.5, 0.5, 0.5)
    r = precision_recall_f(ClassCounts(0, 0, 5))
    assert (r.precision, r.recall, r.f) == (1.0, 0.0, 0.0) and r.no_hypothesis
    r = precision_recall_f(ClassCounts(3, 1, 2))
    assert r.precision == 0.75 and r.recall == 0.6 and r.f == pytest.approx(2 * 0.45 / 1.35)
    r = precision_recall_f(ClassCounts(0, 0, 0))
    assert r.f == 1.0 and r.no_reference and r.no_hypothesis
    assert precision_recall_f(ClassCounts(0, 2, 3)).f == 0.0


def test_macro_average_table_rows():
    assert macro_average([71.8, 51.4, 60.3, 74.8]) == 64.6
    assert macro_average([79.7, 60.4, 67.6, 71.5]) == 69.8
    assert macro_average([42.3] * 4) == 42.3
    with pytest.raises(ValueError):
        macro_average([1.0, 2.0, 3.0])


def test_round_half_up():
    assert round_half_up(0.25) == 0.3
    assert round_half_up(64.575, 2) == 64.58
    assert round_half_up(-1.25) == -1.3


def test_brute_force_oracle_100_cases():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        ref, hyp = random_timelines(rng), random_timelines(rng)
        uem = [(0.0, 10.0)]
        exact = detection_counts(ref, hyp, uem)
        brute = brute_force_counts(ref, hyp, uem)
        for vt in VOICE_TYPES:
            for got, want in zip((exact[vt].tp, exact[vt].fp, exact[vt].fn), brute[vt]):
                assert abs(got - want) <= 0.002


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 50))
def test_symmetry_and_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    ref, hyp = random_timelines(rng), random_timelines(rng)
    uem = [(0.0, 10.0)]
    a = detection_counts(ref, hyp, uem)
    b = detection_counts(hyp, ref, uem)
    scaled = lambda tl: {vt: [(x * scale, y * scale) for x, y in s] for vt, s in tl.items()}
    c = detection_counts(scaled(ref), scaled(hyp), [(0.0, 10.0 * scale)])
    for vt in VOICE_TYPES:
        pa, pb, pc = (precision_recall_f(x[vt]) for x in (a, b, c))
        assert a[vt].fp == pytest.approx(b[vt].fn) and a[vt].fn == pytest.approx(b[vt].fp)
        assert pa.precision == pytest.approx(pb.recall) and pa.f == pytest.approx(pb.f)
        assert pa.f == pytest.approx(pc.f) and pa.precision == pytest.approx(pc.precision)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_adding_hypothesis_inside_reference_never_lowers_recall(seed):
    rng = np.random.default_rng(seed)
    ref, hyp = random_timelines(rng), random_timelines(rng)
    for vt in VOICE_TYPES:
        if not ref[vt]:
            continue
        a, b = ref[vt][0]
        extra = {**hyp, vt: hyp[vt] + [(a, (a + b) / 2)]}
        before = precision_recall_f(detection_counts(ref, hyp, [(0, 10)])[vt]).recall
        after = precision_recall_f(detection_counts(ref, extra, [(0, 10)])[vt]).recall
        assert after >= before - 1e-12
        again = {**extra, vt: extra[vt] + [(a, (a + b) / 2)]}
        assert precision_recall_f(detection_counts(ref, again, [(0, 10)])[vt]).recall == pytest.approx(after)


def _manifest(name, recs):
    return CorpusManifest(name, [Recording(r, "c_" + r, 10.0) for r in recs],
                          {r: [(lab, Segment(a, b)) for lab, a, b in items] for r, items in recs.items()})


def test_identical_reference_and_hypothesis_scores_100():
    m = _manifest("d", {"r1": [(KCHI, 0.0, 2.5), (FEM, 1.0, 4.0), (MAL, 5.0, 6.0), (OCH, 7.0, 9.0)]})
    rep = evaluate_corpus(m, m.entries())["global"]
    assert rep.macro_f == 100.0
    assert all(rep.scores[vt].f == 1.0 for vt in VOICE_TYPES)


def test_global_pools_counts_rather_than_averaging_files():
    m = _manifest("d", {"r1": [(KCHI, 0.0, 8.0)], "r2": [(KCHI, 0.0, 1.0)]})
    hyp = [("r1", KCHI, Segment(0.0, 8.0)), ("r2", KCHI, Segment(5.0, 9.0))]
    glob = evaluate_corpus(m, hyp, "global")["global"].scores[KCHI].f
    per_file = evaluate_corpus(m, hyp, "file")
    mean_of_files = np.mean([r.scores[KCHI].f for r in per_file.values()])
    pooled = precision_recall_f(ClassCounts(tp=8.0, fp=4.0, fn=1.0)).f
    assert glob == pytest.approx(pooled)
    assert abs(glob - mean_of_files) > 0.1


def test_per_dataset_grouping():
    a = _manifest("A", {"a1": [(FEM, 0.0, 1.0)]})
    b = _manifest("B", {"b1": [(MAL, 0.0, 1.0)]})
    reps = evaluate_corpus(a, a.entries() + b.entries(), "dataset", extra_references=[b])
    assert set(reps) == {"A", "B"}
    assert reps["A"].scores[FEM].f == 1.0


def test_empty_hypothesis_set_conventions(caplog):
    m = _manifest("d", {"r1": [(KCHI, 0.0, 2.0), (FEM, 3.0, 4.0)]})
    with caplog.at_level(logging.WARNING):
        rep = evaluate_corpus(m, [])["global"]
    assert "no hypothesis" in caplog.text
    assert rep.scores[KCHI].f == 0.0 and rep.scores[FEM].f == 0.0
    assert rep.scores[OCH].f == 1.0 and rep.scores[MAL].f == 1.0
    assert rep.flags["no_reference"] == ["OCH", "MAL"]


def test_unknown_recording_is_an_error():
    m = _manifest("d", {"r1": []})
    with pytest.raises(ValueError, match="unknown"):
        evaluate_corpus(m, [("ghost", KCHI, Segment(0, 1))])
    with pytest.raises(ValueError):
        evaluate_corpus(m, [], grouping="speaker")


def test_report_formats():
    m = _manifest("d", {"r1": [(KCHI, 0.0, 2.0)]})
    reps = evaluate_corpus(m, [("r1", KCHI, Segment(1.0, 2.0))])
    doc = json.loads(reports_to_json(reps))
    assert doc["global"]["KCHI"]["precision"] == 100.0
    assert doc["global"]["KCHI"]["recall"] == 50.0
    lines = format_table(reps).splitlines()
    assert lines[0].split() == ["Group", "KCHI", "OCH", "MAL", "FEM", "Ave."]
    assert lines[1].split()[1] == "66.7"


def test_empty_reference_is_rejected():
    with pytest.raises(ValueError):
        evaluate_corpus(CorpusManifest("x", [], {}), [])
