import numpy as np
import pytest

from longform_vtc.corpus import CorpusManifest, Recording, VoiceType
from longform_vtc.timeline import Segment


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_manifest():
    recs = [
        Recording("rec_a", "child_1", 10.0),
        Recording("rec_b", "child_2", 8.0),
    ]
    ann = {
        "rec_a": [(VoiceType.KCHI, Segment(0.0, 2.0)), (VoiceType.FEM, Segment(1.0, 4.0)),
                  (VoiceType.MAL, Segment(6.0, 7.5))],
        "rec_b": [(VoiceType.OCH, Segment(0.5, 1.5)), (VoiceType.KCHI, Segment(3.0, 5.0))],
    }
    return CorpusManifest("toy", recs, ann)
