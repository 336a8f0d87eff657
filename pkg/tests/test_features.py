import math

import numpy as np
import pytest

from longform_vtc import features as feat
from longform_vtc.features import FrameMatrix, NormStats


def tone(freq, seconds=1.0, amp=0.5):
    t = np.arange(int(seconds * feat.SAMPLE_RATE)) / feat.SAMPLE_RATE
    return amp * np.sin(2 * np.pi * freq * t)


def test_frame_counts():
    assert feat.n_frames_for(16000) == 49
    assert feat.frame_signal(np.zeros(16000)).shape == (49, 400)
    assert feat.frame_signal(np.zeros(400)).shape == (1, 400)
    with pytest.raises(ValueError):
        feat.frame_signal(np.zeros(0))
    with pytest.raises(ValueError):
        feat.frame_signal(np.zeros(399))


def test_frames_are_hopped_views():
    x = np.arange(2000, dtype=float)
    fr = feat.frame_signal(x)
    assert fr[3, 0] == 3 * 320 and fr[3, -1] == 3 * 320 + 399


def test_silence_hits_the_log_floor():
    lm = feat.log_mel(feat.frame_signal(np.zeros(8000))).data
    assert np.allclose(lm, math.log(1e-10))


def test_tone_peak_matches_direct_dft():
    lm = feat.log_mel(feat.frame_signal(tone(1000.0))).data
    peaks = lm.argmax(axis=1)
    assert np.all(peaks == peaks[0])
    # oracle: direct DFT of one Hann-windowed frame, projected on the filterbank
    frame = tone(1000.0)[:400] * (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(400) / 400))
    n = np.arange(400)
    k = np.arange(257)[:, None]
    power = np.abs((frame[None] * np.exp(-2j * np.pi * k * n / 512)).sum(axis=1)) ** 2
    assert peaks[0] == int(np.argmax(feat.mel_filterbank() @ power))


def test_power_spectrum_matches_direct_dft(rng):
    frames = rng.normal(size=(2, 400))
    ps = feat.power_spectrum(frames)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(400) / 400)
    n = np.arange(400)
    k = np.arange(257)[:, None]
    direct = np.abs(((frames[1] * win)[None] * np.exp(-2j * np.pi * k * n / 512)).sum(axis=1)) ** 2
    assert np.allclose(ps[1], direct)


def test_scaling_adds_ln4(rng):
    x = rng.normal(scale=0.1, size=8000)
    a = feat.log_mel(feat.frame_signal(x)).data
    b = feat.log_mel(feat.frame_signal(2 * x)).data
    assert np.allclose(b - a, math.log(4.0), atol=1e-9)


def test_filterbank_shape_and_coverage():
    fb = feat.mel_filterbank()
    assert fb.shape == (40, 257)
    assert np.all(fb >= 0) and np.all(fb.max(axis=1) > 0)


def test_mfcc_dimensions_and_stationarity():
    fm = feat.mfcc(feat.frame_signal(np.full(16000, 0.25)))
    assert fm.dim == 39 and fm.origin == "MFCC"
    assert np.allclose(fm.data[:, 13:], 0.0, atol=1e-9)


def test_dct_hand_computed():
    toy = np.array([[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0], [2.0, -1.0, 0.5, 3.0]])
    out = feat.cepstra(toy, n_ceps=4)
    N = 4
    for t in range(3):
        for k in range(4):
            s = math.sqrt(1.0 / N) if k == 0 else math.sqrt(2.0 / N)
            ref = s * sum(toy[t, n] * math.cos(math.pi * k * (2 * n + 1) / (2 * N)) for n in range(N))
            assert out[t, k] == pytest.approx(ref, abs=1e-12)


def test_deltas_regression_formula():
    x = np.arange(10, dtype=float)[:, None] ** 2
    d = feat.deltas(x)
    # interior frames: sum_n n (x[t+n] - x[t-n]) / (2 sum n^2) = 2t for a parabola
    assert np.allclose(d[2:-2, 0], 2 * np.arange(2, 8))
    # edge frames replicate the boundary value
    padded = np.concatenate([[x[0]] * 2, x, [x[-1]] * 2])
    t = 0
    ref = sum(n * (padded[t + 2 + n] - padded[t + 2 - n]) for n in (1, 2)) / 10
    assert d[0, 0] == pytest.approx(ref[0])


def test_normalize_own_stats(rng):
    x = rng.normal(3.0, 2.0, size=(500, 5))
    y = feat.normalize(x, NormStats.fit(x))
    assert np.allclose(y.mean(axis=0), 0, atol=1e-9)
    assert np.allclose(y.std(axis=0), 1, atol=1e-9)


def test_normalize_zero_variance_passthrough(rng, caplog):
    x = rng.normal(size=(50, 3))
    x[:, 1] = 7.0
    y = feat.normalize(x, NormStats.fit(x))
    assert np.array_equal(y[:, 1], x[:, 1])
    assert "zero-variance" in caplog.text


def test_train_stats_on_validation_are_finite(rng):
    train = feat.extract(rng.normal(scale=0.1, size=16000)).data
    val = feat.extract(np.concatenate([np.zeros(8000), rng.normal(size=8000)])).data
    out = feat.normalize(val, NormStats.fit([train]))
    assert np.all(np.isfinite(out))


def test_frame_matrix_round_trip(tmp_path, rng):
    fm = FrameMatrix(rng.normal(size=(7, 3)).astype(np.float32), origin="MFCC")
    fm.save(tmp_path / "x.feat")
    back = FrameMatrix.load(tmp_path / "x.feat")
    assert np.array_equal(back.data, fm.data) and back.origin == "MFCC" and back.frame_rate == 50.0


def test_extract_kinds(rng):
    x = rng.normal(scale=0.1, size=4000)
    assert feat.extract(x, "logmel").dim == 40
    assert feat.extract(x, "mfcc").dim == 39
    with pytest.raises(ValueError):
        feat.extract(x, "plp")


def test_frame_span():
    assert feat.frame_span(0.06, 0.16, 100) == (3, 8)
    assert feat.frame_span(1.0, 5.0, 100) == (50, 100)
