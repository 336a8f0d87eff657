import math

import numpy as np
import pytest

from longform_vtc.optim import Adam, PlateauHalver, clip_grads, global_norm, warmup_linear
from longform_vtc.quantizer import LLOYD
from longform_vtc.ssl.driver import DriverSettings, PretrainRecording, two_iteration_driver
from longform_vtc.ssl.encoder import EncoderConfig, init_state
from longform_vtc.ssl.gradcheck import TINY, analytic_gradients, grad_check
from longform_vtc.ssl.train import (CropSampler, PretrainSettings, TrainingDiverged, Utterance, save_curve,
                                    train_pretrain_iteration)

MICRO = EncoderConfig(input_dim=4, n_layers=2, d_model=8, n_heads=2, d_ffn=16, d_proj=4, n_clusters=3,
                      mask_prob=0.2, mask_len=3)


def transposed_wq(state, x, y, m):
    grads = analytic_gradients(state, x, y, m)
    for k in grads:
        if k.endswith("attn.wq"):
            grads[k] = grads[k].T.copy()
    return grads


@pytest.mark.parametrize("n_layers", [1, 2])
def test_grad_check_passes(n_layers):
    rep = grad_check(TINY.replace(n_layers=n_layers), seed=n_layers)
    assert rep.passed, rep.group_errors
    assert set(rep.group_errors) == {"input_proj", "mask_emb", "attention", "layer_norm", "ffn", "output_proj",
                                     "codewords"}


def test_grad_check_zero_input():
    assert grad_check(TINY, seed=5, zero_input=True).passed


def test_grad_check_catches_transposed_attention_gradient():
    rep = grad_check(TINY, seed=0, gradient_fn=transposed_wq)
    assert not rep.passed
    assert rep.failing_groups() == ["attention"]


def _toy_utterances(rng, n=6, T=40):
    utts = []
    for _ in range(n):
        # runs of one class, so masked frames are predictable from context
        y = np.repeat(rng.integers(0, 3, size=T // 10), 10)
        x = np.eye(4)[y] + 0.05 * rng.normal(size=(T, 4))
        utts.append(Utterance(x, y))
    return utts


def test_zero_steps_returns_initialisation(rng):
    utts = _toy_utterances(rng)
    st, curve = train_pretrain_iteration(utts, MICRO, PretrainSettings(steps=0), seed=3)
    seed = int(np.random.default_rng(3).integers(2 ** 31))
    ref = init_state(MICRO, seed=seed)
    assert curve == []
    assert all(np.array_equal(st.params[k], ref.params[k]) for k in ref.params)


def test_same_seed_bitwise_identical_in_float64(rng):
    utts = _toy_utterances(rng)
    s = PretrainSettings(steps=15, batch_size=3, crop_frames=20, dtype="float64")
    a_state, a = train_pretrain_iteration(utts, MICRO, s, seed=9)
    b_state, b = train_pretrain_iteration(utts, MICRO, s, seed=9)
    assert [c.loss for c in a] == [c.loss for c in b]
    assert all(np.array_equal(a_state.params[k], b_state.params[k]) for k in a_state.params)
    assert a_state.dtype == np.float64


def test_loss_starts_at_ln_k_and_falls(rng):
    utts = _toy_utterances(rng)
    s = PretrainSettings(steps=150, batch_size=4, crop_frames=30, peak_lr=5e-3)
    _, curve = train_pretrain_iteration(utts, MICRO, s, seed=1)
    assert curve[0].loss == pytest.approx(math.log(3), abs=1e-6)
    assert np.mean([c.loss for c in curve[-20:]]) < 0.7 * curve[0].loss


def test_divergence_is_reported(rng, tmp_path):
    utts = _toy_utterances(rng)
    utts[0].features[3, 1] = np.nan
    s = PretrainSettings(steps=30, batch_size=6, crop_frames=40, checkpoint_every=1, checkpoint_dir=str(tmp_path))
    with pytest.raises(TrainingDiverged):
        train_pretrain_iteration(utts, MICRO, s, seed=0)
    assert (tmp_path / "diverged_last_good.ckpt").exists()


def test_crop_sampler_and_curve_file(rng, tmp_path):
    sampler = CropSampler(_toy_utterances(rng, n=2, T=10), crop_frames=25)
    x, y = sampler.sample(3, rng)
    assert x.shape == (3, 10, 4) and y.shape == (3, 10)
    _, curve = train_pretrain_iteration(_toy_utterances(rng), MICRO, PretrainSettings(steps=3, batch_size=2), seed=0)
    save_curve(curve, tmp_path / "curve.csv")
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "step,loss,lr" and len(lines) == 4


def test_warmup_linear_schedule():
    lrs = [warmup_linear(s, 100, 1.0, 0.08) for s in range(100)]
    assert lrs[0] == pytest.approx(1 / 8) and lrs[7] == pytest.approx(1.0)
    assert max(lrs) == pytest.approx(1.0)
    assert all(b <= a for a, b in zip(lrs[7:], lrs[8:]))
    assert lrs[-1] > 0


def test_plateau_halves_after_three_stalled_evals():
    sched = PlateauHalver(1e-3, patience=3)
    trace = [sched.update(v) for v in (1.0, 0.9, 0.95, 0.9, 0.92)]
    assert trace == [1e-3, 1e-3, 1e-3, 1e-3, 5e-4]
    assert sched.update(0.5) == 5e-4


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(p, lr=0.1)
    opt.step(p, {"w": np.array([3.0, -0.5])})
    assert np.allclose(p["w"], [0.9, -1.9], atol=1e-6)


def test_clip_grads():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_grads(g, 1.0) == pytest.approx(5.0)
    assert global_norm(g) == pytest.approx(1.0)


def _driver_recordings(rng, n=3, T=300):
    recs = []
    for i in range(n):
        cls = np.repeat(rng.integers(0, 4, size=T // 30), 30)
        teacher = np.eye(4)[cls] * 3 + 0.1 * rng.normal(size=(T, 4))
        inputs = np.eye(4)[cls] + 0.1 * rng.normal(size=(T, 4))
        recs.append(PretrainRecording(f"r{i}", inputs.astype(np.float32), teacher.astype(np.float32),
                                      [(0, 150), (160, T)], cls))
    return recs


def test_driver_emits_two_iterations(rng):
    recs = _driver_recordings(rng)
    settings = DriverSettings(n_clusters=4, kmeans_mode=LLOYD, kmeans_budget=500,
                              pretrain=PretrainSettings(steps=10, batch_size=2, crop_frames=40))
    out = two_iteration_driver(recs, MICRO, seed=0, settings=settings)
    assert [r.iteration for r in out] == [1, 2]
    assert out[0].codebook.feature_origin == "MFCC"
    assert out[1].codebook.feature_origin == f"ENCODER_LAYER({MICRO.layer_tap})"
    assert out[1].codebook.dim == MICRO.d_model
    assert out[0].purity == pytest.approx(1.0)
    again = two_iteration_driver(recs, MICRO, seed=0, settings=settings)
    for a, b in zip(out, again):
        assert np.array_equal(a.codebook.centroids, b.codebook.centroids)
        assert all(np.array_equal(a.state.params[k], b.state.params[k]) for k in a.state.params)


def test_driver_single_iteration(rng):
    settings = DriverSettings(iterations=1, n_clusters=4, kmeans_budget=500,
                              pretrain=PretrainSettings(steps=2, batch_size=2, crop_frames=40))
    out = two_iteration_driver(_driver_recordings(rng), MICRO, seed=0, settings=settings)
    assert len(out) == 1 and out[0].report()["iteration"] == 1
