import math

import numpy as np
import pytest

from longform_vtc.ssl.encoder import (EncoderConfig, extract_layer_features, forward, init_state, layer_features,
                                      load_encoder, logits_from_final, param_group, save_encoder)
from longform_vtc.ssl.gradcheck import TINY
from longform_vtc.ssl.objective import masked_prediction_loss

SMALL = EncoderConfig(input_dim=6, n_layers=3, d_model=16, n_heads=4, d_ffn=32, d_proj=8, n_clusters=5)


def test_shapes():
    st = init_state(SMALL, seed=0)
    x = np.random.default_rng(0).normal(size=(5, 6))
    fr = forward(st, x)
    assert len(fr.activations) == SMALL.n_layers + 1
    assert all(a.shape == (5, 16) for a in fr.activations)
    assert fr.logits.shape == (5, 5)
    assert forward(st, x[None].repeat(2, 0)).logits.shape == (2, 5, 5)


def test_default_layer_tap():
    assert EncoderConfig(n_layers=12).layer_tap == 7
    assert EncoderConfig(n_layers=4).layer_tap == 2
    assert EncoderConfig(n_layers=1).layer_tap == 1


def test_zero_output_projection_gives_uniform_logits(rng):
    st = init_state(SMALL, seed=1, uniform_logits=False)
    st.params["output_proj.w"][:] = 0
    st.params["output_proj.b"][:] = 0
    fr = forward(st, rng.normal(size=(4, 6)))
    assert np.all(fr.logits == 0)


def test_uniform_initialisation_starts_at_ln_k(rng):
    st = init_state(SMALL.replace(n_clusters=32), seed=2)
    fr = forward(st, rng.normal(size=(3, 20, 6)))
    targets = rng.integers(0, 32, size=(3, 20))
    assert masked_prediction_loss(fr.logits, targets, np.ones((3, 20), bool)) == pytest.approx(math.log(32), abs=1e-6)


def test_permutation_equivariance_without_positions(rng):
    cfg = SMALL.replace(positional=False)
    st = init_state(cfg, seed=3, dtype=np.float64)
    x = rng.normal(size=(9, 6))
    perm = rng.permutation(9)
    a = forward(st, x).activations[-1]
    b = forward(st, x[perm]).activations[-1]
    assert np.allclose(a[perm], b, atol=1e-12)


def test_mask_replaces_inputs_with_embedding(rng):
    st = init_state(SMALL, seed=4, dtype=np.float64)
    x = rng.normal(size=(6, 6))
    m = np.array([False, True, False, False, True, False])
    y = x.copy()
    y[m] = 100.0
    assert np.allclose(forward(st, x, m).logits, forward(st, y, m).logits)


def test_layer_features_and_last_layer(rng):
    st = init_state(SMALL, seed=5, dtype=np.float64)
    x = rng.normal(size=(7, 6))
    fr = forward(st, x)
    assert np.array_equal(layer_features(st, x, 2), fr.activations[2])
    assert np.allclose(logits_from_final(st, layer_features(st, x, SMALL.n_layers)), fr.logits)
    with pytest.raises(ValueError):
        layer_features(st, x, SMALL.n_layers + 1)
    with pytest.raises(ValueError):
        layer_features(st, x, 0)


def test_extract_layer_features_deterministic_and_windowed(rng):
    st = init_state(SMALL, seed=6, dtype=np.float64)
    x = rng.normal(size=(30, 6))
    a = extract_layer_features(st, x, 2)
    b = extract_layer_features(st, x, 2)
    assert a.origin == "ENCODER_LAYER(2)" and np.array_equal(a.data, b.data)
    # a window covering the whole input is the plain forward pass
    w = extract_layer_features(st, x, 2, window=30, stride=15)
    assert np.allclose(w.data, a.data)


def test_non_finite_input_names_the_layer(rng):
    st = init_state(SMALL, seed=7)
    x = rng.normal(size=(4, 6))
    x[1, 2] = np.inf
    with pytest.raises(FloatingPointError, match="layer 1"):
        forward(st, x)


def test_param_groups_cover_everything():
    st = init_state(TINY.replace(n_layers=2), seed=0)
    groups = {param_group(k) for k in st.params}
    assert groups == {"input_proj", "mask_emb", "attention", "layer_norm", "ffn", "output_proj", "codewords"}


def test_checkpoint_round_trip_bitwise(tmp_path, rng):
    st = init_state(SMALL, seed=8)
    save_encoder(tmp_path / "enc.ckpt", st, {"note": "x"})
    back, meta, extra = load_encoder(tmp_path / "enc.ckpt")
    assert meta["note"] == "x" and not extra and back.config == st.config
    x = rng.normal(size=(11, 6)).astype(np.float32)
    assert np.array_equal(forward(st, x).logits, forward(back, x).logits)


def test_input_dim_mismatch():
    with pytest.raises(ValueError):
        forward(init_state(SMALL), np.zeros((3, 5)))
