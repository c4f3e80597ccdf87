import json

import numpy as np
import pytest

import motorfm


def test_backbone_parameter_count():
    model = motorfm.build_backbone(8, seed=1)
    by_layer = sum(model.weights(i)[0].size + model.weights(i)[1].size
                   for i, name in enumerate(model.layer_names) if name != "gap")
    assert model.parameter_count == by_layer == 173_704
    assert motorfm.backbone_parameter_count(8) == 173_704
    assert len(model.layer_names) == 17


def test_logits_shape_is_length_independent():
    model = motorfm.build_backbone(4, seed=2)
    for length in (64, 512):
        x = np.random.default_rng(0).standard_normal((3, length))
        assert model.logits(x).shape == (3, 4)
        assert len(model.predict(x)) == 3


def test_prepare_finetune_mask():
    model = motorfm.prepare_finetune(motorfm.build_backbone(8, seed=3), num_classes=2)
    mask = model.trainable_mask
    assert mask[:3] == [True] * 3
    assert mask[3:16] == [False] * 13
    assert mask[-1]
    assert model.trainable_parameter_count == 256 + 2 * 12352 + 65 * 2


def test_conv1d_matches_numpy():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 10))
    w = rng.standard_normal((3, 2, 3))
    b = rng.standard_normal(3)
    y = motorfm.conv1d(x, w, b, same=True)
    xp = np.pad(x, ((0, 0), (1, 1)))
    ref = np.stack([[sum(np.dot(w[o, c], xp[c, i:i + 3]) for c in range(2)) + b[o] for i in range(10)]
                    for o in range(3)])
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_generator_pipeline_and_noise():
    sig = motorfm.gen_record("outer_race", 1.0, seed=5, rpm=1800.0, n_rolling_elements=8, duration_s=1.0)
    assert sig.shape == (25600,)
    again = motorfm.gen_record("outer_race", 1.0, seed=5, rpm=1800.0, n_rolling_elements=8, duration_s=1.0)
    assert np.array_equal(sig, again)
    w = motorfm.windows(sig, 2048, 1024)
    assert w.shape == (24, 2048)
    np.testing.assert_allclose(w.mean(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(w.std(axis=1), 1.0, atol=1e-9)
    noisy = motorfm.add_noise(sig, 10.0, seed=1)
    assert abs(np.std(noisy - sig) / np.std(sig) - 0.10) < 0.01


def test_checkpoint_round_trip(tmp_path):
    model = motorfm.build_backbone(3, seed=4)
    path = tmp_path / "m.ckpt"
    model.save(path)
    loaded = motorfm.load_checkpoint(path)
    assert loaded.fingerprint == model.fingerprint
    x = np.random.default_rng(2).standard_normal((2, 128))
    assert np.array_equal(loaded.logits(x), model.logits(x))


def test_gradcheck_and_config():
    ok, errors = motorfm.gradcheck()
    assert ok
    assert max(errors.values()) <= 1e-3
    cfg = json.loads(motorfm.default_config())
    assert len(cfg["suites"]["expressivity"]) == 6


def test_bad_input_raises():
    with pytest.raises(ValueError):
        motorfm.build_backbone(1, seed=0)
    with pytest.raises(ValueError):
        motorfm.gen_record("cracked", 1.0, seed=0)
