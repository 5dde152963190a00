import json

import numpy as np
import pytest

import stvit


def test_presets():
    names = stvit.preset_names()
    assert "deit-s-16" in names and "stvit-r-tiny" in names
    assert stvit.preset_config("deit-s")["stages"][0]["channels"] == 384


def test_flops_matches_reported_scale():
    report = stvit.flops("deit-s-16")
    assert report["semantic_tokens"] == 16
    assert abs(report["counted"] * 1e-9 - 1.91) / 1.91 < 0.03
    assert sum(layer["macs"] for layer in report["layers"]) == report["counted"]


def test_forward_tiny():
    logits, trace = stvit.forward("stvit-tiny", seed=3)
    assert logits.shape == (10,)
    assert np.all(np.isfinite(logits))
    assert trace["layer_tokens"] == [64, 64, 4, 4, 4, 4]
    again, _ = stvit.forward("stvit-tiny", seed=3)
    np.testing.assert_array_equal(logits, again)


def test_forward_with_image_and_config_json():
    cfg = stvit.preset_config("stvit-tiny")
    image = np.zeros((32, 32, 3))
    logits, trace = stvit.forward(json.dumps(cfg), seed=1, image=image, export_attention=True)
    assert logits.shape == (10,)
    assert any("attention_maps" in r for r in trace["records"])
    with pytest.raises(stvit.DimensionError):
        stvit.forward("stvit-tiny", image=np.zeros((16, 16, 3)))


def test_attention_update_against_numpy():
    rng = np.random.default_rng(0)
    points = rng.normal(size=(30, 5))
    mu = rng.normal(size=(3, 5))
    mu /= np.linalg.norm(mu, axis=1, keepdims=True)
    lam = 2.5
    mu_prime, z, max_logit = stvit.attention_update(points, mu, lam)
    logits = lam * mu @ points.T
    weights = np.exp(logits - logits.max(axis=1, keepdims=True))
    expected = (weights / weights.sum(axis=1, keepdims=True)) @ points
    np.testing.assert_allclose(mu_prime, expected, atol=1e-12)
    np.testing.assert_allclose(z, weights.sum(axis=1), rtol=1e-12)
    np.testing.assert_allclose(max_logit, logits.max(axis=1), rtol=1e-12)


def test_recovery_and_mixture():
    centers, points = stvit.sample_mixture(clusters=4, dim=16, samples=10, sigma=0.0, seed=2)
    assert centers.shape == (4, 16) and points.shape == (40, 16)
    np.testing.assert_allclose(np.linalg.norm(centers, axis=1), 1.0, atol=1e-12)
    report = stvit.run_recovery(samples=300, seed=1)
    assert report["feasible"]
    assert report["min_cos_after"] > report["min_cos_before"]
    with pytest.raises(stvit.ConfigError):
        stvit.run_recovery(clusters=20, dim=8)


def test_decoupled_identity():
    rng = np.random.default_rng(1)
    s1, g = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    keys = rng.normal(size=(10, 6))
    wq, wk = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
    assert stvit.decoupled_logits_gap(s1, g, keys, wq, wk) < 1e-10
