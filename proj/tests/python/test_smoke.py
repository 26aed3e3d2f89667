import json
import math

import numpy as np
import pytest

import tta3d


def test_phantom_shapes_and_labels():
    p = tta3d.generate_phantom(seed=3, growth=0.5, side=16)
    assert p.volume.shape == (16, 16, 16)
    assert p.labels.shape == (16, 16, 16)
    assert p.volume.dtype == np.float32
    assert set(np.unique(p.labels)) == {0, 1, 2, 3, 4}


def test_noiseless_phantom_has_five_intensities():
    p = tta3d.generate_phantom(seed=5, growth=0.7, side=16, noise=0.0, bias=0.0)
    assert len(np.unique(p.volume)) == 5


def test_entropy_and_kl_spot_values():
    probs = np.array([0.7, 0.3], dtype=np.float32).reshape(1, 2, 1, 1, 1)
    assert tta3d.shannon_entropy(probs) == pytest.approx(0.6109, abs=1e-4)
    assert tta3d.kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.1438, abs=1e-4)


def test_paired_t_test_example():
    r = tta3d.paired_t_test([0.60, 0.72, 0.55, 0.80, 0.65], [0.66, 0.75, 0.61, 0.79, 0.70])
    assert r["t"] == pytest.approx(2.8807725655998326, abs=1e-6)
    assert r["p_value"] == pytest.approx(0.04497813973962846, abs=1e-6)


def test_select_layers():
    assert tta3d.select_layers([0.1, 0.5, 0.2], [0.4, 0.5, 0.2], 1) == [0]


def test_zero_rotation_is_identity_and_gamma_keeps_labels():
    p = tta3d.generate_phantom(seed=1, side=16)
    v, l, _ = tta3d.apply_shift(p.volume, p.labels, "rotation", 0.0, seed=4)
    assert np.array_equal(v, p.volume) and np.array_equal(l, p.labels)
    v, l, applied = tta3d.apply_shift(p.volume, p.labels, "gamma", 0.6, seed=4)
    assert np.array_equal(l, p.labels)
    assert dict(applied)["log_gamma"] <= 0.6


def test_histogram_match_fixed_point():
    p = tta3d.generate_phantom(seed=2, side=16)
    out = tta3d.histogram_match(p.volume, p.volume)
    span = float(p.volume.max() - p.volume.min())
    assert np.max(np.abs(out - p.volume)) <= span / 1024 + 1e-6


def test_network_prediction_and_tent_mask():
    net = tta3d.Network.reference(5, 7)
    p = tta3d.generate_phantom(seed=9, side=16)
    probs = net.predict(p.volume)
    assert probs.shape == (1, 5, 16, 16, 16)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)
    adapted, before, after = tta3d.adapt(net, p.volume, "tent", lr=1e-2, passes=2)
    assert math.isfinite(before) and math.isfinite(after)
    for name in net.parameter_names:
        same = net.parameter(name) == adapted.parameter(name)
        assert same or "_bn." in name, name


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        tta3d.generate_phantom(seed=1, growth=1.5, side=16)
    with pytest.raises(ValueError):
        tta3d.kl_divergence([0.5, 0.5], [0.2, 0.3, 0.5])


def test_default_config_is_json():
    cfg = json.loads(tta3d.dump_default_config())
    assert cfg["seed"] == 42
    assert 1e-3 in cfg["sweep"]["lr"] and 1e-4 in cfg["sweep"]["lr"]
