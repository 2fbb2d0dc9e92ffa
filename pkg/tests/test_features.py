import numpy as np
import pytest

from cvcap import codec
from cvcap.data import SceneSpec, render
from cvcap.features import (
    ConvLayer,
    ExtractorConfig,
    FeatureMaps,
    build_extractors,
    load_feature_maps,
    save_feature_maps,
)
from cvcap.tensor import ConfigurationError, Tensor


def extractors(seed=0, **kw):
    cfg = ExtractorConfig(**kw)
    return cfg, build_extractors(cfg, 3, seed)


def test_default_output_shapes():
    _, (cnn_i, cnn_r) = extractors()
    x = np.random.default_rng(0).uniform(size=(4, 56, 56, 3))
    assert cnn_i(x).shape == (4, 7, 7, 32)
    assert cnn_r(x).shape == (4, 7, 7, 16)
    assert cnn_i(x[None]).shape == (1, 4, 7, 7, 32)


def test_zero_input_zero_features():
    _, (cnn_i, _) = extractors()
    assert not cnn_i(np.zeros((2, 56, 56, 3))).data.any()


def test_identical_frames_identical_features():
    _, (cnn_i, _) = extractors()
    f = np.random.default_rng(1).uniform(size=(56, 56, 3))
    out = cnn_i(np.stack([f, f, f])).data
    assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])


def test_uniform_residual_spatially_constant_interior():
    _, (_, cnn_r) = extractors()
    out = cnn_r(np.full((1, 56, 56, 3), 0.5)).data
    # centring makes 0.5 the zero input, so the maps are constant everywhere
    assert np.allclose(out, out[0, 0, 0])


def test_moving_object_residual_peaks_on_object():
    spec = SceneSpec("square", "red", "right", speed=2, size=12, start=(20, 8))
    video = render(spec, 8, (56, 56), np.random.default_rng(0))
    cv = codec.encode(video, gop_size=8)
    p_r = codec.sample_frame_stack(cv, 1).p_r
    _, (_, cnn_r) = extractors(seed=3)
    feats = cnn_r(p_r).data[0]
    norm = np.linalg.norm(feats, axis=-1)
    r, c = np.unravel_index(np.argmax(norm), norm.shape)
    cy, cx = (r + 0.5) * 8, (c + 0.5) * 8
    # object spans y 20..32, x 8..22 over the first two frames; allow one cell of receptive-field slack
    assert 12 <= cy <= 40 and 0 <= cx <= 30


def test_frozen_extractor_builds_no_graph():
    _, (cnn_i, _) = extractors(frozen=True)
    out = cnn_i(np.random.default_rng(0).uniform(size=(1, 56, 56, 3)))
    assert not out.requires_grad
    assert all(not p.requires_grad for p in cnn_i.parameters())


def test_parameter_names_and_determinism():
    _, (a, _) = extractors(seed=5)
    _, (b, _) = extractors(seed=5)
    assert [p.name for p in a.parameters()][:2] == ["cnn_i.conv0.weight", "cnn_i.conv0.bias"]
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ExtractorConfig(d_i=0)
    with pytest.raises(ConfigurationError):
        ExtractorConfig(d_i=4, conv_stack_i=(ConvLayer(3, 1, 8),))
    with pytest.raises(ConfigurationError):
        ExtractorConfig().output_grid(50, 50)


def test_feature_maps_grid_check():
    with pytest.raises(ConfigurationError):
        FeatureMaps(Tensor(np.zeros((1, 2, 3, 3, 4))), Tensor(np.zeros((1, 2, 2, 3, 4))))


def test_feature_cache_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    fm = FeatureMaps(Tensor(rng.normal(size=(2, 3, 3, 4))), Tensor(rng.normal(size=(2, 3, 3, 2))))
    save_feature_maps(tmp_path, "vid00001", fm)
    back = load_feature_maps(tmp_path, "vid00001")
    assert np.array_equal(back.v_i.data, fm.v_i.data) and np.array_equal(back.a_r.data, fm.a_r.data)
