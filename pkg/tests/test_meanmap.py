import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepmeanmaps import layers as L
from deepmeanmaps.kernels import embed
from deepmeanmaps.meanmap import MeanMapLayer, extract_feature_set
from deepmeanmaps.tensor import Rng


def make(D=16, m=8, sigma=1.5, seed=0, **kw):
    return MeanMapLayer.sample(Rng(seed), D, m, sigma, **kw)


def test_constant_input():
    layer = make(m=3)
    v = np.array([0.2, -1.0, 0.4])
    out = layer.forward(np.tile(v[:, None, None], (1, 4, 6))[None])[0]
    W = layer.params["omega"] * np.exp(layer.params["log_scale"][0])
    np.testing.assert_allclose(out, np.cos(W @ v + layer.params["offsets"]), rtol=0, atol=1e-15)


def test_output_bounded_and_sized():
    layer = make(D=32, m=2)
    for h, w in [(1, 1), (3, 9), (12, 5)]:
        out = layer.forward(np.random.default_rng(h).standard_normal((2, 2, h, w)) * 10)
        assert out.shape == (2, 32) and np.all(np.abs(out) <= 1)


def test_forward_equals_set_embedding():
    layer = make(D=16, m=8)
    C = np.random.default_rng(1).standard_normal((8, 5, 7))
    out = layer.forward(C[None])[0]
    ref = embed(layer.basis, extract_feature_set(C)).values
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=0)


def test_forward_is_primitive_composition():
    layer = make(D=12, m=4)
    x = np.random.default_rng(2).standard_normal((3, 4, 5, 6))
    composed = L.global_avg_pool(np.cos(L.conv2d(x, layer.kernels(), layer.params["offsets"])))
    assert np.array_equal(layer.forward(x), composed)


def test_extract_feature_set():
    C = np.arange(6.0).reshape(1, 2, 3)
    assert extract_feature_set(C).tolist() == [[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]]
    C = np.random.default_rng(0).standard_normal((4, 3, 5))
    S = extract_feature_set(C)
    assert S.shape == (15, 4)
    np.testing.assert_array_equal(S[7], C[:, 1, 2])


def test_input_validation():
    layer = make(m=3)
    with pytest.raises(ValueError, match="channels"):
        layer.forward(np.zeros((1, 4, 2, 2)))
    with pytest.raises(ValueError, match="empty"):
        layer.forward(np.zeros((1, 3, 0, 2)))
    with pytest.raises(RuntimeError):
        make().backward(np.ones((1, 16)))


def test_zero_upstream_gives_zero_gradients():
    layer = make(m=4, learn_frequencies=True)
    layer.forward(np.random.default_rng(0).standard_normal((2, 4, 3, 3)))
    dx, grads = layer.backward(np.zeros((2, 16)))
    assert not dx.any() and not grads["omega"].any() and not grads["log_scale"].any()


@pytest.mark.parametrize("freq,scale,names", [
    (False, False, {"input"}),
    (False, True, {"input", "param:log_scale"}),
    (True, True, {"input", "param:omega", "param:log_scale"}),
])
def test_gradients(freq, scale, names):
    layer = make(D=8, m=4, learn_frequencies=freq, learn_scale=scale)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 4, 3, 3))
    report = L.grad_check(layer, x, weights=rng.standard_normal((2, 8)))
    assert set(report.errors) == names
    assert report.worst < 1e-6


def test_offsets_never_trained():
    layer = make(learn_frequencies=True)
    assert "offsets" not in layer.trainable
    layer.forward(np.ones((1, 8, 2, 2)))
    _, grads = layer.backward(np.ones((1, 16)))
    assert "offsets" not in grads


def test_backward_in_float64_for_float32_activations():
    layer = MeanMapLayer.from_basis(make(m=4).basis, dtype=np.float32)
    x = np.random.default_rng(4).standard_normal((2, 4, 3, 3)).astype(np.float32)
    layer.forward(x)
    dx, grads = layer.backward(np.ones((2, 16), dtype=np.float32))
    assert dx.dtype == np.float32 and grads["log_scale"].dtype == np.float32


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_spatial_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    layer = make(D=16, m=3, seed=seed % 7)
    C = rng.standard_normal((3, 4, 5))
    perm = rng.permutation(20)
    shuffled = C.reshape(3, 20)[:, perm].reshape(3, 4, 5)
    np.testing.assert_allclose(layer.forward(shuffled[None]), layer.forward(C[None]), rtol=0, atol=1e-12)


def test_column_duplication_invariance():
    layer = make(D=16, m=3)
    C = np.random.default_rng(5).standard_normal((3, 4, 5))
    doubled = np.repeat(C, 2, axis=2)  # h x 2w
    np.testing.assert_allclose(layer.forward(doubled[None]), layer.forward(C[None]), rtol=0, atol=1e-12)


def test_calibrate_sets_scale_from_median_heuristic():
    layer = make(m=2)
    feats = np.random.default_rng(6).standard_normal((4, 2, 5, 5))
    sigma = layer.calibrate(feats, Rng(0))
    assert sigma > 0
    assert layer.params["log_scale"][0] == pytest.approx(-np.log(sigma))
