import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepmeanmaps import layers as L
from deepmeanmaps.tensor import Rng, reduce_mean


def loop_conv(x, k, b, stride):
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    oh, ow = (h - kh) // stride + 1, (w - kw) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for o in range(c_out):
        for i in range(oh):
            for j in range(ow):
                s = b[o]
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            s += x[c, i * stride + u, j * stride + v] * k[o, c, u, v]
                out[o, i, j] = s
    return out


def scan_pool(x, window, stride):
    c, h, w = x.shape
    oh, ow = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.empty((c, oh, ow))
    for ch in range(c):
        for i in range(oh):
            for j in range(ow):
                best = -np.inf
                for u in range(window):
                    for v in range(window):
                        best = max(best, x[ch, i * stride + u, j * stride + v])
                out[ch, i, j] = best
    return out


# -- conv2d ---------------------------------------------------------------------

def test_conv_1x1_on_constant():
    out = L.conv2d(np.full((1, 4, 5), 3.0), np.array([[[[0.5]]]]), np.array([-1.0]))
    assert out.shape == (1, 4, 5)
    assert np.all(out == 0.5 * 3.0 - 1.0)


def test_conv_identity_kernel_crops():
    x = np.random.default_rng(0).standard_normal((1, 6, 7))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    assert np.array_equal(L.conv2d(x, k, np.zeros(1)), x[:, 1:-1, 1:-1])


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_matches_sextuple_loop(stride):
    rng = np.random.default_rng(stride)
    x, k, b = rng.standard_normal((3, 8, 8)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    np.testing.assert_allclose(L.conv2d(x, k, b, stride), loop_conv(x, k, b, stride), rtol=0, atol=1e-10)


def test_conv_output_size_and_errors():
    assert L.conv2d(np.zeros((3, 120, 120)), np.zeros((58, 3, 12, 12))).shape == (58, 109, 109)
    with pytest.raises(ValueError, match="larger than input"):
        L.conv2d(np.zeros((1, 3, 3)), np.zeros((1, 1, 4, 4)))
    with pytest.raises(ValueError, match="channels"):
        L.conv2d(np.zeros((2, 5, 5)), np.zeros((1, 1, 3, 3)))


def test_conv_batch_equals_per_sample():
    rng = np.random.default_rng(5)
    x, k = rng.standard_normal((3, 2, 6, 6)), rng.standard_normal((4, 2, 3, 3))
    batched = L.conv2d(x, k, None, 2)
    for i in range(3):
        np.testing.assert_array_equal(batched[i], L.conv2d(x[i], k, None, 2))


# -- relu / pooling ---------------------------------------------------------------

def test_relu_negative_gives_zeros():
    assert np.all(L.relu(-np.abs(np.random.default_rng(0).standard_normal(20)) - 0.1) == 0)


def test_global_avg_pool_constant_and_reduce_mean():
    assert np.all(L.global_avg_pool(np.full((3, 4, 2), 1.25)) == 1.25)
    x = np.random.default_rng(1).standard_normal((2, 3, 4, 5))
    np.testing.assert_array_equal(L.global_avg_pool(x), reduce_mean(x, [2, 3]))


def test_max_pool_matches_window_scan():
    x = np.random.default_rng(2).standard_normal((1, 6, 6))
    np.testing.assert_array_equal(L.max_pool(x, 2, 2), scan_pool(x, 2, 2))
    y = np.random.default_rng(3).standard_normal((2, 13, 11))
    np.testing.assert_array_equal(L.max_pool(y, 4, 3), scan_pool(y, 4, 3))


def test_max_pool_window_too_large():
    with pytest.raises(ValueError, match="exceeds"):
        L.max_pool(np.zeros((1, 3, 3)), 4, 1)


@settings(max_examples=20, deadline=None)
@given(st.permutations(range(4)), st.integers(0, 1000))
def test_max_pool_channel_equivariance(perm, seed):
    x = np.random.default_rng(seed).standard_normal((4, 7, 7))
    np.testing.assert_array_equal(L.max_pool(x[list(perm)], 3, 2), L.max_pool(x, 3, 2)[list(perm)])


def test_max_pool_ties_route_to_first_index():
    layer = L.MaxPool(2, 2)
    layer.forward(np.ones((1, 1, 2, 2)))
    dx, _ = layer.backward(np.ones((1, 1, 1, 1)))
    assert dx[0, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


# -- fully connected ----------------------------------------------------------------

def test_fully_connected_examples():
    x = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(L.fully_connected(x, np.eye(3), np.zeros(3)), x)
    b = np.array([0.5, -1.5])
    assert np.array_equal(L.fully_connected(np.zeros(3), np.ones((2, 3)), b), b)
    rng = np.random.default_rng(4)
    W, b, x = rng.standard_normal((4, 6)), rng.standard_normal(4), rng.standard_normal(6)
    oracle = [sum(W[i, j] * x[j] for j in range(6)) + b[i] for i in range(4)]
    np.testing.assert_allclose(L.fully_connected(x, W, b), oracle, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        L.fully_connected(np.zeros(5), W, b)


# -- dropout ---------------------------------------------------------------------------

def test_dropout_identity_paths():
    x = np.random.default_rng(0).standard_normal(100)
    assert L.dropout(x, 0.0, Rng(1), True) is x
    assert L.dropout(x, 0.7, Rng(1), False) is x
    layer = L.Dropout(0.5, Rng(2))
    assert layer.forward(x, training=False) is x


def test_dropout_mean_preserved():
    n = 10**5
    out = L.dropout(np.ones(n), 0.5, Rng(3), True)
    assert set(np.unique(out)) <= {0.0, 2.0}
    stderr = np.sqrt(0.5 * 0.5 / n) * 2.0
    assert abs(out.mean() - 1.0) < 4 * stderr


def test_dropout_rate_validation():
    with pytest.raises(ValueError):
        L.dropout(np.ones(3), 1.0, Rng(0), True)
    with pytest.raises(ValueError):
        L.Dropout(-0.1, Rng(0))


# -- softmax cross-entropy --------------------------------------------------------------

def test_softmax_xent_uniform_logits():
    loss, _ = L.softmax_xent(np.zeros((3, 5)), [0, 2, 4])
    assert loss == pytest.approx(np.log(5), abs=1e-15)


def test_softmax_xent_large_margin():
    logits = np.zeros((1, 4))
    logits[0, 2] = 1e4
    loss, grad = L.softmax_xent(logits, [2])
    assert loss == 0.0 and np.all(np.isfinite(grad))


def test_softmax_xent_gradient_central_differences():
    rng = np.random.default_rng(7)
    logits, labels = rng.standard_normal((4, 6)), np.array([0, 5, 2, 2])
    _, grad = L.softmax_xent(logits, labels)
    h = 1e-6
    for idx in np.ndindex(logits.shape):
        e = np.zeros_like(logits)
        e[idx] = h
        numeric = (L.softmax_xent_delta(logits, labels, e) - L.softmax_xent_delta(logits, labels, -e)) / (2 * h)
        assert L.relative_error(grad[idx], numeric) < 1e-6


def test_softmax_xent_label_range():
    with pytest.raises(ValueError):
        L.softmax_xent(np.zeros((2, 3)), [0, 3])


def test_loss_deltas_match_direct_differences():
    rng = np.random.default_rng(8)
    logits, d = rng.standard_normal((3, 4)), 0.1 * rng.standard_normal((3, 4))
    labels = [1, 0, 3]
    direct = L.softmax_xent(logits + d, labels)[0] - L.softmax_xent(logits, labels)[0]
    assert L.softmax_xent_delta(logits, labels, d) == pytest.approx(direct, rel=1e-12, abs=1e-14)
    target = rng.standard_normal((3, 4))
    direct = L.squared_loss(logits + d, target)[0] - L.squared_loss(logits, target)[0]
    assert L.squared_loss_delta(logits, target, d) == pytest.approx(direct, rel=1e-12)


def test_cos_delta():
    x = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(L.cos_delta(x, 0.3), np.cos(x + 0.3) - np.cos(x), rtol=0, atol=1e-15)


# -- gradient checks -----------------------------------------------------------------------

def test_relative_error_definition():
    assert L.relative_error(1.0, 1.0) == 0.0
    assert L.relative_error(2.0, 1.0) == pytest.approx(0.5)
    assert L.relative_error(0.0, 1e-12) == pytest.approx(1e-4)


def test_grad_check_linear_layer():
    rng = np.random.default_rng(0)
    layer = L.FullyConnected(rng.standard_normal((5, 7)), rng.standard_normal(5))
    report = L.grad_check(layer, rng.standard_normal((3, 7)))
    assert set(report.errors) == {"input", "param:W", "param:b"}
    assert report.worst < 1e-9


def test_grad_check_conv():
    rng = np.random.default_rng(1)
    layer = L.Conv2d(rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4), stride=2)
    report = L.grad_check(layer, rng.standard_normal((2, 3, 8, 8)),
                          weights=rng.standard_normal((2, 4, 3, 3)))
    assert report.worst < 1e-6


def test_grad_check_relu_away_from_kink():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 20))
    x = np.where(np.abs(x) < 1e-4, 1e-4, x)  # > 10 * step from the kink
    report = L.grad_check(L.ReLU(), x, weights=rng.standard_normal((3, 20)))
    assert report.worst < 1e-6 and report.skipped == 0


def test_grad_check_skips_kinks():
    x = np.array([[1e-7, -1e-7, 0.5, -0.5]])
    report = L.grad_check(L.ReLU(), x)
    assert report.skipped == 2 and report.passed()


@pytest.mark.parametrize("make,shape,training", [
    (lambda r: L.MaxPool(3, 2), (2, 3, 7, 7), False),
    (lambda r: L.GlobalAvgPool(), (2, 3, 4, 5), False),
    (lambda r: L.Flatten(), (2, 3, 2, 2), False),
    (lambda r: L.Cosine(), (2, 6), False),
    (lambda r: L.Dropout(0.3, Rng(4)), (3, 10), True),
])
def test_grad_check_other_layers(make, shape, training):
    rng = np.random.default_rng(3)
    x = rng.standard_normal(shape)
    out_shape = make(rng).forward(x).shape
    report = L.grad_check(make(rng), x, weights=rng.standard_normal(out_shape), training=training)
    assert report.passed(1e-5)


def test_grad_check_detects_corruption():
    rng = np.random.default_rng(4)
    layer = L.FullyConnected(rng.standard_normal((3, 4)), rng.standard_normal(3))
    assert not L.grad_check(layer, rng.standard_normal((2, 4)), corrupt=1e-3).passed()


def test_backward_before_forward():
    with pytest.raises(RuntimeError):
        L.ReLU().backward(np.ones(3))


def test_backward_shapes():
    rng = np.random.default_rng(6)
    layer = L.Conv2d(rng.standard_normal((2, 3, 2, 2)), np.zeros(2))
    x = rng.standard_normal((4, 3, 5, 5))
    out = layer.forward(x)
    dx, grads = layer.backward(np.ones_like(out))
    assert dx.shape == x.shape
    assert {k: v.shape for k, v in grads.items()} == {"W": (2, 3, 2, 2), "b": (2,)}


def test_he_normal_scale():
    w = L.he_normal(Rng(0), (400, 250), fan_in=250)
    assert abs(w.std() - np.sqrt(2 / 250)) < 0.02 * np.sqrt(2 / 250)
