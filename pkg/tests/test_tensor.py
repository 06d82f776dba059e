import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from deepmeanmaps import tensor as T


def naive_matmul(a, b):
    p, q = a.shape
    r = b.shape[1]
    out = np.zeros((p, r))
    for i in range(p):
        for j in range(r):
            for k in range(q):
                out[i, j] += a[i, k] * b[k, j]
    return out


# -- zeros / elementwise -------------------------------------------------

@pytest.mark.parametrize("shape,count", [([2, 3], 6), ([1], 1), ([4, 1, 1], 4)])
def test_zeros(shape, count):
    z = T.zeros(shape)
    assert z.shape == tuple(shape) and z.size == count
    assert np.all(z == 0.0)


@pytest.mark.parametrize("shape", [[], [0], [3, 0]])
def test_zeros_rejects_bad_shapes(shape):
    with pytest.raises(ValueError):
        T.zeros(shape)


def test_elementwise_examples():
    assert T.elementwise("add", np.array([1.0, 2.0]), np.array([3.0, 4.0])).tolist() == [4.0, 6.0]
    x = np.arange(6.0).reshape(2, 3)
    assert np.all(T.elementwise("mul", x, T.zeros([2, 3])) == 0)
    assert np.all(T.elementwise("sub", x, x) == 0)


def test_elementwise_errors():
    with pytest.raises(ValueError, match="shape mismatch"):
        T.elementwise("add", np.ones(3), np.ones((3, 1)))
    with pytest.raises(ValueError, match="unknown op"):
        T.elementwise("div", np.ones(3), np.ones(3))


# -- matmul ----------------------------------------------------------------

def test_matmul_examples():
    x = np.array([[1.5, -2.0], [0.25, 3.0]])
    assert np.array_equal(T.matmul(np.eye(2), x), x)
    assert T.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones((2, 1))).tolist() == [[3.0], [7.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    np.testing.assert_allclose(T.matmul(a, b), naive_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_dimension_mismatch():
    with pytest.raises(ValueError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32))
def test_matmul_associative(p, q, r, s, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.standard_normal((p, q)), rng.standard_normal((q, r)), rng.standard_normal((r, s))
    left = T.matmul(T.matmul(a, b), c)
    right = T.matmul(a, T.matmul(b, c))
    scale = np.abs(a).sum() * np.abs(b).max() * np.abs(c).max() + 1
    assert np.max(np.abs(left - right)) <= 1e-9 * scale


# -- reduce_mean -------------------------------------------------------------

def test_reduce_mean_examples():
    c = np.full((3, 4, 5), 2.7)
    for axes in ([0], [1, 2], [0, 1, 2]):
        np.testing.assert_allclose(T.reduce_mean(c, axes), 2.7, rtol=0, atol=1e-12)
    assert T.reduce_mean(np.array([[1.0, 3.0], [5.0, 7.0]]), [1]).tolist() == [2.0, 6.0]


def test_reduce_mean_double_loop_oracle():
    a = np.random.default_rng(1).standard_normal((3, 4, 5))
    oracle = np.zeros(3)
    for i in range(3):
        for j in range(4):
            for k in range(5):
                oracle[i] += a[i, j, k]
    np.testing.assert_allclose(T.reduce_mean(a, [1, 2]), oracle / 20, rtol=0, atol=1e-12)


def test_reduce_mean_rejects_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        T.reduce_mean(np.ones((2, 2)), [1, -1])


@given(hnp.arrays(np.float64, hnp.array_shapes(max_dims=3, max_side=4),
                  elements=st.floats(-1e3, 1e3)))
def test_reduce_mean_all_axes_of_constant(a):
    c = float(a.flat[0])
    out = T.reduce_mean(np.full(a.shape, c), range(a.ndim))
    assert abs(out - c) <= 1e-12 * max(1.0, abs(c))


# -- random streams ---------------------------------------------------------

def test_gaussian_mean_clt():
    x = T.gaussian(T.Rng(7), [10**5], 0.0, 1.0)
    assert abs(x.mean()) < 4 / np.sqrt(10**5)


@pytest.mark.parametrize("dtype", [T.F32, T.F64])
def test_uniform_stays_in_half_open_range(dtype):
    u = T.uniform(T.Rng(11), [10**5], 0.0, 2 * np.pi, dtype=dtype)
    assert u.dtype == dtype
    assert u.min() >= 0 and u.max() < 2 * np.pi


def test_same_seed_same_draws():
    assert np.array_equal(T.gaussian(T.Rng(5, 2), [50]), T.gaussian(T.Rng(5, 2), [50]))
    assert np.array_equal(T.uniform(T.Rng(5), [50]), T.uniform(T.Rng(5), [50]))
    assert not np.array_equal(T.gaussian(T.Rng(5, 1), [50]), T.gaussian(T.Rng(5, 2), [50]))


def test_invalid_distribution_parameters():
    with pytest.raises(ValueError):
        T.gaussian(T.Rng(0), [3], std=0)
    with pytest.raises(ValueError):
        T.uniform(T.Rng(0), [3], 1.0, 1.0)


def test_derive_seed_is_stable_and_path_sensitive():
    assert T.derive_seed(1, "a", 2) == T.derive_seed(1, "a", 2)
    assert T.derive_seed(1, "a", 2) != T.derive_seed(1, "a2")
    assert T.Rng(3).spawn("x").seed == T.Rng(3).spawn("x").seed


# -- binary format ------------------------------------------------------------

def test_tensor_bytes_layout():
    a = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
    buf = T.tensor_to_bytes(a)
    assert buf[:4] == b"DMMT" and buf[4] == 1 and buf[5] == 0
    assert int.from_bytes(buf[6:10], "little") == 2
    assert int.from_bytes(buf[10:18], "little") == 1
    assert int.from_bytes(buf[18:26], "little") == 3
    assert np.frombuffer(buf[26:], "<f4").tolist() == [1.0, 2.0, 3.0]


@given(hnp.arrays(st.sampled_from([np.float32, np.float64]), hnp.array_shapes(max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_tensor_round_trip(a):
    b = T.tensor_from_bytes(T.tensor_to_bytes(a))
    assert b.dtype == a.dtype and b.shape == a.shape
    assert np.array_equal(a, b)


def test_tensor_format_errors(tmp_path):
    buf = T.tensor_to_bytes(np.ones(3))
    with pytest.raises(ValueError, match="magic"):
        T.tensor_from_bytes(b"XXXX" + buf[4:])
    with pytest.raises(ValueError, match="truncated"):
        T.tensor_from_bytes(buf[:-1])
    with pytest.raises(TypeError):
        T.tensor_to_bytes(np.ones(3, dtype=np.int32))
    T.save_tensor(tmp_path / "a.dmmt", np.arange(4.0))
    assert T.load_tensor(tmp_path / "a.dmmt").tolist() == [0.0, 1.0, 2.0, 3.0]
