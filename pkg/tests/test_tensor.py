import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal

from filterdecode.errors import ShapeError
from filterdecode.tensor import (
    FilterBank,
    as_tensor3,
    correlate_batch,
    correlate_valid,
    interp_matrix,
    max_pool,
    normalize_range,
    relu,
    softmax,
    substitute,
    substitute_bank,
    upsample2x,
    upsample_stack,
)


def bank_of(*filters):
    return FilterBank.from_filters(filters)


def brute_correlate(x, f, stride=1):
    H, W, C = x.shape
    h, w, _ = f.shape
    out = np.zeros(((H - h) // stride + 1, (W - w) // stride + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            total = 0.0
            for a in range(h):
                for b in range(w):
                    for c in range(C):
                        total += x[i * stride + a, j * stride + b, c] * f[a, b, c]
            out[i, j] = total
    return out


def brute_substitute(m, f):
    H, W = m.shape
    h, w = f.shape
    out = np.zeros((H + h - 1, W + w - 1))
    for x in range(H):
        for y in range(W):
            out[x:x + h, y:y + w] += m[x, y] * f
    return out


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# -- correlate_valid --------------------------------------------------------


def test_correlate_lenet_first_layer_shape(rng):
    bank = FilterBank(rng.standard_normal((20, 5, 5, 1)), np.zeros(20))
    assert correlate_valid(rng.standard_normal((28, 28, 1)), bank).shape == (24, 24, 20)


def test_correlate_selector_filter_is_identity(rng):
    x = rng.standard_normal((6, 7, 3))
    f = np.zeros((1, 1, 3))
    f[0, 0, 1] = 1.0
    out = correlate_valid(x, bank_of(f), use_bias=False)
    np.testing.assert_array_equal(out[:, :, 0], x[:, :, 1])


def test_correlate_small_worked_example():
    x = np.arange(1, 10, dtype=float).reshape(3, 3)
    out = correlate_valid(x, bank_of([[1, 0], [0, 1]]), use_bias=False)
    np.testing.assert_array_equal(out[:, :, 0], [[6, 8], [12, 14]])


def test_correlate_matches_brute_force_and_scipy(rng):
    x = rng.standard_normal((9, 8, 3))
    f = rng.standard_normal((4, 3, 3))
    out = correlate_valid(x, bank_of(f), use_bias=False)[:, :, 0]
    np.testing.assert_allclose(out, brute_correlate(x, f), atol=1e-12)
    via_scipy = sum(signal.correlate2d(x[:, :, c], f[:, :, c], mode="valid") for c in range(3))
    np.testing.assert_allclose(out, via_scipy, atol=1e-12)


def test_correlate_does_not_flip_kernel():
    x = np.zeros((3, 3))
    x[0, 0] = 1.0
    f = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = correlate_valid(x, bank_of(f), use_bias=False)
    assert out[0, 0, 0] == 1.0


def test_correlate_bias_added_only_when_requested(rng):
    x = rng.standard_normal((5, 5, 1))
    bank = FilterBank(rng.standard_normal((2, 3, 3, 1)), np.array([1.5, -2.0]))
    with_bias = correlate_valid(x, bank)
    without = correlate_valid(x, bank, use_bias=False)
    np.testing.assert_allclose(with_bias - without, np.broadcast_to([1.5, -2.0], with_bias.shape))


@pytest.mark.parametrize("stride", [2, 3, 4])
def test_correlate_stride_is_subsampled_stride_one(rng, stride):
    x = rng.standard_normal((15, 13, 2))
    bank = FilterBank(rng.standard_normal((3, 4, 3, 2)), rng.standard_normal(3))
    full = correlate_valid(x, bank)
    np.testing.assert_array_equal(correlate_valid(x, bank, stride=stride), full[::stride, ::stride])
    assert correlate_valid(x, bank, stride=stride).shape[:2] == ((15 - 4) // stride + 1, (13 - 3) // stride + 1)


def test_correlate_batch_matches_single(rng):
    xs = rng.standard_normal((4, 10, 10, 2))
    bank = FilterBank(rng.standard_normal((3, 3, 3, 2)), rng.standard_normal(3))
    batch = correlate_batch(xs, bank, stride=2)
    for i in range(4):
        np.testing.assert_allclose(batch[i], correlate_valid(xs[i], bank, stride=2), atol=1e-12)


def test_correlate_rejects_mismatch_naming_shapes(rng):
    bank = FilterBank(rng.standard_normal((1, 3, 3, 2)), None)
    with pytest.raises(ShapeError, match=r"\(5, 5, 1\).*\(3, 3, 2\)"):
        correlate_valid(np.zeros((5, 5, 1)), bank)
    with pytest.raises(ShapeError):
        correlate_valid(np.zeros((2, 5, 2)), bank)


def test_filter_bank_invariants():
    with pytest.raises(ShapeError):
        FilterBank.from_filters([np.zeros((3, 3)), np.zeros((2, 2))])
    with pytest.raises(ShapeError):
        FilterBank(np.zeros((2, 3, 3, 1)), np.zeros(3))
    assert len(FilterBank(np.zeros((2, 3, 3, 1)), None)) == 2


def test_as_tensor3_rejects_bad_rank():
    assert as_tensor3(np.zeros((2, 3))).shape == (2, 3, 1)
    with pytest.raises(ShapeError):
        as_tensor3(np.zeros(4))


# -- substitute -------------------------------------------------------------


def test_substitute_single_pixel_pastes_scaled_filter(rng):
    f = rng.standard_normal((3, 3))
    np.testing.assert_allclose(substitute([[2.5]], f)[:, :, 0], 2.5 * f)


def test_substitute_zero_map():
    out = substitute(np.zeros((4, 6)), np.ones((3, 2)))
    assert out.shape == (6, 7, 1)
    assert not out.any()


def test_substitute_worked_example():
    a, b, c, d = 2.0, 3.0, 5.0, 7.0
    out = substitute([[1, 0], [0, 1]], [[a, b], [c, d]])[:, :, 0]
    np.testing.assert_array_equal(out, [[a, b, 0], [c, d + a, b], [0, c, d]])


def test_substitute_equals_full_convolution(rng):
    m = rng.standard_normal((6, 5))
    f = rng.standard_normal((4, 3))
    out = substitute(m, f)[:, :, 0]
    np.testing.assert_allclose(out, brute_substitute(m, f), atol=1e-12)
    np.testing.assert_allclose(out, signal.convolve2d(m, f, mode="full"), atol=1e-12)


def test_substitute_rejects_multichannel():
    with pytest.raises(ShapeError):
        substitute(np.zeros((3, 3, 2)), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        substitute(np.zeros((3, 3)), np.zeros((2, 2, 2)))


def test_substitute_bilinear(rng):
    A, B, f, g = (rng.standard_normal((8, 8)) for _ in range(4))
    alpha, beta = 1.7, -0.3
    np.testing.assert_allclose(substitute(alpha * A + beta * B, f),
                               alpha * substitute(A, f) + beta * substitute(B, f), atol=1e-9)
    np.testing.assert_allclose(substitute(A, alpha * f + beta * g),
                               alpha * substitute(A, f) + beta * substitute(A, g), atol=1e-9)


def test_substitute_commutes(rng):
    A = rng.standard_normal((8, 8))
    f = rng.standard_normal((5, 3))
    np.testing.assert_allclose(substitute(A, f), substitute(f, A), atol=1e-9)


def test_substitute_bank_sums_over_map_channels(rng):
    maps = rng.standard_normal((4, 5, 3))
    weights = rng.standard_normal((3, 2, 3, 2))
    out = substitute_bank(maps, weights)
    for c in range(2):
        want = sum(brute_substitute(maps[:, :, j], weights[j, :, :, c]) for j in range(3))
        np.testing.assert_allclose(out[:, :, c], want, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5),
    st.integers(0, 6), st.integers(0, 6),
)
def test_composition_identity(seed, h1, w1, h2, w2, extra_h, extra_w):
    """Correlating twice equals correlating once with the substituted filter."""
    rng = np.random.default_rng(seed)
    image = rng.standard_normal((h1 + h2 - 1 + extra_h, w1 + w2 - 1 + extra_w))
    f1 = rng.standard_normal((h1, w1))
    f2 = rng.standard_normal((h2, w2))
    twice = correlate_valid(correlate_valid(image, bank_of(f1), use_bias=False), bank_of(f2), use_bias=False)
    once = correlate_valid(image, bank_of(substitute(f1, f2)), use_bias=False)
    np.testing.assert_allclose(twice, once, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite),
       arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite))
def test_substitute_shape_law(m, f):
    assert substitute(m, f).shape == (m.shape[0] + f.shape[0] - 1, m.shape[1] + f.shape[1] - 1, 1)


# -- pooling and activations --------------------------------------------------


def test_max_pool_examples(rng):
    assert max_pool(rng.standard_normal((24, 24, 20))).shape == (12, 12, 20)
    np.testing.assert_array_equal(max_pool(np.full((4, 6, 2), 3.0)), np.full((2, 3, 2), 3.0))
    assert max_pool([[1, 7], [3, 5]])[0, 0, 0] == 7


def test_max_pool_rejects_odd():
    with pytest.raises(ShapeError):
        max_pool(np.zeros((3, 4, 1)))


def test_relu_examples(rng):
    np.testing.assert_array_equal(relu(np.array([[-1.0, 0.0, 2.0]]))[0, :, 0], [0, 0, 2])
    pos = np.abs(rng.standard_normal((3, 3, 2)))
    np.testing.assert_array_equal(relu(pos), pos)
    assert not relu(-pos - 1).any()


def _channels(values):
    return np.asarray(values, dtype=float).reshape(1, 1, -1)


def test_softmax_examples():
    np.testing.assert_allclose(softmax(_channels(np.zeros(10))).ravel(), np.full(10, 0.1))
    one_hot = softmax(_channels([3.0] + [-1e4] * 9)).ravel()
    np.testing.assert_allclose(one_hot, np.eye(10)[0], atol=1e-12)
    np.testing.assert_allclose(softmax(_channels(np.log([1, 2, 3]))).ravel(), [1 / 6, 2 / 6, 3 / 6])


def test_softmax_rejects_spatial_extent():
    with pytest.raises(ShapeError):
        softmax(np.zeros((2, 1, 3)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-300, 300)), st.randoms())
def test_softmax_normalized_and_permutation_equivariant(z, rnd):
    p = softmax(_channels(z)).ravel()
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) < 1e-12
    perm = list(range(len(z)))
    rnd.shuffle(perm)
    np.testing.assert_allclose(softmax(_channels(z[perm])).ravel(), p[perm], rtol=1e-12, atol=0)


# -- upsampling ------------------------------------------------------------------


@pytest.mark.parametrize("method", ["nearest", "bilinear", "bicubic"])
def test_upsample_doubles_size(method, rng):
    assert upsample2x(rng.standard_normal((3, 3)), method).shape == (6, 6, 1)
    assert upsample2x(rng.standard_normal((4, 7)), method).shape == (8, 14, 1)


@pytest.mark.parametrize("method", ["nearest", "bilinear", "bicubic"])
def test_upsample_constant_plane(method):
    np.testing.assert_allclose(upsample2x(np.full((5, 4), 2.5), method), 2.5, atol=1e-12)


def test_upsample_nearest_duplicates_pixels():
    out = upsample2x([[1, 2], [3, 4]], "nearest")[:, :, 0]
    np.testing.assert_array_equal(out, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])


def test_upsample_bilinear_center_aligned_with_clamped_edges():
    # outputs sample the input at -0.25, 0.25, 0.75, 1.25
    out = upsample2x([[0.0, 1.0]], "bilinear")[0, :, 0]
    np.testing.assert_allclose(out, [0.0, 0.25, 0.75, 1.0])


def test_upsample_bicubic_matches_catmull_rom_polynomials():
    # standard Catmull-Rom weights for the taps at floor(p)-1 .. floor(p)+2, t = frac(p)
    def weights(t):
        return np.array([(-t**3 + 2 * t**2 - t) / 2, (3 * t**3 - 5 * t**2 + 2) / 2,
                         (-3 * t**3 + 4 * t**2 + t) / 2, (t**3 - t**2) / 2])

    m = interp_matrix(5, "bicubic")
    np.testing.assert_allclose(m[4, 0:4], weights(0.75), atol=1e-15)  # pos 1.75, taps 0..3
    np.testing.assert_allclose(m[5, 1:5], weights(0.25), atol=1e-15)  # pos 2.25, taps 1..4
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-15)


def test_upsample_bicubic_reproduces_linear_ramp_in_interior():
    ramp = np.arange(8.0)[None, :]
    out = upsample2x(ramp, "bicubic")[0, :, 0]
    pos = (np.arange(16) + 0.5) / 2 - 0.5
    np.testing.assert_allclose(out[3:-3], pos[3:-3], atol=1e-12)


def test_upsample_rejects_multichannel_and_unknown_method():
    with pytest.raises(ShapeError):
        upsample2x(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        upsample2x(np.zeros((2, 2)), "lanczos")


def test_upsample_stack_is_per_channel(rng):
    x = rng.standard_normal((2, 3, 4, 3))
    out = upsample_stack(x, "bicubic")
    for n in range(2):
        for c in range(3):
            np.testing.assert_allclose(out[n, :, :, c], upsample2x(x[n, :, :, c], "bicubic")[:, :, 0], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3)), elements=finite))
def test_max_pool_inverts_nearest_upsampling(x):
    np.testing.assert_array_equal(max_pool(upsample_stack(x, "nearest")), x)


# -- normalize_range -------------------------------------------------------------


def test_normalize_range_examples():
    np.testing.assert_allclose(normalize_range(np.array([[0, 5], [10, 5]])), [[0, 0.5], [1, 0.5]])
    assert not normalize_range(np.full((3, 3, 2), 4.0)).any()
    np.testing.assert_allclose(normalize_range(np.array([-2, 0, 2])), [0, 0.5, 1])


def test_normalize_range_is_joint_over_channels():
    x = np.zeros((1, 1, 2))
    x[0, 0] = [1.0, 3.0]
    np.testing.assert_allclose(normalize_range(x).ravel(), [0.0, 1.0])
