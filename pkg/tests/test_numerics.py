import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pmn.errors import ConfigurationError, DimensionError
from pmn.numerics import (
    AttentionParams,
    LinearParams,
    bilinear_resize,
    conv1x1,
    cosine_map,
    cosine_similarity,
    gelu,
    layer_norm,
    linear_map,
    matmul,
    mm,
    multi_head_attention,
    relu,
    sigmoid,
    softmax_rows,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def rand_linear(rng, n_in, n_out):
    return LinearParams(rng.normal(size=(n_out, n_in)), rng.normal(size=n_out))


def rand_attention(rng, c, heads):
    return AttentionParams(*(rand_linear(rng, c, c) for _ in range(4)), heads=heads)


# matmul


def test_matmul_identity():
    a = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), a), a)


def test_matmul_hand_case():
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])


def test_matmul_triple_loop_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    ref = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(7):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.allclose(matmul(a, b), ref, atol=1e-6)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


@pytest.mark.parametrize(
    "sa,sb",
    [((4, 2, 3), (3, 5)), ((2, 3), (4, 3, 5)), ((4, 2, 3), (4, 3, 5)), ((2, 6, 2, 3), (3, 1)), ((2, 3), (2, 6, 3, 1))],
)
def test_mm_matches_broadcast_matmul(sa, sb):
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=sa), rng.normal(size=sb)
    assert np.allclose(mm(a, b), a @ b, atol=1e-12)


# softmax


def test_softmax_examples():
    assert np.allclose(softmax_rows([[0.0, 0.0]]), [[0.5, 0.5]])
    assert np.allclose(softmax_rows([[1000.0, 1000.0]]), [[0.5, 0.5]])
    assert np.allclose(softmax_rows([[0.0, math.log(3)]]), [[0.25, 0.75]])


@given(arrays(np.float64, (3, 5), elements=finite), finite)
def test_softmax_rows_sum_and_shift(x, c):
    s = softmax_rows(x)
    assert np.all(s >= 0)
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-6)
    assert np.allclose(softmax_rows(x + c), s, atol=1e-6)


# layer norm


def test_layer_norm_examples():
    one, zero = np.ones(4), np.zeros(4)
    assert np.array_equal(layer_norm(np.full((1, 4), 3.0), one, zero), np.zeros((1, 4)))
    assert np.allclose(layer_norm([[-1.0, 1.0]], np.ones(2), np.zeros(2)), [[-1, 1]], atol=1e-5)


def test_layer_norm_two_pass_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 7)) * 3 + 1
    scale, shift = rng.normal(size=7), rng.normal(size=7)
    row = x[0]
    mean = sum(row) / len(row)
    var = sum((v - mean) ** 2 for v in row) / len(row)
    ref = [(v - mean) / math.sqrt(var + 1e-5) * s + b for v, s, b in zip(row, scale, shift)]
    assert np.allclose(layer_norm(x, scale, shift)[0], ref, atol=1e-6)


@given(arrays(np.float64, (4, 6), elements=finite))
def test_layer_norm_moments(x):
    y = layer_norm(x, np.ones(6), np.zeros(6))
    ok = x.var(axis=-1) >= 1e-4
    assert np.all(np.abs(y.mean(axis=-1)) <= 1e-5)
    assert np.all(np.abs(y.var(axis=-1)[ok] - 1) <= 1e-3)


# attention


def test_attention_single_row_is_value_projection():
    rng = np.random.default_rng(3)
    p = rand_attention(rng, 8, 2)
    x = rng.normal(size=(1, 8))
    expected = linear_map(linear_map(x, p.value), p.output)
    assert np.allclose(multi_head_attention(x, p), expected, atol=1e-12)


def test_attention_per_head_loop_oracle():
    rng = np.random.default_rng(4)
    c, heads = 8, 2
    p = rand_attention(rng, c, heads)
    x = rng.normal(size=(3, c))
    q = x @ p.query.weight.T + p.query.bias
    k = x @ p.key.weight.T + p.key.bias
    v = x @ p.value.weight.T + p.value.bias
    d = c // heads
    ctx = np.zeros((3, c))
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        for i in range(3):
            logits = [float(q[i, sl] @ k[j, sl]) / math.sqrt(d) for j in range(3)]
            top = max(logits)
            w = [math.exp(z - top) for z in logits]
            total = sum(w)
            for j in range(3):
                ctx[i, sl] += w[j] / total * v[j, sl]
    ref = ctx @ p.output.weight.T + p.output.bias
    assert np.allclose(multi_head_attention(x, p), ref, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_attention_permutation_equivariance(seed, m):
    rng = np.random.default_rng(seed)
    p = rand_attention(rng, 8, 4)
    x = rng.normal(size=(m, 8))
    perm = rng.permutation(m)
    assert np.allclose(multi_head_attention(x[perm], p), multi_head_attention(x, p)[perm], atol=1e-5)


def test_attention_rejects_bad_heads():
    rng = np.random.default_rng(5)
    with pytest.raises(ConfigurationError):
        rand_attention(rng, 6, 4)


def test_attention_batched_weights_match_loop():
    rng = np.random.default_rng(6)
    ps = [rand_attention(rng, 4, 2) for _ in range(3)]
    stack = lambda get: LinearParams(np.stack([get(p).weight for p in ps]), np.stack([get(p).bias for p in ps]))  # noqa: E731
    batched = AttentionParams(*(stack(lambda p, n=n: getattr(p, n)) for n in ("query", "key", "value", "output")), heads=2)
    x = rng.normal(size=(5, 4))
    out = multi_head_attention(x, batched)
    for i, p in enumerate(ps):
        assert np.allclose(out[i], multi_head_attention(x, p), atol=1e-12)


# elementwise and linear


def test_activations():
    assert sigmoid(0.0) == 0.5
    assert np.array_equal(relu([-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0])
    assert gelu(0.0) == 0.0
    assert math.isclose(float(gelu(1.0)), 0.5 * (1 + math.erf(1 / math.sqrt(2))), rel_tol=1e-12)
    assert np.all(np.isfinite(sigmoid([-1e4, 1e4])))


def test_linear_map_identity_and_oracle():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(linear_map(x, LinearParams(np.eye(3), np.zeros(3))), x)
    rng = np.random.default_rng(7)
    p = rand_linear(rng, 3, 4)
    ref = [[sum(p.weight[o, i] * x[r, i] for i in range(3)) + p.bias[o] for o in range(4)] for r in range(2)]
    assert np.allclose(linear_map(x, p), ref, atol=1e-12)


def test_conv1x1_per_pixel():
    rng = np.random.default_rng(8)
    p = rand_linear(rng, 3, 2)
    x = rng.normal(size=(3, 4, 5))
    out = conv1x1(x, p)
    for y in range(4):
        for xx in range(5):
            assert np.allclose(out[:, y, xx], p.weight @ x[:, y, xx] + p.bias, atol=1e-12)
    with pytest.raises(DimensionError):
        conv1x1(np.zeros((2, 4, 4)), p)


# bilinear resize


def test_resize_constant_and_single_pixel():
    assert np.allclose(bilinear_resize(np.full((2, 3, 5), 1.5), 7, 4), 1.5)
    assert np.allclose(bilinear_resize(np.array([[[2.5]]]), 5, 3), 2.5)


def _bilinear_oracle(x, oh, ow):
    h, w = x.shape

    def src(i, n_in, n_out):
        s = max((i + 0.5) * n_in / n_out - 0.5, 0.0)
        i0 = min(int(math.floor(s)), n_in - 1)
        return i0, min(i0 + 1, n_in - 1), s - i0

    out = np.zeros((oh, ow))
    for i in range(oh):
        y0, y1, fy = src(i, h, oh)
        for j in range(ow):
            x0, x1, fx = src(j, w, ow)
            top = (1 - fx) * x[y0, x0] + fx * x[y0, x1]
            bot = (1 - fx) * x[y1, x0] + fx * x[y1, x1]
            out[i, j] = (1 - fy) * top + fy * bot
    return out


def test_resize_checkerboard_formula_oracle():
    board = np.array([[0.0, 1.0], [1.0, 0.0]])
    got = bilinear_resize(board, 4, 4)
    assert np.allclose(got, _bilinear_oracle(board, 4, 4), atol=1e-6)
    # hand values: corners replicate, interior is the 3:1 blend
    assert got[0, 0] == 0.0 and got[0, 3] == 1.0
    assert math.isclose(got[1, 1], 0.375, abs_tol=1e-12)


def test_resize_downsample_oracle():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(8, 6))
    assert np.allclose(bilinear_resize(x, 3, 5), _bilinear_oracle(x, 3, 5), atol=1e-12)


def test_resize_zero_target():
    with pytest.raises(DimensionError):
        bilinear_resize(np.zeros((2, 2)), 0, 3)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), st.integers(1, 9), st.integers(1, 9))
def test_resize_preserves_bounds(x, oh, ow):
    y = bilinear_resize(x, oh, ow)
    assert y.min() >= x.min() - 1e-6 and y.max() <= x.max() + 1e-6


# cosine


def test_cosine_examples():
    u = np.array([1.0, 2.0, 3.0])
    assert math.isclose(cosine_similarity(u, u), 1.0)
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert math.isclose(cosine_similarity(u, 3 * u), 1.0)
    assert cosine_similarity(u, np.zeros(3)) == 0.0


vec = arrays(np.float64, 4, elements=st.floats(-10, 10, allow_nan=False))


@given(vec, vec, st.floats(0.01, 100))
def test_cosine_properties(u, v, a):
    c = cosine_similarity(u, v)
    assert -1.0 <= c <= 1.0
    assert c == cosine_similarity(v, u)
    if np.linalg.norm(u) > 1e-6 and np.linalg.norm(v) > 1e-6:
        assert math.isclose(cosine_similarity(a * u, v), c, abs_tol=1e-9)


def test_cosine_map_double_loop_oracle():
    rng = np.random.default_rng(10)
    feats = rng.normal(size=(3, 4, 4))
    feats[:, 0, 0] = 0.0
    protos = rng.normal(size=(2, 3))
    out = cosine_map(feats, protos)
    for n in range(2):
        for y in range(4):
            for x in range(4):
                assert math.isclose(out[n, y, x], cosine_similarity(feats[:, y, x], protos[n]), abs_tol=1e-9)
    assert np.all(out[:, 0, 0] == 0.0)
