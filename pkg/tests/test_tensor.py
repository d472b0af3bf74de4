"""Tensor-core oracles: naive re-implementations of every op, forward
agreement, backward finite differences, and the FFT contracts."""

import numpy as np
import pytest

from hapnet import tensor as T
from hapnet.errors import ConfigError, NumericError, ShapeError
from hapnet.tensor import Tensor, halfspec_weights, irfft2, rfft2, set_debug_finite
from hapnet.verify import check_tensor_ops


# -- independent oracles -------------------------------------------------------


def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def window_mean_oracle(x, s):
    out = []
    for start in range(0, len(x), s):
        out.append(np.mean(x[start : start + s]))
    return np.array(out)


def sliding_conv_oracle(x, kernels):
    """Naive per-channel cross-correlation with reflect padding."""
    c, h, w = x.shape
    _, k, _ = kernels.shape
    pad = (k - 1) // 2
    xp = np.pad(x, [(0, 0), (pad, pad), (pad, pad)], mode="reflect")
    out = np.zeros_like(x)
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for di in range(k):
                    for dj in range(k):
                        acc += xp[ch, i + di, j + dj] * kernels[ch, di, dj]
                out[ch, i, j] = acc
    return out


def dft2_oracle(x):
    """O(N^2) double-sum DFT, half spectrum, unnormalized forward."""
    h, w = x.shape
    wh = w // 2 + 1
    out = np.zeros((h, wh), dtype=complex)
    for u in range(h):
        for v in range(wh):
            acc = 0.0 + 0.0j
            for m in range(h):
                for n in range(w):
                    acc += x[m, n] * np.exp(-2j * np.pi * (u * m / h + v * n / w))
            out[u, v] = acc
    return out


# -- matmul ---------------------------------------------------------------------


def test_matmul_identity():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((3, 3))
    out = T.matmul(Tensor(np.eye(3)), Tensor(m))
    assert np.allclose(out.data, m, atol=0)


def test_matmul_hand_permutation():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[0.0, 1.0], [1.0, 0.0]])
    assert np.array_equal(T.matmul(a, b).data, [[2.0, 1.0], [4.0, 3.0]])


def test_matmul_against_triple_loop_oracle():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((5, 4))
    b = rng.standard_normal((4, 3))
    got = T.matmul(Tensor(a), Tensor(b)).data
    assert np.abs(got - matmul_oracle(a, b)).max() < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as exc:
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


# -- softmax ----------------------------------------------------------------------


def test_softmax_uniform_on_constant():
    out = T.softmax(Tensor([0.0, 0.0, 0.0]), axis=0).data
    assert np.abs(out - 1.0 / 3.0).max() < 1e-15


def test_softmax_shift_invariance():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 6))
    a = T.softmax(Tensor(x), axis=1).data
    b = T.softmax(Tensor(x + 123.456), axis=1).data
    assert np.abs(a - b).max() < 1e-12


def test_softmax_extended_precision_oracle():
    x = np.array([1.0, 2.0, 3.0])
    import mpmath  # only the oracle uses extended precision

    mpmath.mp.dps = 50
    es = [mpmath.exp(v) for v in x]
    total = sum(es)
    want = np.array([float(e / total) for e in es])
    got = T.softmax(Tensor(x), axis=0).data
    assert np.abs(got - want).max() < 1e-12


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_softmax_rows_stochastic(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((5, 9)) * 10
    out = T.softmax(Tensor(x), axis=-1).data
    assert (out >= 0).all()
    assert np.abs(out.sum(axis=-1) - 1.0).max() < 1e-12


# -- avg_pool -----------------------------------------------------------------------


def test_avg_pool_constant():
    out = T.avg_pool(Tensor([1.0, 1.0, 1.0, 1.0]), axis=0, factor=2).data
    assert np.array_equal(out, [1.0, 1.0])


def test_avg_pool_hand_case():
    out = T.avg_pool(Tensor([1.0, 2.0, 3.0, 4.0]), axis=0, factor=2).data
    assert np.array_equal(out, [1.5, 3.5])


def test_avg_pool_truncated_window_matches_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(7)
    got = T.avg_pool(Tensor(x), axis=0, factor=2).data
    assert np.abs(got - window_mean_oracle(x, 2)).max() < 1e-15


def test_avg_pool_rejects_bad_factor():
    with pytest.raises(ConfigError):
        T.avg_pool(Tensor([1.0, 2.0]), axis=0, factor=0)


# -- depthwise conv -------------------------------------------------------------------


def test_depthwise_delta_kernel_is_identity():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 5, 5))
    k = np.zeros((3, 3, 3))
    k[:, 1, 1] = 1.0
    out = T.depthwise_conv2d(Tensor(x), Tensor(k)).data
    assert np.array_equal(out, x)


def test_depthwise_ones_kernel_on_constant_field():
    x = np.full((2, 6, 6), 0.7)
    k = np.ones((2, 3, 3))
    out = T.depthwise_conv2d(Tensor(x), Tensor(k)).data
    assert np.abs(out - 9 * 0.7).max() < 1e-12


def test_depthwise_matches_sliding_window_oracle():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 5, 5))
    k = rng.standard_normal((2, 3, 3))
    got = T.depthwise_conv2d(Tensor(x), Tensor(k)).data
    assert np.abs(got - sliding_conv_oracle(x, k)).max() < 1e-12


def test_depthwise_channel_mismatch():
    with pytest.raises(ShapeError):
        T.depthwise_conv2d(Tensor(np.zeros((3, 5, 5))), Tensor(np.zeros((2, 3, 3))))


def test_conv2d_matches_depthwise_composition():
    # A conv whose weight is diagonal across channels equals depthwise.
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 5, 5))
    k = rng.standard_normal((2, 3, 3))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0] = k[0]
    w[1, 1] = k[1]
    got = T.conv2d(Tensor(x), Tensor(w)).data
    assert np.abs(got - sliding_conv_oracle(x, k)).max() < 1e-12


# -- FFT --------------------------------------------------------------------------------


def test_rfft2_constant_input_dc_only():
    x = np.full((4, 6), 2.5)
    spec = rfft2(x)
    assert abs(spec[0, 0] - 2.5 * 24) < 1e-9
    spec[0, 0] = 0
    assert np.abs(spec).max() < 1e-9


@pytest.mark.parametrize("shape", [(4, 6), (3, 5), (2, 2), (5, 4)])
def test_fft_round_trip(shape):
    rng = np.random.default_rng(7)
    x = rng.standard_normal(shape)
    assert np.abs(irfft2(rfft2(x), shape[1]) - x).max() < 1e-10
    spec = rfft2(x)
    assert np.abs(rfft2(irfft2(spec, shape[1])) - spec).max() < 1e-10


@pytest.mark.parametrize("shape", [(3, 4), (4, 4), (2, 5), (8, 8), (5, 8), (8, 7)])
def test_rfft2_matches_naive_dft_oracle(shape):
    rng = np.random.default_rng(8)
    x = rng.standard_normal(shape)
    assert np.abs(rfft2(x) - dft2_oracle(x)).max() < 1e-9


def test_rfft2_linearity():
    rng = np.random.default_rng(9)
    x, y = rng.standard_normal((2, 4, 6))
    alpha, beta = 1.7, -0.3
    lhs = rfft2(alpha * x + beta * y)
    rhs = alpha * rfft2(x) + beta * rfft2(y)
    assert np.abs(lhs - rhs).max() < 1e-10


def test_halfspec_weights():
    assert np.array_equal(halfspec_weights(6), [1, 2, 2, 1])
    assert np.array_equal(halfspec_weights(5), [1, 2, 2])


# -- backward contracts ---------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    T.tensor_sum(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_quadratic_gives_two_x():
    rng = np.random.default_rng(10)
    data = rng.standard_normal((3, 4))
    x = Tensor(data, requires_grad=True)
    T.tensor_sum(x * x).backward()
    assert np.abs(x.grad - 2 * data).max() < 1e-14


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_backward_visits_shared_node_once():
    # y = x + x: gradient must be exactly 2, not 1 or 4.
    x = Tensor(np.ones(4), requires_grad=True)
    T.tensor_sum(x + x).backward()
    assert np.array_equal(x.grad, np.full(4, 2.0))


def test_every_op_passes_finite_differences():
    results = check_tensor_ops(seed=0)
    failures = [str(r) for r in results if not r.passed]
    assert not failures, "\n".join(failures)


# -- misc contracts --------------------------------------------------------------------


def test_ops_are_deterministic():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((4, 8, 8))
    k = rng.standard_normal((4, 3, 3))

    def pipeline():
        t = Tensor(x, requires_grad=True)
        out = T.tensor_sum(T.softmax(T.depthwise_conv2d(t, Tensor(k)), axis=-1) * 0.5)
        out.backward()
        return out.data.copy(), t.grad.copy()

    a_val, a_grad = pipeline()
    b_val, b_grad = pipeline()
    assert np.array_equal(a_val, b_val)
    assert np.array_equal(a_grad, b_grad)


def test_debug_finite_mode_catches_nan():
    set_debug_finite(True)
    try:
        bad = Tensor(np.array([1.0, np.inf]))
        with pytest.raises(NumericError):
            bad * 0.0  # inf * 0 -> nan
    finally:
        set_debug_finite(False)


def test_grad_shape_matches_data_shape_invariant():
    x = Tensor(np.ones((2, 5)), requires_grad=True)
    T.tensor_sum(T.relu(x)).backward()
    assert x.grad.shape == x.data.shape


def test_float32_mode_preserved_end_to_end():
    rng = np.random.default_rng(12)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32), requires_grad=True)
    k = Tensor(rng.standard_normal((3, 3, 3)).astype(np.float32), requires_grad=True)
    out = T.tensor_mean(T.gelu(T.depthwise_conv2d(x, k)))
    assert out.dtype == np.float32
    out.backward()
    assert x.grad.dtype == np.float32 and k.grad.dtype == np.float32
