"""Gradient and semantics checks for the reverse-mode tape.

Every op gets a finite-difference check at a handful of random points; the
fused layers (linear, layer_norm, causal_attention) additionally get value
checks against a straightforward composition of primitive ops.
"""

import numpy as np
import pytest

from segreward.autodiff import (
    Tensor,
    as_tensor,
    causal_attention,
    concat,
    layer_norm,
    linear,
    log_softmax,
    no_grad,
    parameter,
)
from segreward.rng import RngStream

from conftest import tensor_grad_check

TOL = 1e-6


def _leaf(rng, shape, positive=False):
    x = rng.normal(size=shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)


def test_arithmetic_grads():
    rng = RngStream(0).fork("arith")
    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (3, 4))
    report = tensor_grad_check(lambda: ((a * b + a - b) / (b * b + 3.0)).sum(), [a, b])
    assert report.max_rel_error < TOL


def test_broadcasting_grads():
    rng = RngStream(1).fork("bcast")
    a = _leaf(rng, (3, 1))
    b = _leaf(rng, (4,))
    c = _leaf(rng, ())
    report = tensor_grad_check(lambda: ((a + b) * c - b).sum(), [a, b, c])
    assert report.max_rel_error < TOL


def test_matmul_grads_2d():
    rng = RngStream(2).fork("mm2")
    a = _leaf(rng, (3, 5))
    b = _leaf(rng, (5, 2))
    report = tensor_grad_check(lambda: (a @ b).sum(), [a, b])
    assert report.max_rel_error < TOL


def test_matmul_grads_batched():
    rng = RngStream(3).fork("mmb")
    a = _leaf(rng, (2, 3, 4))
    b = _leaf(rng, (2, 4, 3))
    report = tensor_grad_check(lambda: (a @ b).sum(), [a, b])
    assert report.max_rel_error < TOL


def test_matmul_grads_batched_times_2d():
    # the fast path that folds batch dims into one GEMM
    rng = RngStream(4).fork("mmf")
    a = _leaf(rng, (2, 3, 4))
    w = _leaf(rng, (4, 5))
    report = tensor_grad_check(lambda: (a @ w).sum(), [a, w])
    assert report.max_rel_error < TOL


def test_reduction_grads():
    rng = RngStream(5).fork("red")
    a = _leaf(rng, (3, 4))
    report = tensor_grad_check(
        lambda: (a.sum(axis=0) * 2.0).sum() + a.mean(axis=1, keepdims=True).sum() + a.mean(),
        [a])
    assert report.max_rel_error < TOL


def test_shape_op_grads():
    rng = RngStream(6).fork("shape")
    a = _leaf(rng, (2, 3, 4))
    report = tensor_grad_check(
        lambda: (a.reshape(6, 4).swapaxes(0, 1) * 1.5).sum(), [a])
    assert report.max_rel_error < TOL


def test_getitem_grads_with_duplicate_indices():
    rng = RngStream(7).fork("get")
    a = _leaf(rng, (5, 3))
    idx = np.array([0, 2, 2, 4])

    def build():
        return (a[idx] * a[idx]).sum() + a[1:3].sum()

    report = tensor_grad_check(build, [a])
    assert report.max_rel_error < TOL


def test_nonlinearity_grads():
    rng = RngStream(8).fork("nl")
    a = _leaf(rng, (4, 3))
    p = _leaf(rng, (4, 3), positive=True)

    def build():
        return (a.tanh().sum() + a.exp().mean() + p.log().sum()
                + p.sqrt().sum() + (a ** 3).sum())

    report = tensor_grad_check(build, [a, p])
    assert report.max_rel_error < TOL


def test_relu_and_clip_grads_away_from_kinks():
    a = Tensor(np.array([-2.0, -0.5, 0.4, 1.7]), requires_grad=True)
    report = tensor_grad_check(lambda: (a.relu() * 2.0).sum() + a.clip(-1.0, 1.0).sum(), [a])
    assert report.max_rel_error < TOL


def test_concat_grads():
    rng = RngStream(9).fork("cat")
    a = _leaf(rng, (2, 3))
    b = _leaf(rng, (2, 2))
    report = tensor_grad_check(lambda: (concat([a, b], axis=1) ** 2).sum(), [a, b])
    assert report.max_rel_error < TOL


def test_log_softmax_values_and_grads():
    rng = RngStream(10).fork("ls")
    a = _leaf(rng, (3, 5))
    out = log_softmax(a, axis=-1)
    np.testing.assert_allclose(np.exp(out.data).sum(axis=-1), 1.0, atol=1e-12)
    # invariant under a per-row shift
    shifted = log_softmax(a + 7.25, axis=-1)
    np.testing.assert_allclose(out.data, shifted.data, atol=1e-9)
    report = tensor_grad_check(lambda: (log_softmax(a, axis=-1) * 0.3).sum(), [a])
    assert report.max_rel_error < TOL


def test_linear_matches_primitive_composition():
    rng = RngStream(11).fork("lin")
    x = _leaf(rng, (2, 3, 4))
    w = _leaf(rng, (4, 6))
    b = _leaf(rng, (6,))
    fused = linear(x, w, b)
    manual = x @ w + b
    np.testing.assert_allclose(fused.data, manual.data, atol=1e-12)
    report = tensor_grad_check(lambda: (linear(x, w, b).tanh()).sum(), [x, w, b])
    assert report.max_rel_error < TOL


def test_linear_without_bias_grad():
    rng = RngStream(12).fork("linnb")
    x = _leaf(rng, (5, 4))
    w = _leaf(rng, (4, 2))
    report = tensor_grad_check(lambda: (linear(x, w) ** 2).sum(), [x, w])
    assert report.max_rel_error < TOL


def test_layer_norm_values_and_grads():
    rng = RngStream(13).fork("ln")
    x = _leaf(rng, (2, 3, 6))
    gain = _leaf(rng, (6,))
    bias = _leaf(rng, (6,))
    out = layer_norm(x, gain, bias)
    # with unit gain / zero bias rows are standardized
    plain = layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))
    np.testing.assert_allclose(plain.data.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(plain.data.std(axis=-1), 1.0, atol=1e-4)
    assert out.data.shape == x.data.shape
    report = tensor_grad_check(lambda: (layer_norm(x, gain, bias) * 0.7).sum(),
                               [x, gain, bias])
    assert report.max_rel_error < TOL


def test_causal_attention_values_and_grads():
    rng = RngStream(14).fork("attn")
    B, H, K, dh = 2, 2, 4, 3
    q = _leaf(rng, (B, H, K, dh))
    k = _leaf(rng, (B, H, K, dh))
    v = _leaf(rng, (B, H, K, dh))
    mask = np.triu(np.full((K, K), -1e9), k=1)
    scale = 1.0 / np.sqrt(dh)

    out = causal_attention(q, k, v, scale, mask)
    # reference: explicit softmax over masked scores
    scores = (q.data @ np.swapaxes(k.data, -1, -2)) * scale + mask
    scores = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights = weights / weights.sum(axis=-1, keepdims=True)
    np.testing.assert_allclose(out.data, weights @ v.data, atol=1e-12)

    report = tensor_grad_check(lambda: (causal_attention(q, k, v, scale, mask) ** 2).sum(),
                               [q, k, v])
    assert report.max_rel_error < TOL


def test_causal_attention_ignores_future_positions():
    rng = RngStream(15).fork("attnmask")
    K = 5
    q = Tensor(rng.normal(size=(1, 1, K, 4)))
    k = Tensor(rng.normal(size=(1, 1, K, 4)))
    v = Tensor(rng.normal(size=(1, 1, K, 4)))
    mask = np.triu(np.full((K, K), -1e9), k=1)
    out1 = causal_attention(q, k, v, 0.5, mask)
    # perturbing keys/values at the last position must not change earlier outputs
    k2 = Tensor(k.data.copy())
    v2 = Tensor(v.data.copy())
    k2.data[..., -1, :] += 100.0
    v2.data[..., -1, :] -= 100.0
    out2 = causal_attention(q, k2, v2, 0.5, mask)
    assert np.array_equal(out1.data[..., :-1, :], out2.data[..., :-1, :])


def test_diamond_reuse_accumulates():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    y = x * 2.0
    z = (y + y).sum()  # dz/dx = 4
    z.backward()
    np.testing.assert_allclose(x.grad, np.full(3, 4.0))

    x.grad = None
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0)


def test_shared_input_grads_not_aliased():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    (a + b).sum().backward()
    a.grad[0] = 99.0
    assert b.grad[0] == 1.0


def test_no_grad_blocks_taping():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    y.backward()  # walks an empty graph
    assert x.grad is None


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_pow_rejects_tensor_exponent():
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(TypeError):
        x ** Tensor(np.ones(2))


def test_parameter_and_as_tensor():
    p = parameter(np.zeros((2, 2)))
    assert p.requires_grad
    t = as_tensor([1.0, 2.0])
    assert isinstance(t, Tensor) and not t.requires_grad
    same = as_tensor(t)
    assert same is t
