"""Gradient correctness for the reverse-mode engine.

Analytic gradients are checked against central finite differences; the
difference quotient is the independent oracle for every nontrivial value.
"""

import numpy as np
import pytest

import clfm.autodiff as ad


def _fd_grad(f, x, h=1e-5):
    # central differences on a flat copy of x
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def test_gelu_and_silu_fix_zero():
    assert ad.gelu(ad.tensor(0.0)).value == 0.0
    assert ad.silu(ad.tensor(0.0)).value == 0.0


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 3))
    out = ad.matmul(ad.constant(np.eye(3)), ad.tensor(a))
    np.testing.assert_array_equal(out.value, a)


def test_square_gradient_at_three():
    x = ad.tensor(3.0)
    y = ad.square(x)
    ad.backward(y)
    assert x.grad == 6.0


def test_product_sum_gradient_is_other_factor():
    rng = np.random.default_rng(1)
    a_val = rng.standard_normal((4, 5))
    b_val = rng.standard_normal((4, 5))
    a = ad.tensor(a_val)
    b = ad.tensor(b_val)
    loss = ad.sum(a * b)
    ad.backward(loss)
    np.testing.assert_allclose(a.grad, b_val, rtol=0, atol=0)
    np.testing.assert_allclose(b.grad, a_val, rtol=0, atol=0)


def test_layer_norm_sum_gradient_matches_fd():
    rng = np.random.default_rng(2)
    x_val = rng.standard_normal((3, 8))
    x = ad.tensor(x_val.copy())
    # weight the normalized output so the gradient is not trivially zero
    w = ad.constant(rng.standard_normal((3, 8)))
    loss = ad.sum(ad.layer_norm(x) * w)
    ad.backward(loss)

    def f(v):
        return float((ad.layer_norm_np(v) * w.value).sum())

    fd = _fd_grad(f, x_val.copy())
    rel = np.abs(x.grad - fd) / (np.abs(fd) + 1e-12)
    assert rel.max() < 1e-6


@pytest.mark.parametrize("op,positive", [
    (ad.exp, False),
    (ad.log, True),
    (ad.sqrt, True),
    (ad.tanh, False),
    (ad.gelu, False),
    (ad.silu, False),
    (ad.square, False),
])
def test_unary_ops_gradcheck(op, positive):
    rng = np.random.default_rng(3)
    v = rng.standard_normal((2, 6))
    if positive:
        v = np.abs(v) + 0.5
    p = ad.tensor(v)

    def fn():
        return ad.sum(op(p) * ad.constant(np.linspace(0.3, 1.7, v.size).reshape(v.shape)))

    assert ad.grad_check(fn, [p]) < 1e-5


def test_binary_ops_gradcheck():
    rng = np.random.default_rng(4)
    a = ad.tensor(rng.standard_normal((3, 4)))
    b = ad.tensor(rng.standard_normal((3, 4)) + 3.0)  # offset keeps divide away from 0

    def fn():
        s = ad.add(a, b)
        d = ad.subtract(a, b)
        m = ad.multiply(s, d)
        q = ad.divide(m, b)
        return ad.mean(ad.square(q))

    assert ad.grad_check(fn, [a, b]) < 1e-5


def test_matmul_dot_gradcheck():
    rng = np.random.default_rng(5)
    a = ad.tensor(rng.standard_normal((3, 4)))
    b = ad.tensor(rng.standard_normal((4, 2)))
    u = ad.tensor(rng.standard_normal(6))
    v = ad.tensor(rng.standard_normal(6))

    def fn():
        m = ad.matmul(a, b)
        return ad.sum(ad.square(m)) + ad.dot(u, v)

    assert ad.grad_check(fn, [a, b, u, v]) < 1e-5


def test_broadcast_ops_gradcheck():
    rng = np.random.default_rng(6)
    a = ad.tensor(rng.standard_normal((3, 4)))
    row = ad.tensor(rng.standard_normal((1, 4)))
    col = ad.tensor(rng.standard_normal((3, 1)))

    def fn():
        return ad.mean(ad.square(a * row + col))

    assert ad.grad_check(fn, [a, row, col]) < 1e-5


def test_reduction_axes_gradcheck():
    rng = np.random.default_rng(7)
    a = ad.tensor(rng.standard_normal((4, 5)))

    def fn():
        col_means = ad.mean(a, axis=0)
        row_sums = ad.sum(a, axis=1, keepdims=True)
        return ad.sum(ad.square(col_means)) + ad.mean(ad.square(row_sums))

    assert ad.grad_check(fn, [a]) < 1e-5


def test_structural_ops_gradcheck():
    rng = np.random.default_rng(8)
    a = ad.tensor(rng.standard_normal((3, 4)))
    b = ad.tensor(rng.standard_normal((2, 4)))

    def fn():
        c = ad.concat([a, b], axis=0)
        t = ad.transpose(c)
        r = ad.reshape(t, (2, 10))
        sl = c[1:4, :2]
        return ad.sum(ad.square(r)) + ad.mean(ad.square(sl))

    assert ad.grad_check(fn, [a, b]) < 1e-5


def test_take_repeated_index_accumulates():
    # gathering the same row twice must sum its gradient contributions
    x = ad.tensor(np.arange(6.0).reshape(3, 2))
    y = ad.sum(x[np.array([0, 0, 2])])
    ad.backward(y)
    np.testing.assert_array_equal(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_clip_gradient_masks_exterior():
    x = ad.tensor(np.array([-2.0, 0.5, 3.0]))
    y = ad.sum(ad.clip(x, -1.0, 1.0))
    ad.backward(y)
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_layer_norm_output_is_standardized():
    rng = np.random.default_rng(9)
    x = ad.tensor(rng.standard_normal((5, 16)) * 3.0 + 2.0)
    y = ad.layer_norm(x).value
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_backward_accumulates_across_calls():
    # two backward passes without zero_grad add up; this is the contract the
    # optimizer relies on when it resets grads itself
    x = ad.tensor(2.0)
    y1 = ad.square(x)
    ad.backward(y1)
    g1 = float(x.grad)
    y2 = ad.square(x)
    ad.backward(y2)
    assert float(x.grad) == 2.0 * g1


def test_backward_requires_scalar_root():
    x = ad.tensor(np.ones(3))
    with pytest.raises(ad.ShapeError):
        ad.backward(x * 2.0)


def test_shape_errors_report_op_and_shapes():
    with pytest.raises(ad.ShapeError) as exc:
        ad.matmul(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((2, 3))))
    assert "matmul" in str(exc.value)
    assert "(2, 3)" in str(exc.value)
    with pytest.raises(ad.ShapeError):
        ad.add(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((4,))))
    with pytest.raises(ad.ShapeError):
        ad.dot(ad.tensor(np.ones(3)), ad.tensor(np.ones(4)))


def test_const_subgraphs_receive_no_grad():
    c = ad.constant(np.ones((2, 2)))
    x = ad.tensor(np.ones((2, 2)))
    loss = ad.sum(ad.multiply(c, x))
    ad.backward(loss)
    assert c.grad is None
    assert x.grad is not None


def test_graph_with_shared_node_gradients():
    # y = (x*x) + (x*x) reuses the same intermediate node
    x = ad.tensor(3.0)
    s = ad.square(x)
    y = ad.add(s, s)
    ad.backward(y)
    assert float(x.grad) == 12.0


def test_backward_is_deterministic():
    rng = np.random.default_rng(10)
    v = rng.standard_normal((6, 6))

    def run():
        x = ad.tensor(v.copy())
        h = ad.gelu(ad.matmul(x, ad.constant(v.T)))
        loss = ad.mean(ad.square(ad.layer_norm(h)))
        ad.backward(loss)
        return x.grad.copy()

    g1 = run()
    g2 = run()
    np.testing.assert_array_equal(g1, g2)


def test_deep_chain_does_not_recurse():
    # toposort is iterative, so a long chain must not hit the recursion limit
    x = ad.tensor(1.0)
    y = x
    for _ in range(5000):
        y = y * 1.0001
    loss = ad.square(y)
    ad.backward(loss)
    assert np.isfinite(x.grad)
