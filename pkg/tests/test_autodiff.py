import zlib

import numpy as np
import pytest

from unrollfold import autodiff as ad


def away_from_kinks(rng, shape, points=(0.0,), gap=0.05):
    x = rng.normal(size=shape)
    for p in points:
        close = np.abs(x - p) < gap
        x[close] = p + np.sign(x[close] - p + 1e-300) * gap * 2
    return x


def test_forward_examples():
    assert ad.softsign(ad.const(0.0), 10).value == 0.5
    assert ad.softsign(ad.const(0.0), 0.3).value == 0.5
    assert ad.clip_max1(ad.const(1.7)).value == 1.0
    assert ad.clip_max1(ad.const(0.3)).value == pytest.approx(0.3, abs=1e-15)


def test_relu_derivative_examples():
    for x0, d in [(-1.0, 0.0), (2.0, 1.0)]:
        x = ad.leaf(x0)
        ad.backward(ad.relu(x))
        assert x.grad == d


def test_backward_examples():
    x = ad.leaf(np.array([[1.0, -2.0], [0.5, 3.0]]))
    ad.backward(ad.full_sum(x * x))
    assert np.array_equal(x.grad, 2 * x.value)

    a, b = ad.leaf(np.arange(4.0).reshape(2, 2)), np.array([[1.0, -1.0], [2.0, 0.5]])
    ad.backward(ad.inner_product(a, b))
    assert np.array_equal(a.grad, b)

    x = ad.leaf(np.array([[0.5, -0.1]]))
    ad.backward(ad.full_sum(ad.relu(ad.abs_(x) - 0.3)))
    assert x.grad.tolist() == [[1.0, 0.0]]


def test_backward_errors():
    x = ad.leaf(np.ones((2, 2)))
    with pytest.raises(ad.ShapeError):
        ad.backward(x * 2.0)
    root = ad.full_sum(x)
    ad.backward(root)
    with pytest.raises(RuntimeError):
        ad.backward(root)


def test_shape_mismatch_rejected():
    with pytest.raises(ad.ShapeError):
        ad.add(ad.const(np.ones((2, 3))), ad.const(np.ones((3, 2))))
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.const(np.ones((2, 3))), ad.const(np.ones((2, 3))))


def test_numpy_on_left_defers_to_node():
    x = ad.leaf(np.ones((2, 2)))
    y = np.full((2, 2), 3.0) * x
    assert isinstance(y, ad.Node)
    ad.backward(ad.full_sum(y))
    assert (x.grad == 3.0).all()


def test_leaf_gradients_accumulate_across_graphs():
    x = ad.leaf(np.array([[1.0, 2.0]]))
    ad.backward(ad.full_sum(x * 2.0))
    ad.backward(ad.full_sum(x * 3.0))
    assert x.grad.tolist() == [[5.0, 5.0]]
    x.zero_grad()
    assert x.grad is None or not x.grad.any()


def test_shared_subexpression():
    x = ad.leaf(np.array([[0.3, -0.7]]))
    h = ad.exp(x)
    ad.backward(ad.full_sum(h * h + h))
    e = np.exp(x.value)
    assert np.allclose(x.grad, 2 * e * e + e)


# every primitive against central differences; inputs avoid kinks by >= 10 eps
UNARY = {
    "neg": (lambda a: -a, ()),
    "relu": (ad.relu, (0.0,)),
    "abs": (ad.abs_, (0.0,)),
    "exp": (ad.exp, ()),
    "sigmoid": (ad.sigmoid, ()),
    "log_sigmoid": (ad.log_sigmoid, ()),
    "softsign_k10": (lambda a: ad.softsign(a, 10.0), ()),
    "softsign_k3": (lambda a: ad.softsign(a, 3.0), ()),
    "clip_max1": (ad.clip_max1, (1.0,)),
    "transpose": (ad.transpose, ()),
    "softmax_rows": (ad.softmax_rows, ()),
    "powi3": (lambda a: ad.powi(a, 3), ()),
    "row_sum": (lambda a: ad.outer_ones(ad.row_sum(a), 3), ()),
    "tile_rows": (lambda a: ad.tile_rows(ad.row_sum(a), 4), ()),
    "reshape": (lambda a: ad.reshape(a, (4, 3)), ()),
    "scalar_mul": (lambda a: 2.5 * a - 1.0, ()),
    "scalar_div": (lambda a: a / 4.0, ()),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name):
    fn, kinks = UNARY[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    x = away_from_kinks(rng, (3, 4), kinks)
    W = rng.normal(size=fn(ad.const(x)).shape)
    err = ad.check_gradient(lambda a: ad.inner_product(fn(a), W), x)
    assert err < 1e-5, err


def test_log_gradient():
    rng = np.random.default_rng(1)
    x = rng.uniform(0.5, 2.0, size=(3, 3))
    assert ad.check_gradient(lambda a: ad.full_sum(ad.log(a) * a), x) < 1e-5


BINARY = {
    "add": ad.add, "sub": ad.sub, "mul": ad.mul, "div": ad.div,
    "matmul": lambda a, b: ad.matmul(a, b.T),
    "inner": lambda a, b: ad.inner_product(a, b) * a,
    "concat_rows": lambda a, b: ad.concat_rows([a, b]),
    "concat_cols": lambda a, b: ad.concat_cols([a, b]),
    "pairwise_sum": ad.pairwise_sum,
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitive_gradients(name):
    fn = BINARY[name]
    rng = np.random.default_rng(len(name))
    a = rng.normal(size=(3, 4))
    b = rng.uniform(0.5, 2.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4))
    W = rng.normal(size=fn(ad.const(a), ad.const(b)).shape)
    err = ad.check_gradient(lambda x, y: ad.inner_product(fn(x, y), W), [a, b])
    assert err < 1e-5, err


def test_scalar_leaf_broadcast_gradient():
    rng = np.random.default_rng(5)
    M = rng.normal(size=(3, 3))
    err = ad.check_gradient(lambda s: ad.full_sum(ad.softsign(M - s, 10.0) * M), np.array(0.2))
    assert err < 1e-5


def test_check_gradient_quadratic_is_tight():
    rng = np.random.default_rng(2)
    Q = rng.normal(size=(4, 4))
    x = rng.normal(size=(4, 1))
    err = ad.check_gradient(lambda v: ad.full_sum(v.T @ ad.const(Q) @ v), x, eps=1e-5)
    assert err < 1e-8


def test_check_gradient_raises_on_wrong_gradient():
    def bad(a):
        # forward a*a but backward as if identity
        out = ad._make("bad", a.value ** 2, (a,), lambda g: (g,))
        return ad.full_sum(out)

    with pytest.raises(AssertionError):
        ad.check_gradient(bad, np.array([[1.0, 2.0]]), tol=1e-3)


def test_linearity_of_adjoints():
    rng = np.random.default_rng(8)
    x0 = rng.normal(size=(3, 3))

    def grad(build):
        x = ad.leaf(x0)
        ad.backward(build(x))
        return x.grad

    f = lambda x: ad.full_sum(ad.sigmoid(x) * x)
    g = lambda x: ad.full_sum(ad.exp(x) @ x)
    combo = grad(lambda x: 2.0 * f(x) - 0.5 * g(x))
    assert np.allclose(combo, 2.0 * grad(f) - 0.5 * grad(g), atol=1e-12)


def test_forward_is_deterministic():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 5))
    run = lambda: ad.softmax_rows(ad.const(x) @ ad.const(x).T).value
    assert np.array_equal(run(), run())


def test_stable_sigmoid_extremes():
    v = ad.sigmoid(ad.const(np.array([-800.0, 800.0]))).value
    assert v.tolist() == [0.0, 1.0]
    ls = ad.log_sigmoid(ad.const(np.array([-800.0, 800.0]))).value
    assert np.isfinite(ls).all() and ls[0] == pytest.approx(-800.0)
