import numpy as np
import pytest

from neurphy import autodiff as ad
from neurphy.autodiff import (NonFiniteError, NonScalarRootError,
                              ShapeMismatchError, Tensor, backward, grad_check)


def test_relu_forward():
    out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.value, [0.0, 0.0, 2.0])


def test_softplus_zero_is_ln2():
    out = ad.softplus(Tensor(0.0))
    assert abs(float(out.value) - np.log(2.0)) < 1e-12


def test_matmul_identity():
    a = np.arange(6.0).reshape(2, 3)
    out = ad.matmul(Tensor(np.eye(2)), Tensor(a))
    assert np.array_equal(out.value, a)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_nonfinite_raises():
    with pytest.raises(NonFiniteError):
        ad.log(Tensor([0.0]))  # log 0 = -inf


def test_backward_sum_of_squares():
    x = Tensor([3.0])
    backward(ad.tsum(ad.square(x)))
    assert np.allclose(x.grad, [6.0])


def test_backward_sigmoid_at_zero():
    x = Tensor(0.0)
    backward(ad.sigmoid(x))
    assert abs(float(x.grad) - 0.25) < 1e-12


def test_backward_constant_root_zero_grads():
    x = Tensor([1.0, 2.0])
    y = ad.tsum(ad.mul(x, Tensor([0.0, 0.0])))
    backward(y)
    assert np.array_equal(x.grad, [0.0, 0.0])


def test_backward_nonscalar_root():
    with pytest.raises(NonScalarRootError):
        backward(Tensor([1.0, 2.0]))


def test_backward_accumulates_into_leaves():
    x = Tensor([1.0, 2.0])
    backward(ad.tsum(x))
    backward(ad.tsum(x))
    assert np.array_equal(x.grad, [2.0, 2.0])


def test_gradcheck_quadratic_near_exact():
    err = grad_check(lambda t: ad.tsum(ad.square(t)),
                     np.array([1.0, -2.0, 0.5]), eps=1e-5)
    assert err < 1e-8


def test_gradcheck_constant_function():
    err = grad_check(lambda t: Tensor(3.0), np.array([1.0, 2.0]))
    assert err == 0.0


PRIMITIVES = {
    "relu": lambda t: ad.tsum(ad.relu(t)),
    "sigmoid": lambda t: ad.tsum(ad.sigmoid(t)),
    "tanh": lambda t: ad.tsum(ad.tanh(t)),
    "exp": lambda t: ad.tsum(ad.exp(t)),
    "log": lambda t: ad.tsum(ad.log(ad.add(ad.square(t), 0.5))),
    "softplus": lambda t: ad.tsum(ad.softplus(t)),
    "sin": lambda t: ad.tsum(ad.sin(t)),
    "square": lambda t: ad.tsum(ad.square(t)),
    "mul": lambda t: ad.tsum(ad.mul(t, t)),
    "div": lambda t: ad.tsum(ad.div(t, ad.add(ad.square(t), 1.0))),
    "scale": lambda t: ad.tsum(ad.scale(t, -2.5)),
    "mean": lambda t: ad.tmean(t),
    "sum_axis": lambda t: ad.tsum(ad.square(ad.tsum(t, axis=-1))),
    "concat": lambda t: ad.tsum(ad.square(ad.concat([t, ad.scale(t, 2.0)]))),
    "slice": lambda t: ad.tsum(ad.square(ad.slice_last(t, 1, 3))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradcheck(name):
    f = PRIMITIVES[name]
    for seed in range(20):
        x = np.random.default_rng(seed).normal(size=(2, 4))
        # keep relu inputs away from the kink
        if name == "relu":
            x = np.where(np.abs(x) < 1e-3, 0.1, x)
        assert grad_check(f, x, eps=1e-5) < 1e-4, f"{name} seed {seed}"


def test_matmul_and_broadcast_add_gradcheck():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(4, 3))
    b = rng.normal(size=3)

    def f(t):
        return ad.tsum(ad.square(ad.add(ad.matmul(t, Tensor(w)), Tensor(b))))

    for seed in range(20):
        x = np.random.default_rng(seed).normal(size=(5, 4))
        assert grad_check(f, x, eps=1e-5) < 1e-4


def test_matmul_grad_wrt_weights():
    x = np.random.default_rng(2).normal(size=(5, 4))

    def f(t):
        return ad.tsum(ad.square(ad.matmul(Tensor(x), t)))

    assert grad_check(f, np.random.default_rng(3).normal(size=(4, 3))) < 1e-4


def test_tile_rows_grad():
    def f(t):
        return ad.tsum(ad.square(ad.tile_rows(t, 4)))

    assert grad_check(f, np.array([1.0, -2.0, 0.3])) < 1e-4


def test_backward_linearity():
    rng = np.random.default_rng(7)
    x0 = rng.normal(size=(3, 2))

    def f(t):
        return ad.tsum(ad.square(t))

    def g(t):
        return ad.tsum(ad.sin(t))

    a, b = 1.7, -0.3
    xa = Tensor(x0)
    backward(ad.add(ad.scale(f(xa), a), ad.scale(g(xa), b)))
    xf, xg = Tensor(x0), Tensor(x0)
    backward(f(xf))
    backward(g(xg))
    assert np.max(np.abs(xa.grad - (a * xf.grad + b * xg.grad))) < 1e-10


def test_forward_and_backward_deterministic():
    x0 = np.random.default_rng(11).normal(size=(4, 3))

    def run():
        x = Tensor(x0)
        y = ad.tsum(ad.square(ad.tanh(ad.matmul(x, Tensor(x0.T @ x0)))))
        backward(y)
        return y.value.copy(), x.grad.copy()

    v1, g1 = run()
    v2, g2 = run()
    assert np.array_equal(v1, v2)
    assert np.array_equal(g1, g2)


def test_two_layer_mlp_gradcheck():
    rng = np.random.default_rng(5)
    w1, b1 = rng.normal(size=(3, 8)), rng.normal(size=8)
    w2, b2 = rng.normal(size=(8, 1)), rng.normal(size=1)

    def f(t):
        h = ad.tanh(ad.add(ad.matmul(t, Tensor(w1)), Tensor(b1)))
        return ad.tsum(ad.add(ad.matmul(h, Tensor(w2)), Tensor(b2)))

    for seed in range(20):
        x = np.random.default_rng(seed).normal(size=(2, 3))
        assert grad_check(f, x, eps=1e-5) < 1e-4
