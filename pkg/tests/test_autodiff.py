import numpy as np
import pytest

import smdp.autodiff.gradcheck
import smdp.autodiff.tensor
import smdp.exceptions

T = smdp.autodiff.tensor


def test_tensor_is_immutable():
    x = T.Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        x.data[0] = 5.0
    copy = x.numpy()
    copy[0] = 5.0
    assert x.data[0] == 1.0


def test_tensor_ids_are_unique():
    a = T.Tensor([1.0])
    b = T.Tensor([1.0])
    assert a.id != b.id


def test_elementwise_shape_mismatch_reports_both_shapes():
    with pytest.raises(smdp.exceptions.ShapeError) as exc_info:
        T.add(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((3, 2))))
    assert "(2, 3)" in str(exc_info.value)
    assert "(3, 2)" in str(exc_info.value)


def test_backward_requires_scalar():
    x = T.Tensor(np.ones(3))
    with T.Tape() as tape:
        tape.watch(x)
        y = T.square(x)
    with pytest.raises(smdp.exceptions.TapeError):
        tape.backward(y)


def test_unused_leaf_gets_zero_gradient():
    x = T.Tensor([1.0, 2.0])
    unused = T.Tensor([3.0, 4.0, 5.0])
    with T.Tape() as tape:
        tape.watch(x, unused)
        y = T.reduce_sum(T.square(x))
    grads = tape.backward(y)
    np.testing.assert_allclose(grads[x.id].data, [2.0, 4.0])
    np.testing.assert_array_equal(grads[unused.id].data, np.zeros(3))


def test_fan_out_gradients_are_summed():
    x = T.Tensor([1.5, -0.5])
    value, (g,) = T.grad(lambda v: T.reduce_sum(T.mul(v, v) + v), x)
    np.testing.assert_allclose(g.data, 2.0 * x.data + 1.0)
    assert value.item() == pytest.approx(float(np.sum(x.data ** 2 + x.data)))


def test_operations_without_tape_are_not_recorded():
    x = T.Tensor([1.0])
    y = T.exp(x)
    assert T.current_tape() is None
    assert y.data[0] == pytest.approx(np.e)


@pytest.mark.parametrize("fn", [
    lambda v: T.reduce_sum(T.tanh(v) * v),
    lambda v: T.mean(T.elu(v * 3.0)),
    lambda v: T.reduce_sum(T.elu_prime(v) * v),
    lambda v: T.reduce_sum(T.leaky_relu(v)),
    lambda v: T.reduce_sum(T.exp(v) - v.square()),
])
def test_elementwise_gradients_match_finite_differences(fn):
    rng = np.random.default_rng(0)
    # keep the points away from the kinks at 0
    x = T.Tensor(rng.uniform(0.1, 1.0, size=5) * rng.choice([-1.0, 1.0], size=5))
    _, (analytic,) = T.grad(fn, x)
    numeric = smdp.autodiff.gradcheck.finite_difference_gradient(fn, x)
    assert smdp.autodiff.gradcheck.relative_error(analytic, numeric) < 1e-6


def test_matmul_bias_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    a = T.Tensor(rng.normal(size=(4, 3)))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)

    def f(weights):
        return T.reduce_sum(T.tanh(T.add_bias(T.matmul(a, weights), b)))

    _, (analytic,) = T.grad(f, T.Tensor(w))
    numeric = smdp.autodiff.gradcheck.finite_difference_gradient(f, w)
    assert smdp.autodiff.gradcheck.relative_error(analytic, numeric) < 1e-6


def test_periodic_conv2d_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    x = T.Tensor(rng.normal(size=(1, 2, 5, 5)))
    weight = rng.normal(size=(3, 2, 3, 3))
    bias = T.Tensor(rng.normal(size=3))

    def f(w):
        return T.mean(T.square(T.periodic_conv2d(x, w, bias)))

    _, (analytic,) = T.grad(f, T.Tensor(weight))
    numeric = smdp.autodiff.gradcheck.finite_difference_gradient(f, weight)
    assert smdp.autodiff.gradcheck.relative_error(analytic, numeric) < 1e-6


def test_spectral_multiply_with_unit_multiplier_is_identity():
    x = T.Tensor(np.random.default_rng(3).normal(size=(4, 4)))
    y = T.spectral_multiply(x, np.ones((4, 4)))
    np.testing.assert_allclose(y.data, x.data, atol=1e-12)


def test_finite_difference_rejects_non_finite_values():
    with pytest.raises(smdp.exceptions.NonFiniteError):
        smdp.autodiff.gradcheck.finite_difference_gradient(
            lambda v: T.reduce_sum(v) * float("nan"), np.ones(2))


def test_grid_interp_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    values = rng.normal(size=(5, 6))
    # interior queries away from the nodes, where the interpolant is smooth in x
    t_pos = np.array([0.3, 1.7, 2.5, 3.2])
    x_pos = np.array([0.4, 2.6, 4.3, 1.2])
    weights = rng.normal(size=4)

    def of_values(v):
        return T.reduce_sum(T.grid_interp(v, t_pos, x_pos) * weights)

    def of_positions(p):
        return T.reduce_sum(T.grid_interp(values, t_pos, p) * weights)

    _, (analytic,) = T.grad(of_values, T.Tensor(values))
    numeric = smdp.autodiff.gradcheck.finite_difference_gradient(of_values, values)
    assert smdp.autodiff.gradcheck.relative_error(analytic, numeric) < 1e-6

    _, (analytic,) = T.grad(of_positions, T.Tensor(x_pos))
    numeric = smdp.autodiff.gradcheck.finite_difference_gradient(of_positions, x_pos)
    assert smdp.autodiff.gradcheck.relative_error(analytic, numeric) < 1e-6


def test_backward_is_linear_and_deterministic():
    x = T.Tensor(np.random.default_rng(5).normal(size=6))

    def f(v):
        return T.reduce_sum(T.tanh(v) * v)

    def g(v):
        return T.mean(T.exp(v * 0.5))

    _, (grad_f,) = T.grad(f, x)
    _, (grad_g,) = T.grad(g, x)
    _, (combined,) = T.grad(lambda v: f(v) * 2.0 + g(v) * -3.0, x)
    np.testing.assert_allclose(combined.data, 2.0 * grad_f.data - 3.0 * grad_g.data, rtol=1e-12, atol=1e-14)

    _, (again,) = T.grad(f, x)
    np.testing.assert_array_equal(again.data, grad_f.data)
