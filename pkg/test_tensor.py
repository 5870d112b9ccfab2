# test_tensor.py
import numpy as np
import pytest

from app.errors import GraphError, NonFiniteError, ShapeError
from app.models import tensor as T
from app.models.ops import avg_pool1d, conv1d, conv_transpose1d, conv_transpose_output_length, max_pool1d, pad1d
from app.models.optim import AdamW, adamw_step
from app.models.tensor import Parameter, Tensor, backward, default_dtype
from app.utils.gradcheck import check_gradients


def row(values):
    return Tensor(np.asarray(values, dtype=np.float64)[None, None, :])


def kernel(values):
    return Parameter(np.asarray(values, dtype=np.float64)[None, None, :])


def test_conv1d_examples():
    out = conv1d(row([1, 2, 3]), kernel([1]), Parameter([0.0]))
    assert out.numpy().ravel().tolist() == [1, 2, 3]
    out = conv1d(row([1, 2, 3, 4]), kernel([1, 1]))
    assert out.numpy().ravel().tolist() == [3, 5, 7]
    out = conv1d(row([1, 0, 0, 2, 0, 0]), kernel([1, 1]), dilation=3)
    assert out.numpy().ravel().tolist() == [3, 0, 0]


def test_conv1d_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        conv1d(row([1, 2]), kernel([1, 1, 1]))
    with pytest.raises(ShapeError):
        conv1d(Tensor(np.ones((1, 2, 4))), kernel([1]))


def test_conv_transpose1d_examples():
    out = conv_transpose1d(row([1, 0]), kernel([1, 1]), stride=2)
    assert out.numpy().ravel().tolist() == [1, 1, 0, 0]
    out = conv_transpose1d(row([1]), kernel([2, 3, 5]))
    assert out.numpy().ravel().tolist() == [2, 3, 5]
    assert conv_transpose_output_length(32, 16, stride=8, padding=4) == 256
    x = Tensor(np.ones((1, 1, 32)))
    assert conv_transpose1d(x, Parameter(np.ones((1, 1, 16))), stride=8, padding=4).shape == (1, 1, 256)


def test_max_pool1d_examples():
    assert max_pool1d(row([1, 3, 2, 4]), 2, 2).numpy().ravel().tolist() == [3, 4]
    assert max_pool1d(row([5, 1, 1, 1, 9, 1, 1, 1]), 4, 4).numpy().ravel().tolist() == [5, 9]
    x = row([0.5, -2.0, 7.0])
    assert np.array_equal(max_pool1d(x, 1, 1).numpy(), x.numpy())


def test_leaky_relu_values_and_gradient():
    assert T.leaky_relu(Tensor([-1.0]), 0.1).item() == pytest.approx(-0.1)
    assert T.leaky_relu(Tensor([2.0]), 0.3).item() == 2.0
    x = Parameter([-3.0])
    backward(T.sum_all(T.leaky_relu(x, 0.1)))
    assert x.grad[0] == pytest.approx(0.1)
    with pytest.raises(ValueError):
        T.leaky_relu(x, 1.5)


def test_elementwise_examples():
    assert T.cumsum(Tensor([1.0, 2.0, 3.0])).numpy().tolist() == [1, 3, 6]
    np.testing.assert_allclose(T.sin(Tensor([0.0, np.pi / 2])).numpy(), [0, 1], atol=1e-7)
    assert T.tanh(Tensor([0.0])).item() == 0.0
    with pytest.raises(ShapeError):
        T.add(Tensor([1.0, 2.0]), Tensor([1.0]))


def test_backward_square_sum():
    with default_dtype(np.float64):
        x = Parameter([1.5, -2.0, 0.25])
        backward(T.sum_all(T.square(x)))
    np.testing.assert_allclose(x.grad, 2 * x.numpy())


def test_detached_branch_has_no_gradient():
    x = Parameter([1.0, 2.0])
    loss = T.sum_all(T.square(x).detach()) + T.sum_all(x)
    backward(loss)
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])


def test_backward_errors():
    x = Parameter([1.0, 2.0])
    with pytest.raises(GraphError):
        backward(T.square(x))
    with pytest.raises(GraphError):
        backward(T.sum_all(Tensor([1.0, 2.0])))
    loss = T.sum_all(T.square(x))
    backward(loss)
    with pytest.raises(GraphError):
        backward(loss)


def test_chained_conv_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    with default_dtype(np.float64):
        x = Tensor(rng.normal(size=(2, 3, 20)))
        weight = Parameter(rng.normal(size=(4, 3, 5)))
        bias = Parameter(rng.normal(size=4))

        def loss_fn():
            return T.sum_all(T.leaky_relu(conv1d(x, weight, bias, padding=2), 0.1))

        assert check_gradients(loss_fn, [weight, bias], atol=1e-3) < 1e-4


def _away_from_zero(rng, shape, low=0.5, high=1.5):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, high, size=shape)


OP_CASES = {
    'add': lambda a, b: T.add(a, b),
    'sub': lambda a, b: T.sub(a, b),
    'mul': lambda a, b: T.mul(a, b),
    'neg': lambda a, b: T.neg(a),
    'sin': lambda a, b: T.sin(a),
    'tanh': lambda a, b: T.tanh(a),
    'sigmoid': lambda a, b: T.sigmoid(a),
    'relu': lambda a, b: T.relu(a),
    'leaky_relu': lambda a, b: T.leaky_relu(a, 0.2),
    'abs': lambda a, b: T.abs(a),
    'square': lambda a, b: T.square(a),
    'sqrt': lambda a, b: T.sqrt(T.abs(a)),
    'exp': lambda a, b: T.exp(a),
    'log': lambda a, b: T.log(T.abs(a)),
    'clamp_min': lambda a, b: T.clamp_min(a, 0.0),
    'cumsum': lambda a, b: T.cumsum(a),
    'reshape': lambda a, b: T.reshape(a, (2, 12, 3)),
    'transpose': lambda a, b: T.transpose(a, (2, 0, 1)),
    'expand': lambda a, b: T.expand(T.slice_axis(a, 1, 0, 1), (2, 4, 12)),
    'concat': lambda a, b: T.concat([a, b], axis=1),
    'slice': lambda a, b: T.slice_time(a, 2, 7),
    'conv1d': lambda a, b: conv1d(a, b_weight(b), stride=2, dilation=2, padding=3),
    'conv_transpose1d': lambda a, b: conv_transpose1d(a, b_weight(b), stride=2, padding=1),
    'avg_pool1d': lambda a, b: avg_pool1d(a, 4, 2, padding=1),
    'pad_reflect': lambda a, b: pad1d(a, 3, 2, mode='reflect'),
    'pad_constant': lambda a, b: pad1d(a, 1, 4),
}


def b_weight(b):
    # reuse the second operand as a (3, 3, 3) kernel
    return T.reshape(T.slice_time(T.reshape(b, (1, 3, 24)), 0, 9), (3, 3, 3))


@pytest.mark.parametrize('name', sorted(OP_CASES))
def test_op_gradients(name):
    rng = np.random.default_rng(sum(map(ord, name)))
    with default_dtype(np.float64):
        a = Parameter(_away_from_zero(rng, (2, 3, 12)))
        b = Parameter(_away_from_zero(rng, (2, 3, 12)))
        op = OP_CASES[name]
        projection = Tensor(rng.normal(size=op(a, b).shape))

        def loss_fn():
            return T.sum_all(T.mul(op(a, b), projection))

        assert check_gradients(loss_fn, [a, b], atol=1e-3) < 1e-4


def test_max_pool_gradient():
    rng = np.random.default_rng(3)
    with default_dtype(np.float64):
        x = Parameter(rng.permutation(48).reshape(2, 2, 12) * 0.1)
        projection = Tensor(rng.normal(size=(2, 2, 4)))

        def loss_fn():
            return T.sum_all(T.mul(max_pool1d(x, 3, 3), projection))

        assert check_gradients(loss_fn, [x], atol=1e-3) < 1e-4


def test_mean_gradient():
    with default_dtype(np.float64):
        x = Parameter(np.arange(6.0).reshape(1, 2, 3))
        backward(T.mean(x))
    np.testing.assert_allclose(x.grad, np.full((1, 2, 3), 1 / 6))


def test_conv_adjoint_property():
    rng = np.random.default_rng(42)
    with default_dtype(np.float64):
        for _ in range(50):
            k = int(rng.integers(1, 8))
            stride = int(rng.integers(1, k + 1))
            padding = int(rng.integers(0, (k - 1) // 2 + 1))
            frames = int(rng.integers(1, 11))
            length = stride * frames + k - 2 * padding
            c_in, c_out, batch = (int(v) for v in rng.integers(1, 4, size=3))
            x = Tensor(rng.normal(size=(batch, c_in, length)))
            w = Parameter(rng.normal(size=(c_out, c_in, k)))
            forward = conv1d(x, w, stride=stride, padding=padding)
            y = Tensor(rng.normal(size=forward.shape))
            adjoint = conv_transpose1d(y, w, stride=stride, padding=padding)
            assert adjoint.shape == x.shape
            lhs = float(np.sum(forward.numpy() * y.numpy()))
            rhs = float(np.sum(x.numpy() * adjoint.numpy()))
            assert abs(lhs - rhs) <= 1e-5 * max(abs(lhs), abs(rhs), 1e-12)


def test_adamw_first_step():
    p = Parameter([1.0], dtype=np.float64)
    p.grad = np.array([1.0])
    opt = AdamW([p], lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
    adamw_step(opt)
    assert p.data[0] == pytest.approx(0.99, abs=1e-7)


def test_adamw_zero_grad_and_decay():
    p = Parameter([2.0, -4.0], dtype=np.float64)
    opt = AdamW([p], lr=0.01, weight_decay=0.0)
    opt.step()
    np.testing.assert_array_equal(p.data, [2.0, -4.0])

    q = Parameter([2.0, -4.0], dtype=np.float64)
    opt = AdamW([q], lr=0.01, weight_decay=0.5)
    opt.step()
    np.testing.assert_allclose(q.data, [2.0 - 0.01 * 0.5 * 2.0, -4.0 + 0.01 * 0.5 * 4.0])


def test_adamw_rejects_non_finite_gradients():
    p = Parameter([1.0, 2.0])
    p.grad = np.array([np.nan, 0.0], dtype=np.float32)
    opt = AdamW([p])
    with pytest.raises(NonFiniteError):
        opt.step()
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert opt.step_count == 0


def test_default_dtype_context():
    assert Tensor([1.0]).dtype == np.float32
    with default_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
        assert Parameter([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


if __name__ == "__main__":
    pytest.main([__file__])
