import numpy as np
import pytest

import gradcheck
import oracles
from atpnet import tensor as T
from atpnet.errors import GraphError, ShapeError
from atpnet.optim import adam_step, step_decay_lr
from atpnet.tensor import Module, Parameter, Tensor, no_grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.mark.parametrize(
    "name, fn, shapes",
    [
        ("add", lambda a, b: a + b, [(3, 4), (3, 4)]),
        ("add_broadcast", lambda a, b: a + b, [(2, 3, 4), (1, 4)]),
        ("sub", lambda a, b: a - b, [(3, 4), (4,)]),
        ("rsub", lambda a: 2.0 - a, [(5,)]),
        ("mul", lambda a, b: a * b, [(2, 3), (2, 3)]),
        ("mul_broadcast", lambda a, b: a * b, [(2, 3, 4), (3, 1)]),
        ("neg", lambda a: -a, [(4,)]),
        ("scale", lambda a: T.scale(a, 0.37), [(2, 2)]),
        ("sum", lambda a: a.sum(), [(3, 2)]),
        ("reshape", lambda a: a.reshape(6, 2), [(3, 4)]),
        ("transpose", lambda a: T.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
        ("matmul", lambda a, b: a @ b, [(3, 4), (4, 2)]),
        ("matmul_batched", lambda a, b: a @ b, [(2, 3, 4), (2, 4, 5)]),
        ("softmax", lambda a: T.softmax(a, axis=-1), [(2, 3, 5)]),
        ("softmax_axis0", lambda a: T.softmax(a, axis=0), [(4, 3)]),
    ],
)
def test_elementary_op_gradients(name, fn, shapes, rng):
    arrays = [rng.standard_normal(s) for s in shapes]
    assert gradcheck.check(fn, arrays) <= gradcheck.TOL, name


def test_add_values_and_broadcast_shape():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    b = Tensor(np.array([10.0, 20.0, 30.0]))
    np.testing.assert_array_equal((a + b).data, [[10, 21, 32], [13, 24, 35]])


def test_softmax_matches_oracle(rng):
    a = rng.standard_normal((3, 7)) * 20
    np.testing.assert_allclose(T.softmax(Tensor(a)).data, oracles.softmax_rows(a), rtol=1e-6, atol=1e-12)


def test_matmul_shape_error():
    with pytest.raises(ShapeError, match="inner dimension"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


def test_default_dtype_is_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.ones(2, dtype=np.float64)).dtype == np.float64


def test_backward_twice_raises():
    a = Tensor(np.ones(3), requires_grad=True)
    out = (a * a).sum()
    out.backward()
    with pytest.raises(GraphError, match="already ran"):
        out.backward()


def test_backward_requires_grad_and_scalar():
    with pytest.raises(GraphError):
        Tensor(np.ones(2)).sum().backward()
    a = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(GraphError, match="non-scalar"):
        (a * 2.0).backward()


def test_shared_subexpression_accumulates():
    a = Tensor(np.array([3.0]), requires_grad=True)
    b = a * a
    (b + b).sum().backward()
    np.testing.assert_allclose(a.grad, [12.0])


def test_leaf_grad_accumulates_across_graphs():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (a * 2.0).sum().backward()
    (a * 3.0).sum().backward()
    np.testing.assert_allclose(a.grad, [5.0, 5.0])


def test_no_grad_records_nothing():
    a = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        out = (a * a).sum()
    assert not out.requires_grad and out._parents == ()
    out2 = (a * a).sum()
    assert out2.requires_grad


def test_graph_is_released_after_backward():
    a = Tensor(np.ones(2), requires_grad=True)
    mid = a * a
    out = mid.sum()
    out.backward()
    assert mid._parents == () and mid._backward is None


class _Inner(Module):
    def __init__(self):
        self.w = Parameter(np.ones(2))


class _Outer(Module):
    def __init__(self):
        self.bias = Parameter(np.zeros(1))
        self.inner = _Inner()
        self.stack = [_Inner(), Parameter(np.ones(3))]


def test_module_parameter_names_are_stable():
    names = [n for n, _ in _Outer().named_parameters()]
    assert names == ["bias", "inner.w", "stack.0.w", "stack.1"]
    assert list(_Outer().state_dict()) == names


def test_module_zero_grad():
    m = _Outer()
    for p in m.parameters():
        p.grad = np.ones_like(p.data)
    m.zero_grad()
    assert all(p.grad is None for p in m.parameters())


def test_adam_matches_textbook(rng):
    w0 = rng.standard_normal(5)
    grads = [rng.standard_normal(5) for _ in range(7)]
    p = Parameter(w0, dtype=np.float64)
    for g in grads:
        p.grad = g
        adam_step([p], 0.01)
    np.testing.assert_allclose(p.data, oracles.adam_reference(w0, grads, 0.01), rtol=1e-12, atol=1e-14)
    assert p.step == 7


def test_adam_missing_grad_names_parameter():
    with pytest.raises(ValueError, match="'enc.w'"):
        adam_step({"enc.w": Parameter(np.ones(2))}, 0.1)


def test_adam_first_step_frozen_value():
    # first bias-corrected step moves every coordinate by lr * sign(g) (up to eps)
    p = Parameter(np.array([0.5, -0.5, 2.0]), dtype=np.float64)
    p.grad = np.array([3.0, -0.25, 1e-3])
    adam_step([p], 0.1)
    np.testing.assert_allclose(p.data, [0.4, -0.4, 1.9], atol=1e-6)


def test_step_decay():
    assert step_decay_lr(1e-4, 0) == 1e-4
    assert step_decay_lr(1e-4, 99) == 1e-4
    assert step_decay_lr(1e-4, 100) == pytest.approx(1e-5)
    assert step_decay_lr(1e-4, 250) == pytest.approx(1e-6)
