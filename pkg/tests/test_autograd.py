import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from msgc import autograd as ag
from msgc.autograd import Adam, Tape, Tensor, numerical_gradient, parameter, relative_error
from msgc.exceptions import ContractError, DimensionError, NumericError


def grad_of(build, *inputs):
    with Tape() as tape:
        loss = build(*inputs)
    for t in inputs:
        t.grad = None
    tape.backward(loss)
    return [t.grad for t in inputs]


def check_op(build, *shapes, seed=0, offset=0.0):
    rng = np.random.default_rng(seed)
    inputs = [parameter(rng.normal(size=s) + offset) for s in shapes]
    probe = rng.normal(size=build(*inputs).shape)

    def loss(*xs):
        return ag.sum(ag.mul(build(*xs), Tensor(probe)))

    grads = grad_of(loss, *inputs)
    for t, g in zip(inputs, grads):
        num = numerical_gradient(lambda: loss(*inputs).item(), t)
        assert relative_error(g, num).max() < 1e-6


UNARY = {"relu": ag.relu, "tanh": ag.tanh, "sigmoid": ag.sigmoid, "exp": ag.exp,
         "absolute": ag.absolute, "softmax": lambda x: ag.softmax(x, -1),
         "scale": lambda x: ag.scale(x, -2.5), "mean": ag.mean,
         "sum_axis": lambda x: ag.sum(x, axis=0), "transpose": ag.transpose,
         "reshape": lambda x: ag.reshape(x, (-1,)), "getitem": lambda x: x[1:, ::2],
         "expand": lambda x: ag.expand(x, 1, 3), "swapaxes": lambda x: ag.swapaxes(x, 0, 1)}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_match_finite_differences(name):
    # offset keeps relu/abs away from their kinks
    check_op(UNARY[name], (3, 4), offset=0.0 if name not in ("relu", "absolute") else 0.05)


@pytest.mark.parametrize("shapes", [((3, 4), (3, 4)), ((3, 4), (4,)), ((3, 4), ()), ((4,), (3, 4))])
@pytest.mark.parametrize("op", [ag.add, ag.sub, ag.mul])
def test_binary_gradients_with_allowed_broadcasting(op, shapes):
    check_op(op, *shapes)


@pytest.mark.parametrize("shapes", [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((2, 3, 4), (2, 4, 5)),
                                    ((3, 4), (2, 4, 5))])
def test_matmul_gradients(shapes):
    check_op(ag.matmul, *shapes)


def test_concat_and_stack_gradients():
    check_op(lambda a, b: ag.concat([a, b], -1), (2, 3), (2, 5))
    check_op(lambda a, b: ag.stack([a, b], axis=1), (2, 3), (2, 3))


def test_repeated_use_accumulates_gradient():
    x = parameter(np.array([1.5, -2.0]))
    (g,) = grad_of(lambda t: ag.sum(ag.mul(t, t)), x)
    np.testing.assert_array_equal(g, 2 * x.data)


def test_incompatible_shapes_name_both_operands():
    with pytest.raises(DimensionError, match=r"\(3, 4\).*\(3,\)"):
        ag.add(Tensor(np.ones((3, 4))), Tensor(np.ones(3)))
    with pytest.raises(DimensionError, match=r"\(3, 4\).*\(3, 4\)"):
        ag.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 4))))


def test_backward_requires_scalar_loss():
    x = parameter(np.ones(3))
    with Tape() as tape:
        y = ag.mul(x, x)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_no_recording_without_tape_or_under_no_grad():
    x = parameter(np.ones(3))
    y = ag.mul(x, x)
    assert not y.requires_grad
    with Tape() as tape:
        with ag.no_grad():
            ag.mul(x, x)
    assert len(tape) == 0


def test_constants_receive_no_gradient():
    x, c = parameter(np.ones(2)), Tensor(np.full(2, 3.0))
    with Tape() as tape:
        loss = ag.sum(ag.mul(x, c))
    tape.backward(loss)
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_tape_dump_lists_operations():
    x = parameter(np.ones((2, 2)))
    with Tape() as tape:
        ag.sum(ag.relu(x))
    text = tape.dump()
    assert "relu" in text and "sum" in text


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        ag.softmax(Tensor(np.array([1.0, np.nan])))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    s = ag.softmax(Tensor(x), -1).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5,), elements=st.floats(-700, 700)))
def test_sigmoid_is_finite_and_bounded(x):
    s = ag.sigmoid(Tensor(x)).data
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))


def test_adam_first_step_moves_by_learning_rate():
    # bias correction makes the first update exactly lr * sign(g) (up to eps)
    p = parameter(np.array([1.0, -1.0, 0.5]))
    p.grad = np.array([0.3, -2.0, 1e-3])
    opt = Adam({"p": p}, lr=0.1, eps=0.0)
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -0.9, 0.4], rtol=0, atol=1e-15)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(3)
    p = parameter(rng.normal(size=4))
    ref = p.data.copy()
    m = v = np.zeros(4)
    opt = Adam({"p": p}, lr=0.01)
    for t in range(1, 6):
        g = rng.normal(size=4)
        p.grad = g
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-14)


def test_adam_rejects_non_finite_gradient_by_name():
    p = parameter(np.ones(2))
    p.grad = np.array([np.inf, 0.0])
    with pytest.raises(NumericError, match="'w'"):
        Adam({"w": p}).step()


def test_numerical_gradient_of_known_function():
    x = parameter(np.array([0.3, -1.2]))
    num = numerical_gradient(lambda: float(np.sum(np.sin(x.data))), x)
    np.testing.assert_allclose(num, np.cos(x.data), rtol=1e-9)
