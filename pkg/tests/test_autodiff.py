import numpy as np
import pytest

from lofno import kernels as K
from lofno.autodiff import Tape, as_var


def square_sum(tape, x):
    return K.sum_all(K.mul(x, x))


def test_scalar_gradient():
    tape = Tape()
    x = tape.leaf(np.array([1.0, -2.0, 3.0]))
    tape.backward(square_sum(tape, x))
    assert np.allclose(x.grad, [2.0, -4.0, 6.0])


def test_fan_out_accumulates():
    tape = Tape()
    x = tape.leaf(np.array([2.0]))
    y = K.add(K.mul(x, x), x)  # x^2 + x
    tape.backward(K.sum_all(y))
    assert np.allclose(x.grad, [5.0])


def test_backward_twice_rejected():
    tape = Tape()
    x = tape.leaf(np.ones(2))
    out = square_sum(tape, x)
    tape.backward(out)
    with pytest.raises(RuntimeError, match="consumed"):
        tape.backward(out)


def test_backward_without_forward_rejected():
    tape = Tape()
    x = tape.leaf(np.ones(2))
    with pytest.raises(RuntimeError, match="before"):
        tape.backward(x)
    with pytest.raises(RuntimeError, match="before"):
        Tape().backward(Tape().leaf(np.ones(1)))


def test_non_scalar_needs_cotangent():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    y = K.mul(x, x)
    with pytest.raises(ValueError, match="cotangent"):
        tape.backward(y)
    tape2 = Tape()
    x2 = tape2.leaf(np.array([1.0, 2.0, 3.0]))
    tape2.backward(K.mul(x2, x2), np.array([1.0, 0.0, 2.0]))
    assert np.allclose(x2.grad, [2.0, 0.0, 12.0])


def test_disabled_tape_records_nothing():
    tape = Tape(enabled=False)
    x = tape.leaf(np.ones(3))
    y = square_sum(tape, x)
    assert not x.requires_grad and not y.requires_grad and tape.nodes == []
    assert float(y.value) == 3.0


def test_constants_get_no_gradient():
    tape = Tape()
    x = tape.leaf(np.array([3.0]))
    c = as_var(np.array([4.0]), tape)
    tape.backward(K.sum_all(K.mul(x, c)))
    assert c.grad is None and np.allclose(x.grad, [4.0])


def test_backward_breaks_reference_cycles():
    # nodes hold the tape and the tape holds nodes; backward must cut both
    tape = Tape()
    x = tape.leaf(np.ones(4))
    mid = K.mul(x, x)
    out = K.sum_all(mid)
    tape.backward(out)
    assert tape.nodes == []
    assert mid.parents == () and mid.backward_fn is None and mid.grad is None
    assert x.grad is not None
