import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cidnst import numerics as N
from cidnst.numerics import NumericFault, ShapeError, grad_check


def test_square_value_and_gradient():
    x = N.tensor(3.0, requires_grad=True)
    y = N.square(x)
    y.backward()
    assert y.item() == 9.0
    assert x.grad.item() == 6.0


def test_l1_gradient_is_sign():
    v = N.tensor([2.0, -3.0], requires_grad=True)
    N.l1_norm(v).backward()
    assert v.grad.tolist() == [1.0, -1.0]


def test_l1_subgradient_at_zero_is_zero():
    v = N.tensor([0.0, 1.0], requires_grad=True)
    N.l1_norm(v).backward()
    assert v.grad.tolist() == [0.0, 1.0]


def test_logsoftmax_nll_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(0)
    z0 = rng.normal(size=5)
    target = 2

    def nll(z):
        return -N.log_softmax(z)[target]

    z = N.tensor(z0, requires_grad=True)
    nll(z).backward()
    onehot = np.eye(5)[target]
    sm = np.exp(z0) / np.exp(z0).sum()
    np.testing.assert_allclose(z.grad.numpy(), sm - onehot, atol=1e-12)
    # independent oracle: central differences with step 1e-5
    fd = np.zeros(5)
    for i in range(5):
        e = np.zeros(5)
        e[i] = 1e-5
        fd[i] = (nll(N.tensor(z0 + e)).item() - nll(N.tensor(z0 - e)).item()) / 2e-5
    np.testing.assert_allclose(fd, sm - onehot, atol=1e-8)


def test_grad_check_quadratic_form():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(8, 8))
    A = N.tensor(A @ A.T)
    p = N.tensor(rng.normal(size=8))
    assert grad_check(lambda x: x @ A @ x, p, step=1e-6) <= 1e-7


def test_grad_check_constant_is_zero():
    assert grad_check(lambda x: N.tensor(2.5) + 0 * x.sum(), N.tensor([1.0, 2.0])) == 0.0


def test_grad_check_raises_on_nonfinite():
    with pytest.raises(NumericFault):
        grad_check(lambda x: torch.log(x).sum(), N.tensor([1e-9, 1.0]), step=1e-6)


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        grad_check(lambda x: x.sum(), N.tensor([1.0]), step=0.0)


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(ShapeError) as e:
        N.matmul(torch.zeros(2, 3, dtype=N.DTYPE), torch.zeros(4, 2, dtype=N.DTYPE))
    assert e.value.op == "matmul" and e.value.shapes == [(2, 3), (4, 2)]
    with pytest.raises(ShapeError):
        N.add(torch.zeros(2, 3), torch.zeros(4))
    with pytest.raises(ShapeError):
        N.concat([torch.zeros(2, 3), torch.zeros(3, 3)], dim=1)
    with pytest.raises(ShapeError):
        N.slice_(torch.zeros(4), 0, 2, 6)
    with pytest.raises(ShapeError):
        N.embedding(torch.tensor([5]), torch.zeros(3, 2))


def test_nonfinite_output_is_a_fault():
    with pytest.raises(NumericFault):
        N.mul(N.tensor([1e308]), N.tensor([1e308]))


def test_shared_subgraph_accumulates():
    x = N.tensor(2.0, requires_grad=True)
    s = N.square(x)
    (N.mul(s, N.tensor(3.0)) + N.tanh(s)).backward()
    expected = 3 * 2 * 2 + (1 - math.tanh(4.0) ** 2) * 2 * 2
    assert x.grad.item() == pytest.approx(expected, rel=1e-14)


def test_masked_mean_ignores_padding():
    x = N.tensor([[1.0, 2.0, 100.0], [3.0, 100.0, 100.0]])
    mask = N.length_mask([2, 1], 3)
    assert N.mean(x, mask).item() == pytest.approx(2.0)
    z = N.time_mask(x.unsqueeze(-1), [2, 1])
    assert z[:, :, 0].tolist() == [[1.0, 2.0, 0.0], [3.0, 0.0, 0.0]]


def test_masked_mean_with_empty_mask():
    with pytest.raises(ShapeError):
        N.mean(N.tensor([1.0, 2.0]), torch.tensor([False, False]))


UNARY = {
    "softmax": lambda x: N.softmax(x).pow(2).sum(),
    "log_softmax": lambda x: (N.log_softmax(x) * torch.arange(x.shape[-1], dtype=N.DTYPE)).sum(),
    "tanh": lambda x: N.tanh(x).sum(),
    "sigmoid": lambda x: N.sigmoid(x).pow(2).sum(),
    "logsumexp": lambda x: N.logsumexp(x),
    "l1": lambda x: N.l1_norm(x),
    "square": lambda x: N.square(x).sum(),
    "mean": lambda x: N.mean(N.square(x)),
    "slice": lambda x: N.square(N.slice_(x, 0, 1, 3)).sum(),
    "concat": lambda x: N.square(N.concat([x, 2 * x], dim=0)).sum(),
    "matmul": lambda x: N.matmul(x.unsqueeze(0), torch.outer(x, x)).sum(),
    "add_mul": lambda x: N.mul(N.add(x, x.flip(0)), x).sum(),
    "embedding": lambda x: N.embedding(torch.tensor([0, 2, 2]), x.reshape(-1, 1)).pow(3).sum(),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_every_op_matches_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=4)
    if name == "l1":
        x = x + np.sign(x) * 0.1  # stay clear of the kink
    assert grad_check(UNARY[name], N.tensor(x), step=1e-6) <= 1e-4


def test_ops_are_bitwise_deterministic():
    rng = np.random.default_rng(5)
    x = N.tensor(rng.normal(size=(3, 7)))
    a = N.log_softmax(N.matmul(x, x.T))
    b = N.log_softmax(N.matmul(x, x.T))
    assert torch.equal(a, b)
