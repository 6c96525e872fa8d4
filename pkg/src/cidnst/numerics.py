"""Checked tensor operations on top of torch autograd, plus a finite-difference gradient checker.

Everything runs in float64. The wrappers validate shapes up front (raising
:class:`ShapeError` that names the op and the offending shapes) and reject
non-finite results with :class:`NumericFault`; the vector-Jacobian products
are torch's.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import torch

DTYPE = torch.float64


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericFault(ArithmeticError):
    """A NaN or Inf appeared where only finite values are allowed."""


def check_finite(t: torch.Tensor, op: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericFault(f"{op}: non-finite output")
    return t


def tensor(data, requires_grad: bool = False) -> torch.Tensor:
    return torch.tensor(data, dtype=DTYPE, requires_grad=requires_grad)


def _broadcastable(op, a, b):
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError(op, a.shape, b.shape) from None


def matmul(a, b):
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else -1]:
        raise ShapeError("matmul", a.shape, b.shape)
    return check_finite(a @ b, "matmul")


def add(a, b):
    _broadcastable("add", a, b)
    return check_finite(a + b, "add")


def mul(a, b):
    _broadcastable("mul", a, b)
    return check_finite(a * b, "mul")


def square(x):
    return check_finite(x * x, "square")


def concat(ts: Sequence[torch.Tensor], dim: int = -1):
    ref = ts[0].shape
    d = dim % len(ref)
    for t in ts[1:]:
        if t.dim() != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != d):
            raise ShapeError("concat", *(t.shape for t in ts))
    return torch.cat(list(ts), dim=dim)


def slice_(x, dim: int, start: int, stop: int):
    n = x.shape[dim]
    if not 0 <= start <= stop <= n:
        raise ShapeError("slice", x.shape, detail=f"[{start}:{stop}] on dim {dim}")
    return x.narrow(dim, start, stop - start)


def softmax(x, dim: int = -1):
    return check_finite(torch.softmax(x, dim=dim), "softmax")


def log_softmax(x, dim: int = -1):
    return check_finite(torch.log_softmax(x, dim=dim), "log_softmax")


def tanh(x):
    return torch.tanh(x)


def sigmoid(x):
    return torch.sigmoid(x)


def logsumexp(x, dim: int = -1):
    return check_finite(torch.logsumexp(x, dim=dim), "logsumexp")


def l1_norm(x):
    # torch's abs has subgradient 0 at 0
    return check_finite(x.abs().sum(), "l1_norm")


def mean(x, mask: torch.Tensor | None = None):
    """Mean over all elements, or over the positions where ``mask`` is true.

    ``mask`` may cover leading dimensions only (e.g. (B, T) for a (B, T, H) tensor).
    """
    if mask is None:
        return check_finite(x.mean(), "mean")
    if tuple(x.shape[: mask.dim()]) != tuple(mask.shape):
        raise ShapeError("mean", x.shape, mask.shape)
    m = mask.to(x.dtype)
    while m.dim() < x.dim():
        m = m.unsqueeze(-1)
    m = m.expand_as(x)
    count = m.sum()
    if count == 0:
        raise ShapeError("mean", x.shape, mask.shape, detail="mask selects nothing")
    return check_finite((x * m).sum() / count, "mean")


def embedding(ids: torch.Tensor, table: torch.Tensor):
    if table.dim() != 2:
        raise ShapeError("embedding", ids.shape, table.shape)
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise ShapeError("embedding", ids.shape, table.shape, detail="id out of range")
    return table[ids]


def length_mask(lengths, max_len: int | None = None) -> torch.Tensor:
    """Boolean (B, T) mask, true on valid positions."""
    lengths = torch.as_tensor(lengths, dtype=torch.long)
    T = int(lengths.max()) if max_len is None else max_len
    return torch.arange(T).unsqueeze(0) < lengths.unsqueeze(1)


def time_mask(x, lengths):
    """Zero frames beyond each sequence's length in a (B, T, ...) batch."""
    if x.shape[0] != len(lengths):
        raise ShapeError("time_mask", x.shape, (len(lengths),))
    m = length_mask(lengths, x.shape[1]).to(x.dtype)
    while m.dim() < x.dim():
        m = m.unsqueeze(-1)
    return x * m


def _fd_compare(loss_fn: Callable[[], torch.Tensor], leaves: Sequence[torch.Tensor], step: float) -> float:
    for p in leaves:
        p.grad = None
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise NumericFault("grad_check: non-finite loss at base point")
    grads = torch.autograd.grad(loss, leaves, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(leaves, grads):
            g = torch.zeros_like(p) if g is None else g
            flat, gflat = p.view(-1), g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                fp = float(loss_fn())
                flat[i] = orig - step
                fm = float(loss_fn())
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise NumericFault(f"grad_check: non-finite loss at perturbed coordinate {i}")
                fd = (fp - fm) / (2 * step)
                a = float(gflat[i])
                worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst


def grad_check(loss_fn: Callable[[torch.Tensor], torch.Tensor], point: torch.Tensor, step: float = 1e-6) -> float:
    """Max relative error between autograd and central differences at ``point``.

    Relative error per coordinate is ``|analytic - fd| / max(1, |analytic|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = point.detach().clone().to(DTYPE).requires_grad_(True)
    return _fd_compare(lambda: loss_fn(x), [x], step)


def grad_check_params(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], step: float = 1e-6) -> float:
    """Same as :func:`grad_check`, perturbing ``params`` in place (e.g. a module's parameters)."""
    if step <= 0:
        raise ValueError("step must be positive")
    return _fd_compare(loss_fn, [p for p in params if p.requires_grad], step)
