"""Gaussian-kernel maximum mean discrepancy between two sets of vectors."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from cidnst.numerics import DTYPE, ShapeError, check_finite


@dataclass(frozen=True)
class MmdConfig:
    """``bandwidth`` is ``"median"`` (median heuristic) or a positive float σ."""

    bandwidth: str | float = "median"
    kernel: str = "gaussian-rbf"
    estimator: str = "biased"

    def __post_init__(self):
        if self.kernel != "gaussian-rbf" or self.estimator != "biased":
            raise ValueError("only the biased Gaussian-RBF estimator is implemented")
        if self.bandwidth != "median":
            if not isinstance(self.bandwidth, (int, float)) or self.bandwidth <= 0:
                raise ValueError(f"fixed bandwidth must be > 0, got {self.bandwidth!r}")


def sq_dists(a, b):
    # exact differences rather than the |a|^2 + |b|^2 - 2ab expansion: zero on identical rows
    return ((a.unsqueeze(1) - b.unsqueeze(0)) ** 2).sum(-1)


def median_sq_bandwidth(a, b):
    """σ² = median squared pairwise distance over the union (pairs i < j); 1 if that is 0."""
    u = torch.cat([a, b], dim=0)
    n = u.shape[0]
    iu = torch.triu_indices(n, n, offset=1)
    d = sq_dists(u, u)[iu[0], iu[1]]
    if d.numel() == 0:
        return torch.ones((), dtype=u.dtype)
    med = d.median()
    if med.item() <= 0:
        return torch.ones((), dtype=u.dtype)
    return med


def compute(a: torch.Tensor, b: torch.Tensor, cfg: MmdConfig = MmdConfig()) -> torch.Tensor:
    """Biased squared MMD: mean k(a,a) + mean k(b,b) - 2 mean k(a,b), clamped at 0.

    ``a`` is (n, H), ``b`` is (m, H). Differentiable in both (the median
    bandwidth is differentiated through as well).
    """
    a = torch.as_tensor(a, dtype=DTYPE)
    b = torch.as_tensor(b, dtype=DTYPE)
    if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("mmd", a.shape, b.shape)
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ShapeError("mmd", a.shape, b.shape, detail="empty sample set")
    if cfg.bandwidth == "median":
        sigma2 = median_sq_bandwidth(a, b)
    else:
        sigma2 = torch.tensor(float(cfg.bandwidth) ** 2, dtype=DTYPE)
    scale = -0.5 / sigma2
    kaa = torch.exp(sq_dists(a, a) * scale).mean()
    kbb = torch.exp(sq_dists(b, b) * scale).mean()
    # both cross orders summed so swapping a and b gives the same float
    kab = torch.exp(sq_dists(a, b) * scale).mean() + torch.exp(sq_dists(b, a) * scale).mean()
    val = kaa + kbb - kab
    return check_finite(torch.clamp(val, min=0.0), "mmd")
