"""Supervised-ratio (α) schedules and speech-to-text-ratio (β) policies.

Recipe names follow the experiment table naming, e.g.
``decay-min-unpair-loss`` = decaying α with the MIN β policy, and
``min-unpair-loss`` = α fixed at 0.5 with MIN.
"""
from __future__ import annotations

from dataclasses import dataclass

BETA_GRID = tuple(i / 10 for i in range(11))
POLICY_KINDS = ("fixed", "min", "max", "avg", "med")


@dataclass(frozen=True)
class AlphaSchedule:
    mode: str = "decay"  # "fixed" or "decay"
    value: float = 0.5  # used when mode == "fixed"
    start: float = 0.9
    hold_epochs: int = 3
    floor: float = 0.1
    total_epochs: int = 10

    def __post_init__(self):
        if self.mode not in ("fixed", "decay"):
            raise ValueError(f"unknown alpha mode {self.mode!r}")
        if self.mode == "fixed" and not 0.0 <= self.value <= 1.0:
            raise ValueError("fixed alpha must lie in [0, 1]")
        if self.mode == "decay":
            if not 0.0 <= self.floor <= self.start <= 1.0:
                raise ValueError("need 0 <= floor <= start <= 1")
            if not 0 <= self.hold_epochs < self.total_epochs:
                raise ValueError("need 0 <= hold_epochs < total_epochs")

    @classmethod
    def parse(cls, spec: str, **kw) -> "AlphaSchedule":
        """``"decay"`` or ``"fixed:<v>"``."""
        if spec == "decay":
            return cls(mode="decay", **kw)
        if spec.startswith("fixed:"):
            return cls(mode="fixed", value=float(spec.split(":", 1)[1]), **kw)
        raise ValueError(f"alpha must be 'decay' or 'fixed:<v>', got {spec!r}")

    def describe(self) -> str:
        return "decay" if self.mode == "decay" else f"fixed:{self.value}"


def alpha_at(epoch: int, sched: AlphaSchedule) -> float:
    if not 0 <= epoch < sched.total_epochs:
        raise IndexError(f"epoch {epoch} outside [0, {sched.total_epochs})")
    if sched.mode == "fixed":
        return sched.value
    if epoch < sched.hold_epochs:
        return sched.start
    span = sched.total_epochs - 1 - sched.hold_epochs
    if span == 0:
        return sched.floor
    return sched.start - (sched.start - sched.floor) * (epoch - sched.hold_epochs) / span


@dataclass(frozen=True)
class BetaPolicy:
    kind: str = "min"
    beta: float = 0.5  # for kind == "fixed"

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown beta policy {self.kind!r}; choose from {POLICY_KINDS}")
        if self.kind == "fixed" and not 0.0 <= self.beta <= 1.0:
            raise ValueError("fixed beta must lie in [0, 1]")


def unpair_value(l_idt, l_cyc, l_text, beta):
    """L(β) = l_idt + β·l_cyc + (1-β)·l_text, written so that l_cyc == l_text gives a β-independent value.

    Works on floats and on tensors alike.
    """
    return l_idt + l_text + beta * (l_cyc - l_text)


def resolve_beta(l_idt: float, l_cyc: float, l_text: float, policy: BetaPolicy) -> tuple[float, float]:
    """Pick β for one step and return ``(beta_used, l_unpair)``.

    MIN/MAX scan the 11-point grid (ties go to the smaller β). AVG and MED
    both equal L(0.5) on this grid because L is affine in β; β is reported
    as 0.5 for them.
    """
    if policy.kind == "fixed":
        return policy.beta, unpair_value(l_idt, l_cyc, l_text, policy.beta)
    values = [unpair_value(l_idt, l_cyc, l_text, b) for b in BETA_GRID]
    if policy.kind in ("min", "max"):
        sign = 1 if policy.kind == "min" else -1
        i = min(range(len(values)), key=lambda j: (sign * values[j], j))
        return BETA_GRID[i], values[i]
    if policy.kind == "med":
        return 0.5, sorted(values)[len(values) // 2]
    # avg: the grid mean of an affine function over a symmetric grid is its midpoint value
    return 0.5, unpair_value(l_idt, l_cyc, l_text, 0.5)


def parse_recipe(name: str) -> tuple[str, str]:
    """``"decay-min-unpair-loss"`` -> ("decay", "min"); ``"max-unpair-loss"`` -> ("fixed:0.5", "max")."""
    parts = name.lower().split("-")
    if parts[-2:] != ["unpair", "loss"] or len(parts) not in (3, 4):
        raise ValueError(f"not a recipe name: {name!r}")
    kind = parts[-3]
    if kind not in ("min", "max", "avg", "med"):
        raise ValueError(f"unknown policy in recipe {name!r}")
    if len(parts) == 4:
        if parts[0] != "decay":
            raise ValueError(f"not a recipe name: {name!r}")
        return "decay", kind
    return "fixed:0.5", kind


def recipe_name(alpha: AlphaSchedule, policy: BetaPolicy) -> str:
    if policy.kind == "fixed":
        return f"{alpha.describe()}-fixed-beta:{policy.beta}"
    prefix = "decay-" if alpha.mode == "decay" else ""
    return f"{prefix}{policy.kind}-unpair-loss"
