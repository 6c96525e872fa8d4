"""SpecAugment-style frequency and time masking (no time warping)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AugmentConfig:
    n_freq_masks: int = 1
    max_freq_width: int = 4
    n_time_masks: int = 1
    max_time_width: int = 8
    enabled: bool = True

    def __post_init__(self):
        for name in ("n_freq_masks", "max_freq_width", "n_time_masks", "max_time_width"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def spec_augment(frames: np.ndarray, cfg: AugmentConfig, seed) -> np.ndarray:
    """Return a masked copy of a (T, F) feature matrix.

    Masked cells take the utterance's mean value. Widths are drawn uniformly
    from ``[0, max_width]`` (clipped to the axis), start positions uniformly
    over the valid range. ``seed`` may be an int or a ``numpy`` Generator.
    """
    if frames.size == 0:
        raise ValueError("spec_augment: empty feature sequence")
    if not cfg.enabled:
        return frames.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    T, F = frames.shape
    out = frames.copy()
    fill = frames.mean()
    for axis, n_masks, max_w, size in ((1, cfg.n_freq_masks, cfg.max_freq_width, F), (0, cfg.n_time_masks, cfg.max_time_width, T)):
        for _ in range(n_masks):
            w = int(rng.integers(0, min(max_w, size) + 1))
            start = int(rng.integers(0, size - w + 1))
            if w == 0:
                continue
            if axis == 1:
                out[:, start : start + w] = fill
            else:
                out[start : start + w, :] = fill
    return out
