import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cidnst.augment import AugmentConfig, spec_augment


def test_disabled_is_identity():
    x = np.random.default_rng(0).normal(size=(20, 8))
    y = spec_augment(x, AugmentConfig(enabled=False), 0)
    assert np.array_equal(x, y) and y is not x


def test_seeded_determinism():
    x = np.random.default_rng(0).normal(size=(30, 8))
    cfg = AugmentConfig()
    assert np.array_equal(spec_augment(x, cfg, 7), spec_augment(x, cfg, 7))
    outs = {spec_augment(x, cfg, s).tobytes() for s in range(10)}
    assert len(outs) > 1


@settings(max_examples=100, deadline=None)
@given(
    T=st.integers(1, 40),
    F=st.integers(1, 12),
    nf=st.integers(0, 3),
    fw=st.integers(0, 6),
    nt=st.integers(0, 3),
    tw=st.integers(0, 10),
    seed=st.integers(0, 1000),
)
def test_masked_area_bounded_and_shape_kept(T, F, nf, fw, nt, tw, seed):
    x = np.random.default_rng(seed).normal(size=(T, F)) + 10.0
    cfg = AugmentConfig(nf, fw, nt, tw)
    y = spec_augment(x, cfg, seed)
    assert y.shape == x.shape
    changed = int((y != x).sum())
    assert changed <= nf * fw * T + nt * tw * F
    assert np.all((y == x) | (y == x.mean()))


def test_rejects_empty_and_negative():
    with pytest.raises(ValueError):
        spec_augment(np.zeros((0, 4)), AugmentConfig(), 0)
    with pytest.raises(ValueError):
        AugmentConfig(n_time_masks=-1)
