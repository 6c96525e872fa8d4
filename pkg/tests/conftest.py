import numpy as np
import pytest
import torch

from cidnst.data import SynthConfig, Vocab, synth_corpus
from cidnst.model import CIDModel, ModelConfig

torch.set_num_threads(1)


def tiny_model(charset="abcd ", seed=0, **kw):
    vocab = Vocab(charset)
    dims = dict(feat_dim=6, hidden=8, subsample=2, dec_units=10, att_dim=6, emb_dim=6)
    dims.update(kw)
    return CIDModel(ModelConfig(vocab_size=len(vocab), **dims), seed=seed), vocab


def random_frames(rng, n, feat_dim=6, lo=6, hi=14):
    return [rng.normal(size=(int(rng.integers(lo, hi + 1)), feat_dim)) for _ in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_split():
    return synth_corpus(
        SynthConfig(n_paired=24, n_unlabeled=16, n_text=60, n_dev=10, n_test=10, seed=3)
    )


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
