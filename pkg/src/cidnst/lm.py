"""Character-level LSTM language model used for shallow fusion."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from cidnst.checkpoint import read_container, write_container
from cidnst.data import EOS, SOS, Vocab, VocabError
from cidnst.model import pad_tokens
from cidnst.numerics import DTYPE, NumericFault, length_mask

LM_MAGIC = b"CIDL"
log = logging.getLogger(__name__)


@dataclass
class LMConfig:
    units: int = 64
    emb_dim: int = 32
    epochs: int = 8
    lr: float = 3e-3
    batch_size: int = 32
    seed: int = 0


class CharLM(nn.Module):
    def __init__(self, vocab_size: int, units: int = 64, emb_dim: int = 32, seed: int = 0):
        super().__init__()
        self.vocab_size = vocab_size
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.embed = nn.Embedding(vocab_size, emb_dim)
            self.rnn = nn.LSTM(emb_dim, units, batch_first=True)
            self.out = nn.Linear(units, vocab_size)
        self.to(DTYPE)
        self.history: list[float] = []

    def forward(self, ids):
        h, _ = self.rnn(self.embed(ids))
        return torch.log_softmax(self.out(h), dim=-1)

    # incremental scoring for beam search
    def init_state(self, batch: int):
        z = torch.zeros(1, batch, self.rnn.hidden_size, dtype=DTYPE)
        return (z, z)

    def step(self, prev, state):
        h, state = self.rnn(self.embed(prev).unsqueeze(1), state)
        return torch.log_softmax(self.out(h[:, 0]), dim=-1), state

    @staticmethod
    def select(state, index):
        return tuple(s.index_select(1, index) for s in state)


def _encode_corpus(texts, vocab: Vocab):
    out = []
    for t in texts:
        if isinstance(t, str):
            bad = {c for c in t if c not in vocab.stoi}
            if bad:
                raise VocabError(f"characters {sorted(bad)} not in the tokenizer charset")
            out.append(vocab.encode(t).tokens)
        else:
            vocab.check_ids(t)
            out.append(tuple(int(i) for i in t))
    return out


def _batch_nll(lm: CharLM, bodies):
    ids_in, lengths = pad_tokens([(SOS, *b) for b in bodies])
    ids_out, _ = pad_tokens([(*b, EOS) for b in bodies])
    logp = lm(ids_in)
    nll = -logp.gather(2, ids_out.unsqueeze(-1)).squeeze(-1)
    mask = length_mask(lengths, ids_in.shape[1]).to(DTYPE)
    return (nll * mask).sum(), mask.sum()


def train_lm(texts, vocab: Vocab, cfg: LMConfig | None = None) -> CharLM:
    """Train on strings (or token-id sequences); per-epoch mean token NLL lands in ``lm.history``."""
    cfg = cfg or LMConfig()
    bodies = _encode_corpus(texts, vocab)
    if not bodies:
        raise ValueError("cannot train a language model on an empty corpus")
    lm = CharLM(len(vocab), cfg.units, cfg.emb_dim, seed=cfg.seed)
    opt = torch.optim.Adam(lm.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(bodies))
        tot, n = 0.0, 0.0
        for i in range(0, len(order), cfg.batch_size):
            batch = [bodies[j] for j in order[i : i + cfg.batch_size]]
            nll, count = _batch_nll(lm, batch)
            loss = nll / count
            if not torch.isfinite(loss):
                raise NumericFault(f"LM training diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(lm.parameters(), 5.0)
            opt.step()
            tot += nll.item()
            n += count.item()
        lm.history.append(tot / n)
        log.info("lm epoch %d nll %.4f", epoch, tot / n)
    lm.eval()
    return lm


@torch.no_grad()
def lm_step_logprobs(lm: CharLM, prefix) -> torch.Tensor:
    """Next-token log-distribution after ``SOS + prefix``."""
    prefix = list(prefix.tokens if hasattr(prefix, "tokens") else prefix)
    for t in prefix:
        if not 0 <= int(t) < lm.vocab_size:
            raise VocabError(f"token id {t} outside LM vocabulary")
    ids = torch.tensor([[SOS, *prefix]], dtype=torch.long)
    return lm(ids)[0, -1]


@torch.no_grad()
def perplexity(lm: CharLM, texts, vocab: Vocab) -> float:
    bodies = _encode_corpus(texts, vocab)
    tot, n = 0.0, 0.0
    for i in range(0, len(bodies), 64):
        nll, count = _batch_nll(lm, bodies[i : i + 64])
        tot += nll.item()
        n += count.item()
    return math.exp(tot / n)


def save_lm(path, lm: CharLM, vocab: Vocab):
    config = {
        "kind": "lm",
        "vocab_size": lm.vocab_size,
        "units": lm.rnn.hidden_size,
        "emb_dim": lm.embed.embedding_dim,
        "charset": vocab.charset,
        "history": lm.history,
    }
    write_container(path, LM_MAGIC, config, dict(lm.state_dict()))


def load_lm(path) -> tuple[CharLM, Vocab]:
    config, tensors = read_container(path, LM_MAGIC)
    lm = CharLM(config["vocab_size"], config["units"], config["emb_dim"])
    lm.load_state_dict(tensors, strict=True)
    lm.history = list(config.get("history", []))
    lm.eval()
    return lm, Vocab(config["charset"])
