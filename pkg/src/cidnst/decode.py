"""Greedy and beam-search decoding with optional LM shallow fusion.

Hypothesis score = Σ log p_model + lm_weight · Σ log p_lm over the emitted
tokens (EOS included), divided by the number of emitted tokens when
``length_norm`` is on. The reserved ids PAD, SOS and UNK are never emitted.
Equal scores are broken in favour of the lexicographically smaller token
sequence.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import torch

from cidnst.data import EOS, PAD, SOS, UNK
from cidnst.model import CIDModel

BANNED = (PAD, SOS, UNK)


@dataclass
class DecodeConfig:
    beam: int = 20
    lm_weight: float | None = None  # None -> 0.3 when an LM is given, else 0
    max_len_ratio: float = 1.5
    length_norm: bool = True

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if self.lm_weight is not None and self.lm_weight < 0:
            raise ValueError("lm_weight must be >= 0")
        if self.max_len_ratio <= 0:
            raise ValueError("max_len_ratio must be > 0")

    def weight_for(self, lm) -> float:
        if lm is None:
            return 0.0
        return 0.3 if self.lm_weight is None else self.lm_weight


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]  # body, without EOS
    score: float
    truncated: bool = False  # max length reached without EOS


def max_length(enc_len: int, ratio: float) -> int:
    return max(1, math.ceil(ratio * enc_len))


def _final_score(total: float, n_emitted: int, length_norm: bool) -> float:
    return total / n_emitted if length_norm else total


def _ban(logp):
    logp = logp.clone()
    logp[:, list(BANNED)] = float("-inf")
    return logp


@torch.no_grad()
def greedy_batch(model: CIDModel, enc, enc_lengths, max_len_ratio: float = 1.5, length_norm: bool = True) -> list[Hypothesis]:
    """Argmax decoding of a batch of encoder outputs."""
    B = enc.shape[0]
    limits = [max_length(int(n), max_len_ratio) for n in enc_lengths]
    state = model.decoder.init_state(enc, enc_lengths)
    prev = torch.full((B,), SOS, dtype=torch.long)
    toks = [[] for _ in range(B)]
    totals = [0.0] * B
    done = [False] * B
    truncated = [False] * B
    for t in range(max(limits)):
        logp, state = model.decoder.step(prev, state)
        logp = _ban(logp)
        best = logp.argmax(dim=-1)
        for b in range(B):
            if done[b]:
                continue
            k = int(best[b])
            totals[b] += float(logp[b, k])
            toks[b].append(k)
            if k == EOS:
                done[b] = True
            elif len(toks[b]) >= limits[b]:
                done[b] = truncated[b] = True
        if all(done):
            break
        prev = best
    out = []
    for b in range(B):
        body = tuple(k for k in toks[b] if k != EOS)
        out.append(Hypothesis(body, _final_score(totals[b], len(toks[b]), length_norm), truncated[b]))
    return out


def greedy_decode(model: CIDModel, frames, cfg: DecodeConfig | None = None) -> Hypothesis:
    cfg = cfg or DecodeConfig()
    with torch.no_grad():
        enc, lengths = model.encode_speech([frames])
    return greedy_batch(model, enc, lengths, cfg.max_len_ratio, cfg.length_norm)[0]


@torch.no_grad()
def beam_search(model: CIDModel, frames, lm=None, cfg: DecodeConfig | None = None) -> list[Hypothesis]:
    """Ranked hypotheses (best first), at most ``cfg.beam`` of them."""
    cfg = cfg or DecodeConfig()
    w = cfg.weight_for(lm)
    use_lm = lm is not None and w > 0
    enc, lengths = model.encode_speech([frames])
    limit = max_length(int(lengths[0]), cfg.max_len_ratio)

    state = model.decoder.init_state(enc, lengths)
    lm_state = lm.init_state(1) if use_lm else None
    alive: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    prev = torch.tensor([SOS], dtype=torch.long)
    finished: list[Hypothesis] = []

    for step in range(limit):
        logp, state = model.decoder.step(prev, state)
        scores = _ban(logp)
        if use_lm:
            lm_lp, lm_state = lm.step(prev, lm_state)
            scores = scores + w * lm_lp
        base = torch.tensor([s for _, s in alive], dtype=scores.dtype).unsqueeze(1)
        cand = (base + scores).tolist()
        pool = []
        for a, (toks, _) in enumerate(alive):
            row = cand[a]
            for k, s in enumerate(row):
                if s != float("-inf"):
                    pool.append((s, toks + (k,), a))
        pool.sort(key=lambda c: (-c[0], c[1]))
        keep_idx, next_alive = [], []
        for s, toks, a in pool[: cfg.beam]:
            if toks[-1] == EOS:
                finished.append(Hypothesis(toks[:-1], _final_score(s, len(toks), cfg.length_norm)))
            else:
                next_alive.append((toks, s))
                keep_idx.append(a)
        if not next_alive:
            alive = []
            break
        index = torch.tensor(keep_idx, dtype=torch.long)
        state = model.decoder.select(state, index)
        if use_lm:
            lm_state = lm.select(lm_state, index)
        alive = next_alive
        prev = torch.tensor([t[-1] for t, _ in alive], dtype=torch.long)

    for toks, s in alive:
        finished.append(Hypothesis(toks, _final_score(s, len(toks), cfg.length_norm), truncated=True))
    finished.sort(key=lambda h: (-h.score, h.tokens))
    return finished[: cfg.beam]


def decode_threads() -> int:
    try:
        return max(1, int(os.environ.get("CIDNST_THREADS", "1")))
    except ValueError:
        return 1


def decode_corpus(model: CIDModel, frames_list, lm=None, cfg: DecodeConfig | None = None, greedy: bool = False):
    """Decode many utterances; returns one n-best list per utterance (greedy -> 1-best).

    Utterances are independent, so they may run on ``CIDNST_THREADS`` threads
    against the (read-only) model.
    """
    cfg = cfg or DecodeConfig()
    model.eval()
    if greedy:
        out = []
        for i in range(0, len(frames_list), 64):
            with torch.no_grad():
                enc, lengths = model.encode_speech(frames_list[i : i + 64])
            out.extend([h] for h in greedy_batch(model, enc, lengths, cfg.max_len_ratio, cfg.length_norm))
        return out
    n = decode_threads()
    if n == 1:
        return [beam_search(model, fr, lm, cfg) for fr in frames_list]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda fr: beam_search(model, fr, lm, cfg), frames_list))
