"""Four-component encoder-decoder: speech front-end f, text embedding g,
shared encoder ê, attention decoder d, plus a CTC head on ê's output.

Speech is encoded as ê(f(x)) and text as ê(g(y)); f, g and ê all produce
width-``hidden`` latents so speech and text share ê and the decoder.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from cidnst.checkpoint import read_container, write_container
from cidnst.data import EOS, PAD, SOS, FeatureSequence, FormatError, TokenSequence, Vocab, VocabError
from cidnst.numerics import DTYPE, ShapeError, length_mask

MODEL_MAGIC = b"CIDM"


class ConfigError(ValueError):
    pass


class TooShortError(ValueError):
    pass


class EmptySequenceError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    feat_dim: int = 16
    hidden: int = 32
    subsample: int = 4
    dec_units: int = 64
    att_dim: int = 32
    emb_dim: int = 32
    identity_shared: bool = False
    # optional explicit widths; must agree with ``hidden``
    frontend_width: int | None = None
    text_width: int | None = None

    def validate(self):
        if self.hidden % 2:
            raise ConfigError("hidden must be even (bidirectional layers split it in half)")
        for name in ("frontend_width", "text_width"):
            w = getattr(self, name)
            if w is not None and w != self.hidden:
                raise ConfigError(f"{name}={w} disagrees with shared encoder width {self.hidden}")
        if self.subsample < 1 or self.vocab_size < len((PAD, SOS, EOS)) + 1:
            raise ConfigError("subsample must be >= 1 and vocab_size must cover the reserved ids")
        for name in ("feat_dim", "dec_units", "att_dim", "emb_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


def _as_lengths(lengths) -> torch.Tensor:
    return torch.as_tensor(lengths, dtype=torch.long)


def run_rnn(rnn: nn.LSTM, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    packed = pack_padded_sequence(x, lengths, batch_first=True, enforce_sorted=False)
    out, _ = rnn(packed)
    out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.shape[1])
    return out


def pad_arrays(arrays, value=0.0) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack variable-length (T_i, ...) arrays into a (B, T_max, ...) tensor plus lengths."""
    lengths = [a.shape[0] for a in arrays]
    out = torch.full((len(arrays), max(lengths), *arrays[0].shape[1:]), value, dtype=DTYPE)
    for i, a in enumerate(arrays):
        out[i, : lengths[i]] = torch.as_tensor(a, dtype=DTYPE)
    return out, _as_lengths(lengths)


def pad_tokens(seqs, value=PAD) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = [len(s) for s in seqs]
    out = torch.full((len(seqs), max(lengths)), value, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : lengths[i]] = torch.as_tensor(list(s), dtype=torch.long)
    return out, _as_lengths(lengths)


class Frontend(nn.Module):
    """Strided convolution (kernel = stride = r) then a bidirectional LSTM."""

    def __init__(self, feat_dim, hidden, subsample):
        super().__init__()
        self.r = subsample
        self.conv = nn.Conv1d(feat_dim, hidden, kernel_size=subsample, stride=subsample)
        self.rnn = nn.LSTM(hidden, hidden // 2, batch_first=True, bidirectional=True)

    def forward(self, x, lengths):
        B, T, _ = x.shape
        Tp = math.ceil(T / self.r) * self.r
        x = x * length_mask(lengths, T).unsqueeze(-1).to(x.dtype)
        if Tp > T:
            x = nn.functional.pad(x, (0, 0, 0, Tp - T))
        h = torch.tanh(self.conv(x.transpose(1, 2)).transpose(1, 2))
        out_len = (lengths + self.r - 1) // self.r
        return run_rnn(self.rnn, h, out_len), out_len


class TextEmbed(nn.Module):
    """One-hot lookup followed by one bidirectional LSTM."""

    def __init__(self, vocab_size, hidden):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, hidden)
        self.rnn = nn.LSTM(hidden, hidden // 2, batch_first=True, bidirectional=True)

    def forward(self, ids, lengths):
        return run_rnn(self.rnn, self.embed(ids), lengths), lengths


class SharedEncoder(nn.Module):
    """Length-preserving residual BLSTM: ê(b) = b + W·BLSTM(b).

    With ``proj`` zeroed the layer is exactly the identity.
    """

    def __init__(self, hidden, identity=False):
        super().__init__()
        self.rnn = nn.LSTM(hidden, hidden // 2, batch_first=True, bidirectional=True)
        self.proj = nn.Linear(hidden, hidden)
        if identity:
            nn.init.zeros_(self.proj.weight)
            nn.init.zeros_(self.proj.bias)

    def forward(self, b, lengths):
        out = b + self.proj(run_rnn(self.rnn, b, lengths))
        return out * length_mask(lengths, b.shape[1]).unsqueeze(-1).to(b.dtype)


class AttentionDecoder(nn.Module):
    """Single LSTM cell with additive attention and input feeding."""

    def __init__(self, vocab_size, hidden, units, att_dim, emb_dim):
        super().__init__()
        self.vocab_size = vocab_size
        self.units = units
        self.hidden = hidden
        self.embed = nn.Embedding(vocab_size, emb_dim)
        self.cell = nn.LSTMCell(emb_dim + hidden, units)
        self.att_enc = nn.Linear(hidden, att_dim, bias=False)
        self.att_dec = nn.Linear(units, att_dim)
        self.att_v = nn.Linear(att_dim, 1, bias=False)
        self.out = nn.Linear(units + hidden, vocab_size)

    def init_state(self, enc, enc_lengths):
        B = enc.shape[0]
        z = enc.new_zeros(B, self.units)
        return {
            "h": z,
            "c": z,
            "ctx": enc.new_zeros(B, self.hidden),
            "enc": enc,
            "proj": self.att_enc(enc),
            "mask": length_mask(enc_lengths, enc.shape[1]),
        }

    def step(self, prev, state):
        """Advance one token; returns (B, V) log-probabilities and the new state."""
        h, c = self.cell(torch.cat([self.embed(prev), state["ctx"]], dim=-1), (state["h"], state["c"]))
        e = self.att_v(torch.tanh(state["proj"] + self.att_dec(h).unsqueeze(1))).squeeze(-1)
        e = e.masked_fill(~state["mask"], float("-inf"))
        a = torch.softmax(e, dim=-1)
        ctx = torch.bmm(a.unsqueeze(1), state["enc"]).squeeze(1)
        logp = torch.log_softmax(self.out(torch.cat([h, ctx], dim=-1)), dim=-1)
        new = dict(state)
        new.update(h=h, c=c, ctx=ctx)
        return logp, new

    def select(self, state, index):
        """Reorder/gather the batch dimension (used by beam search)."""
        return {k: v.index_select(0, index) for k, v in state.items()}

    def forward(self, enc, enc_lengths, ys_in):
        state = self.init_state(enc, enc_lengths)
        out = []
        for t in range(ys_in.shape[1]):
            logp, state = self.step(ys_in[:, t], state)
            out.append(logp)
        return torch.stack(out, dim=1)


class CIDModel(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.frontend = Frontend(cfg.feat_dim, cfg.hidden, cfg.subsample)
            self.text_embed = TextEmbed(cfg.vocab_size, cfg.hidden)
            self.shared = SharedEncoder(cfg.hidden, identity=cfg.identity_shared)
            self.decoder = AttentionDecoder(cfg.vocab_size, cfg.hidden, cfg.dec_units, cfg.att_dim, cfg.emb_dim)
            self.ctc_head = nn.Linear(cfg.hidden, cfg.vocab_size + 1)
        self.to(DTYPE)

    @property
    def blank(self) -> int:
        return self.cfg.vocab_size

    # -- batched building blocks --------------------------------------

    def speech_latents(self, frames_list):
        """f(x) for a list of (T, F) arrays -> (B, L, H) latents and lengths."""
        for fr in frames_list:
            if fr.shape[0] < self.cfg.subsample:
                raise TooShortError(f"{fr.shape[0]} frames is shorter than subsampling factor {self.cfg.subsample}")
            if fr.shape[1] != self.cfg.feat_dim:
                raise ShapeError("frontend", fr.shape, (fr.shape[0], self.cfg.feat_dim))
        x, lengths = pad_arrays(frames_list)
        return self.frontend(x, lengths)

    def text_latents(self, token_lists):
        """g(y) for a list of token-id sequences (bodies, no EOS)."""
        for toks in token_lists:
            if len(toks) == 0:
                raise EmptySequenceError("cannot embed an empty token sequence")
            for t in toks:
                if not 0 <= int(t) < self.cfg.vocab_size:
                    raise VocabError(f"token id {int(t)} outside vocabulary of size {self.cfg.vocab_size}")
        ids, lengths = pad_tokens(token_lists)
        return self.text_embed(ids, lengths)

    def shared_encode(self, b, lengths):
        if b.shape[-1] != self.cfg.hidden:
            raise ShapeError("shared_encode", b.shape, (b.shape[0], b.shape[1], self.cfg.hidden))
        return self.shared(b, lengths)

    def encode_speech(self, frames_list):
        """e(x) = ê(f(x))."""
        b, lengths = self.speech_latents(frames_list)
        return self.shared_encode(b, lengths), lengths

    def encode_text(self, token_lists):
        b, lengths = self.text_latents(token_lists)
        return self.shared_encode(b, lengths), lengths

    def ctc_logprobs(self, enc):
        return torch.log_softmax(self.ctc_head(enc), dim=-1)

    def teacher_forced(self, enc, enc_lengths, bodies):
        """Decoder log-probs for targets ``body + [EOS]``.

        Returns (B, U, V) log-probs, (B, U) targets and (B, U) validity mask.
        """
        ys_in, lengths = pad_tokens([(SOS, *b) for b in bodies])
        ys_out, _ = pad_tokens([(*b, EOS) for b in bodies])
        logp = self.decoder(enc, enc_lengths, ys_in)
        return logp, ys_out, length_mask(lengths, ys_in.shape[1])


# -- single-utterance API -----------------------------------------------------


def frontend(model: CIDModel, x: FeatureSequence) -> torch.Tensor:
    h, _ = model.speech_latents([x.frames])
    return h[0]


def embed_text(model: CIDModel, y: TokenSequence) -> torch.Tensor:
    h, _ = model.text_latents([y.tokens])
    return h[0]


def shared_encode(model: CIDModel, b: torch.Tensor) -> torch.Tensor:
    if b.dim() != 2:
        raise ShapeError("shared_encode", b.shape)
    return model.shared_encode(b.unsqueeze(0), _as_lengths([b.shape[0]]))[0]


def decode_teacher_forced(model: CIDModel, h: torch.Tensor, y) -> torch.Tensor:
    """(|y|, V) log-probs where ``y`` (ids) must end with the EOS token."""
    y = list(y.tokens if isinstance(y, TokenSequence) else y)
    if h.shape[0] == 0:
        raise EmptySequenceError("empty encoder output")
    if not y or y[-1] != EOS:
        raise FormatError("target sequence must end with the end-of-sequence token")
    logp, _, _ = model.teacher_forced(h.unsqueeze(0), _as_lengths([h.shape[0]]), [y[:-1]])
    return logp[0]


def ctc_frame_logits(model: CIDModel, h: torch.Tensor) -> torch.Tensor:
    return model.ctc_logprobs(h)


# -- checkpoints ----------------------------------------------------------


def save_model(path, model: CIDModel, vocab: Vocab, extra: dict | None = None):
    config = {"kind": "asr", "model": asdict(model.cfg), "charset": vocab.charset}
    if extra:
        config["extra"] = extra
    write_container(path, MODEL_MAGIC, config, dict(model.state_dict()))


def load_model(path) -> tuple[CIDModel, Vocab, dict]:
    config, tensors = read_container(path, MODEL_MAGIC)
    model = CIDModel(ModelConfig(**config["model"]))
    model.load_state_dict(tensors, strict=True)
    return model, Vocab(config["charset"]), config.get("extra", {})


def snapshot(model: CIDModel) -> dict[str, np.ndarray]:
    return {k: v.detach().numpy().copy() for k, v in model.state_dict().items()}
