"""Supervised, unpaired and combined training objectives.

All sequence losses are normalised per token (or per latent element) and
then averaged over the utterances in a batch:

* ``loss_pair``  : (1-λ)·attention NLL + λ·CTC NLL on paired (x, y)
* ``loss_idt``   : mean |ê(b) - b| for speech latents b = f(x) and text latents b = g(y)
* ``loss_cyc_dom``: MMD between frames of ê(f(x)) and of ê(g(ŷ)), ŷ the greedy hypothesis of x
* ``loss_text``  : NLL of reconstructing y from ê(g(y))
* ``loss_unpair``: l_idt + β·l_cyc_dom + (1-β)·l_text, β picked by a policy
* ``loss_semi``  : α·l_pair + (1-α)·l_unpair
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch

from cidnst import kernels, mmd
from cidnst.data import SOS
from cidnst.decode import greedy_batch
from cidnst.model import CIDModel
from cidnst.numerics import DTYPE, NumericFault
from cidnst.schedules import BetaPolicy, resolve_beta, unpair_value

TOL = 1e-9


class CtcInfeasible(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


def ctc_min_frames(labels) -> int:
    """Frames needed to emit ``labels``: one per label plus a blank between repeats."""
    labels = list(labels)
    return len(labels) + sum(1 for a, b in zip(labels, labels[1:]) if a == b)


class _CtcFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, logp, labels, blank):
        nll, grad = kernels.ctc_forward_backward(logp.detach().numpy(), labels, blank)
        ctx.save_for_backward(torch.from_numpy(grad))
        return logp.new_tensor(nll)

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad * grad_out, None, None


def loss_ctc(frame_logprobs: torch.Tensor, y, blank: int | None = None) -> torch.Tensor:
    """−log Σ over all blank-augmented alignments of ``y`` (unnormalised).

    ``frame_logprobs`` is (L, V+1); the blank defaults to the last column.
    """
    labels = list(y.tokens if hasattr(y, "tokens") else y)
    L, K = frame_logprobs.shape
    blank = K - 1 if blank is None else blank
    need = ctc_min_frames(labels)
    if need > L:
        raise CtcInfeasible(f"label of length {len(labels)} needs {need} frames, only {L} available")
    if any(not 0 <= t < K or t == blank for t in labels):
        raise ValueError("CTC labels must be non-blank ids inside the output range")
    out = _CtcFunction.apply(frame_logprobs, tuple(labels), blank)
    if not torch.isfinite(out):
        raise NumericFault("ctc: non-finite loss")
    return out


@dataclass
class LossBreakdown:
    l_pair: float = 0.0
    l_idt: float = 0.0
    l_cyc_dom: float = 0.0
    l_text: float = 0.0
    l_unpair: float = 0.0
    l_total: float = 0.0
    beta_used: float = 0.0
    alpha_used: float = 1.0
    n_fallback: int = 0

    def check(self, tol: float = TOL):
        """Raise AssertionError unless both recombination identities hold."""
        u = self.l_idt + self.beta_used * self.l_cyc_dom + (1 - self.beta_used) * self.l_text
        t = self.alpha_used * self.l_pair + (1 - self.alpha_used) * self.l_unpair
        if abs(u - self.l_unpair) > tol:
            raise AssertionError(f"l_unpair identity off by {abs(u - self.l_unpair):.3e}")
        if abs(t - self.l_total) > tol:
            raise AssertionError(f"l_total identity off by {abs(t - self.l_total):.3e}")

    def as_dict(self):
        return asdict(self)


def _per_token_nll(logp, targets, mask):
    nll = -logp.gather(2, targets.unsqueeze(-1)).squeeze(-1)
    m = mask.to(DTYPE)
    return (nll * m).sum(1) / m.sum(1)


def pair_terms(model: CIDModel, batch, need_ctc: bool = True, skip_infeasible: bool = False):
    """Per-utterance attention and CTC NLLs (each per-token normalised) for ``[(frames, body), ...]``.

    With ``skip_infeasible`` an utterance whose label cannot fit the encoder
    frames gets a NaN CTC entry instead of raising :class:`CtcInfeasible`.
    """
    frames = [f for f, _ in batch]
    bodies = [tuple(b) for _, b in batch]
    enc, lengths = model.encode_speech(frames)
    logp, tgt, mask = model.teacher_forced(enc, lengths, bodies)
    att = _per_token_nll(logp, tgt, mask)
    if not need_ctc:
        return att, None
    ctc_lp = model.ctc_logprobs(enc)
    vals = []
    for i, body in enumerate(bodies):
        n = int(lengths[i])
        if skip_infeasible and ctc_min_frames(body) > n:
            vals.append(torch.full((), float("nan"), dtype=DTYPE))
        else:
            vals.append(loss_ctc(ctc_lp[i, :n], body, model.blank) / max(len(body), 1))
    return att, torch.stack(vals)


def loss_pair(model: CIDModel, batch, ctc_weight: float = 0.3, skip_infeasible: bool = False) -> torch.Tensor:
    """Batch mean of (1-λ)·attention + λ·CTC.

    ``skip_infeasible`` drops the CTC term (attention only) for utterances
    whose label is too long for their encoder frames, as can happen with
    pseudo-labels.
    """
    return pair_loss_stats(model, batch, ctc_weight, skip_infeasible)[0]


def pair_loss_stats(model: CIDModel, batch, ctc_weight: float = 0.3, skip_infeasible: bool = False):
    """``(loss, n_ctc_skipped)``; see :func:`loss_pair`."""
    if not batch:
        raise EmptyBatchError("loss_pair needs a non-empty batch")
    if not 0.0 <= ctc_weight <= 1.0:
        raise ValueError("ctc_weight must lie in [0, 1]")
    att, ctc = pair_terms(model, batch, need_ctc=ctc_weight > 0, skip_infeasible=skip_infeasible)
    if ctc is None:
        return att.mean(), 0
    skipped = torch.isnan(ctc)
    per = (1 - ctc_weight) * att + ctc_weight * ctc
    per = torch.where(skipped, att, per)
    return per.mean(), int(skipped.sum())


def idt_terms(model: CIDModel, b, lengths, enc=None):
    """Per-sequence mean |ê(b) − b| over valid elements; pass ``enc`` = ê(b) to reuse it."""
    if enc is None:
        enc = model.shared_encode(b, lengths)
    m = torch.arange(b.shape[1]).unsqueeze(0) < lengths.unsqueeze(1)
    diff = (enc - b).abs().sum(-1) * m.to(DTYPE)
    return diff.sum(1) / (lengths.to(DTYPE) * b.shape[-1])


def loss_idt(model: CIDModel, b: torch.Tensor) -> torch.Tensor:
    """Identity-mapping loss for one latent sequence b (L, H)."""
    lengths = torch.tensor([b.shape[0]])
    return idt_terms(model, b.unsqueeze(0), lengths)[0]


def cyc_terms(model, enc, lengths, mmd_cfg=mmd.MmdConfig(), max_len_ratio=1.5):
    """Per-utterance MMD(ê(f(x)), ê(g(ŷ))) given enc = ê(f(x)).

    The hypothesis ŷ is a discrete, gradient-free greedy decode; gradients
    reach the model through both frame sets.
    """
    hyps = greedy_batch(model, enc.detach(), lengths, max_len_ratio)
    bodies, fallback = [], 0
    for h in hyps:
        if h.tokens:
            bodies.append(h.tokens)
        else:
            bodies.append((SOS,))
            fallback += 1
    cyc_enc, cyc_len = model.encode_text(bodies)
    vals = [
        mmd.compute(enc[i, : int(lengths[i])], cyc_enc[i, : int(cyc_len[i])], mmd_cfg) for i in range(enc.shape[0])
    ]
    return torch.stack(vals), fallback, bodies


def loss_cyc_dom(model: CIDModel, frames, mmd_cfg=mmd.MmdConfig(), max_len_ratio: float = 1.5) -> torch.Tensor:
    enc, lengths = model.encode_speech([frames])
    vals, _, _ = cyc_terms(model, enc, lengths, mmd_cfg, max_len_ratio)
    return vals[0]


def text_terms(model: CIDModel, bodies, enc=None, lengths=None):
    """Per-sequence per-token NLL of y given ê(g(y))."""
    if enc is None:
        enc, lengths = model.encode_text(bodies)
    logp, tgt, mask = model.teacher_forced(enc, lengths, bodies)
    return _per_token_nll(logp, tgt, mask)


def loss_text(model: CIDModel, y) -> torch.Tensor:
    body = tuple(y.tokens if hasattr(y, "tokens") else y)
    return text_terms(model, [body])[0]


def _zero():
    return torch.zeros((), dtype=DTYPE)


def unpair_components(model: CIDModel, speech, texts, mmd_cfg=mmd.MmdConfig(), max_len_ratio=1.5):
    """Tensors (l_idt, l_cyc, l_text) and the fallback count for one unpaired batch."""
    speech, texts = list(speech), [tuple(t) for t in texts]
    if not speech and not texts:
        raise EmptyBatchError("unpaired batch has neither speech nor text")
    idt_parts = []
    l_cyc = l_text = _zero()
    fallback = 0
    if speech:
        b, lengths = model.speech_latents(speech)
        enc = model.shared_encode(b, lengths)
        idt_parts.append(idt_terms(model, b, lengths, enc))
        cyc, fallback, _ = cyc_terms(model, enc, lengths, mmd_cfg, max_len_ratio)
        l_cyc = cyc.mean()
    if texts:
        b, lengths = model.text_latents(texts)
        enc = model.shared_encode(b, lengths)
        idt_parts.append(idt_terms(model, b, lengths, enc))
        l_text = text_terms(model, texts, enc, lengths).mean()
    l_idt = torch.cat(idt_parts).mean()
    return l_idt, l_cyc, l_text, fallback


def loss_unpair(model, speech, texts, policy: BetaPolicy | float = BetaPolicy("min"), mmd_cfg=mmd.MmdConfig(), max_len_ratio=1.5):
    """Returns ``(l_unpair tensor, LossBreakdown)``; β is a float or a :class:`BetaPolicy`."""
    if not isinstance(policy, BetaPolicy):
        policy = BetaPolicy("fixed", float(policy))
    l_idt, l_cyc, l_text, fallback = unpair_components(model, speech, texts, mmd_cfg, max_len_ratio)
    beta, _ = resolve_beta(l_idt.item(), l_cyc.item(), l_text.item(), policy)
    # selection is constant within the step; gradient flows through the chosen combination
    l_unpair = unpair_value(l_idt, l_cyc, l_text, beta)
    bd = LossBreakdown(
        l_idt=l_idt.item(),
        l_cyc_dom=l_cyc.item(),
        l_text=l_text.item(),
        l_unpair=l_unpair.item(),
        beta_used=beta,
        n_fallback=fallback,
    )
    return l_unpair, bd


def loss_semi(
    model,
    paired,
    speech,
    texts,
    alpha: float,
    policy: BetaPolicy | float = BetaPolicy("min"),
    ctc_weight: float = 0.3,
    mmd_cfg=mmd.MmdConfig(),
    max_len_ratio: float = 1.5,
):
    """Returns ``(l_total tensor, LossBreakdown)`` for α·l_pair + (1−α)·l_unpair."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    l_pair = loss_pair(model, paired, ctc_weight) if paired else _zero()
    if speech or texts:
        l_unpair, bd = loss_unpair(model, speech, texts, policy, mmd_cfg, max_len_ratio)
    else:
        if alpha < 1.0:
            raise EmptyBatchError("alpha < 1 needs unpaired speech or text")
        l_unpair, bd = _zero(), LossBreakdown()
    total = alpha * l_pair + (1 - alpha) * l_unpair
    bd.l_pair = l_pair.item()
    bd.l_total = total.item()
    bd.alpha_used = alpha
    return total, bd
