"""Levenshtein alignment, WER/CER with INS/DEL/SUB breakdown, and WERR."""
from __future__ import annotations

from dataclasses import dataclass

from cidnst import kernels

OPS = ("match", "sub", "ins", "del")


@dataclass
class EditOp:
    op: str
    ref: str | None
    hyp: str | None


def align(ref, hyp) -> tuple[int, list[EditOp]]:
    """Minimal unit-cost edit script turning ``ref`` into ``hyp``.

    On equal cost the backtrace prefers substitution, then insertion, then
    deletion.
    """
    ref, hyp = list(ref), list(hyp)
    ids: dict = {}
    r = [ids.setdefault(t, len(ids)) for t in ref]
    h = [ids.setdefault(t, len(ids)) for t in hyp]
    dist, codes = kernels.levenshtein_align(r, h)
    script, i, j = [], 0, 0
    for c in codes:
        op = OPS[int(c)]
        if op in ("match", "sub"):
            script.append(EditOp(op, ref[i], hyp[j]))
            i += 1
            j += 1
        elif op == "ins":
            script.append(EditOp(op, None, hyp[j]))
            j += 1
        else:
            script.append(EditOp(op, ref[i], None))
            i += 1
    return int(dist), script


@dataclass
class ErrorBreakdown:
    """Corpus-level error rates in percent of reference tokens."""

    wer: float
    ins: float
    del_: float
    sub: float
    n_ref_words: int
    n_ins: int = 0
    n_del: int = 0
    n_sub: int = 0

    def as_dict(self):
        return {
            "wer": self.wer,
            "ins": self.ins,
            "del": self.del_,
            "sub": self.sub,
            "n_ref": self.n_ref_words,
            "n_ins": self.n_ins,
            "n_del": self.n_del,
            "n_sub": self.n_sub,
        }


def _count(pairs):
    n_ref = n_ins = n_del = n_sub = 0
    for ref, hyp in pairs:
        n_ref += len(ref)
        _, script = align(ref, hyp)
        for e in script:
            if e.op == "ins":
                n_ins += 1
            elif e.op == "del":
                n_del += 1
            elif e.op == "sub":
                n_sub += 1
    if n_ref == 0:
        raise ValueError("reference corpus has no tokens")
    pct = 100.0 / n_ref
    return ErrorBreakdown(
        wer=(n_ins + n_del + n_sub) * pct,
        ins=n_ins * pct,
        del_=n_del * pct,
        sub=n_sub * pct,
        n_ref_words=n_ref,
        n_ins=n_ins,
        n_del=n_del,
        n_sub=n_sub,
    )


def error_breakdown(refs, hyps) -> ErrorBreakdown:
    """Word-level breakdown over parallel lists of reference/hypothesis strings."""
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    return _count((r.split(), h.split()) for r, h in zip(refs, hyps))


def char_breakdown(refs, hyps) -> ErrorBreakdown:
    """Character-level breakdown after removing whitespace (CER lives in ``.wer``)."""
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    return _count((list("".join(r.split())), list("".join(h.split()))) for r, h in zip(refs, hyps))


def wer(refs, hyps) -> float:
    return error_breakdown(refs, hyps).wer


def cer(refs, hyps) -> float:
    return char_breakdown(refs, hyps).wer


def werr(baseline_wer: float, improved_wer: float) -> float:
    """Relative WER reduction in percent: 100·(baseline − improved)/baseline."""
    if baseline_wer <= 0:
        raise ValueError("baseline WER must be positive")
    return 100.0 * (baseline_wer - improved_wer) / baseline_wer


def mark_errors(ref: str, hyp: str) -> tuple[str, str]:
    """Render an alignment with wrong words in uppercase and gaps as asterisks."""
    _, script = align(ref.split(), hyp.split())
    r_out, h_out = [], []
    for e in script:
        if e.op == "match":
            w = max(len(e.ref), len(e.hyp))
            r_out.append(e.ref.ljust(w))
            h_out.append(e.hyp.ljust(w))
        elif e.op == "sub":
            w = max(len(e.ref), len(e.hyp))
            r_out.append(e.ref.upper().ljust(w))
            h_out.append(e.hyp.upper().ljust(w))
        elif e.op == "ins":
            r_out.append("*" * len(e.hyp))
            h_out.append(e.hyp.upper())
        else:
            r_out.append(e.ref.upper())
            h_out.append("*" * len(e.ref))
    return " ".join(r_out).rstrip(), " ".join(h_out).rstrip()


def score_report(ref_pairs, hyp_pairs, per_utterance: bool = False, title: str = "corpus") -> str:
    """Plain-text report for ``[(utt_id, text), ...]`` references and hypotheses.

    Utterances are matched by id; a missing hypothesis counts as empty.
    """
    hyp_map = dict(hyp_pairs)
    ids = [u for u, _ in ref_pairs]
    refs = [t for _, t in ref_pairs]
    hyps = [hyp_map.get(u, "") for u in ids]
    w = error_breakdown(refs, hyps)
    c = char_breakdown(refs, hyps)
    lines = [
        f"# {title}: {len(ids)} utterances, {w.n_ref_words} words, {c.n_ref_words} chars",
        f"WER {w.wer:.2f} INS {w.ins:.2f} DEL {w.del_:.2f} SUB {w.sub:.2f}",
        f"CER {c.wer:.2f} INS {c.ins:.2f} DEL {c.del_:.2f} SUB {c.sub:.2f}",
    ]
    if per_utterance:
        for u, r, h in zip(ids, refs, hyps):
            rr, hh = mark_errors(r, h)
            lines += [f"{u}\tREF: {rr}", f"{u}\tHYP: {hh}"]
    return "\n".join(lines) + "\n"
