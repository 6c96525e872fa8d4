"""Teacher/student orchestration: NST baseline and the CID-boosted cNST variant.

Stages:

1. ``train_m0``       supervised training on the paired set S, with SpecAugment
2. ``train_cid``      (cnst only) continue from M_0 on S plus external text Y'
3. ``fuse_and_eval``  beam search with LM fusion on dev/test
4. ``generate_labels`` pseudo-label the unlabeled speech X' (no filtering)
5. ``train_student``  fresh model on S + pseudo-labelled X', with SpecAugment
6. the student becomes the teacher; back to 3

Run directory::

    <out>/manifest.json         config, config hash, seeds, generation records
    <out>/config.json, lm.cidl, summary.tsv
    <out>/gen<k>/checkpoint.cidm, nbest.txt, metrics.json, losses.log[, pseudo.txt]
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from cidnst import metrics
from cidnst.augment import spec_augment
from cidnst.config import RunConfig, save_config
from cidnst.data import CorpusSplit, Example, Vocab, check_split_invariants, load_corpus, synth_corpus, write_nbest, write_transcripts
from cidnst.decode import DecodeConfig, decode_corpus
from cidnst.lm import CharLM, load_lm, save_lm, train_lm
from cidnst.losses import loss_semi, pair_loss_stats
from cidnst.mmd import MmdConfig
from cidnst.model import CIDModel, ModelConfig, load_model, save_model
from cidnst.schedules import alpha_at

log = logging.getLogger(__name__)


class TrainingFault(RuntimeError):
    def __init__(self, step: int, msg: str = "loss became non-finite"):
        self.step = step
        super().__init__(f"step {step}: {msg}")


class ConfigConflict(RuntimeError):
    pass


def stage_seed(root: int, stage: str) -> int:
    """Deterministic per-stage seed derived from the root seed."""
    h = hashlib.sha256(f"{root}:{stage}".encode()).digest()
    return int.from_bytes(h[:4], "little") & 0x7FFFFFFF


def model_config(cfg: RunConfig, vocab: Vocab, feat_dim: int) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        vocab_size=len(vocab),
        feat_dim=feat_dim,
        hidden=m.hidden,
        subsample=m.subsample,
        dec_units=m.dec_units,
        att_dim=m.att_dim,
        emb_dim=m.emb_dim,
    )


def _bodies(vocab: Vocab, examples):
    return [(e.frames, vocab.encode(e.text).tokens) for e in examples]


def dev_cer(model: CIDModel, vocab: Vocab, dev: list[Example]) -> float:
    """Greedy, LM-free dev CER used for checkpoint selection."""
    hyps = decode_corpus(model, [e.frames for e in dev], greedy=True)
    return metrics.cer([e.text for e in dev], [vocab.decode(h[0].tokens) for h in hyps])


class _StepLog:
    def __init__(self, path):
        self.fh = open(path, "w", encoding="utf-8") if path else None

    def write(self, **rec):
        if self.fh:
            self.fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


@dataclass
class TrainResult:
    model: CIDModel
    dev_cer: float
    best_epoch: int
    trained: bool
    history: list[dict] = field(default_factory=list)


def _batches(n, size, rng):
    order = rng.permutation(n)
    return [order[i : i + size] for i in range(0, n, size)]


def _augment(batch, aug, rng):
    return [(spec_augment(f, aug, rng), y) for f, y in batch]


def _select_best(model, vocab, dev, epoch, best, history):
    score = dev_cer(model, vocab, dev)
    history.append({"epoch": epoch, "dev_cer": score})
    if best is None or score < best[0]:
        return (score, epoch, copy.deepcopy(model.state_dict()))
    return best


def train_supervised(
    model: CIDModel,
    data,
    dev: list[Example],
    vocab: Vocab,
    cfg: RunConfig,
    epochs: int,
    seed: int,
    log_path=None,
    stage: str = "sup",
) -> TrainResult:
    """Minimise ``loss_pair`` on ``data`` = [(frames, body), ...]; keep the best-dev-CER epoch.

    Utterances whose label cannot be aligned by CTC in the available frames
    (possible with pseudo-labels) contribute their attention term only.
    """
    tc = cfg.trainer
    if epochs == 0:
        return TrainResult(model, dev_cer(model, vocab, dev), -1, trained=False)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr)
    slog = _StepLog(log_path)
    best, history, step = None, [], 0
    try:
        for epoch in range(epochs):
            model.train()
            for idx in _batches(len(data), tc.batch_size, rng):
                batch = _augment([data[i] for i in idx], tc.augment, rng)
                loss, ctc_skipped = pair_loss_stats(model, batch, tc.ctc_weight, skip_infeasible=True)
                if not torch.isfinite(loss):
                    raise TrainingFault(step)
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
                opt.step()
                lp = loss.item()
                slog.write(stage=stage, step=step, epoch=epoch, l_pair=lp, l_total=lp, alpha_used=1.0, ctc_skipped=ctc_skipped)
                step += 1
            model.eval()
            best = _select_best(model, vocab, dev, epoch, best, history)
            log.info("%s epoch %d dev CER %.2f", stage, epoch, history[-1]["dev_cer"])
    finally:
        slog.close()
    model.load_state_dict(best[2])
    model.eval()
    return TrainResult(model, best[0], best[1], True, history)


def train_m0(split: CorpusSplit, cfg: RunConfig, log_path=None) -> TrainResult:
    if not split.paired:
        raise ValueError("paired set S is empty")
    vocab = split.vocab
    feat_dim = split.paired[0].frames.shape[1]
    model = CIDModel(model_config(cfg, vocab, feat_dim), seed=stage_seed(cfg.seed, "m0-init"))
    return train_supervised(
        model, _bodies(vocab, split.paired), split.dev, vocab, cfg, cfg.trainer.epochs_sup, stage_seed(cfg.seed, "m0-train"), log_path, "m0"
    )


def train_cid(m0: CIDModel, split: CorpusSplit, cfg: RunConfig, log_path=None, external_text=None) -> TrainResult:
    """Continue from M_0 with α·l_pair + (1−α)·l_unpair; unpaired speech is S's own speech, text is Y'."""
    texts = split.external_text if external_text is None else external_text
    if not texts:
        raise ValueError("external text Y' is empty; CID training needs text")
    vocab, tc = split.vocab, cfg.trainer
    epochs = tc.epochs_cid
    model = copy.deepcopy(m0)
    if epochs == 0:
        return TrainResult(model, dev_cer(model, vocab, split.dev), -1, trained=False)
    sched = cfg.cid.schedule(epochs)
    policy = cfg.cid.beta_policy()
    mmd_cfg = MmdConfig(bandwidth=cfg.cid.mmd_bandwidth)
    paired = _bodies(vocab, split.paired)
    text_bodies = [vocab.encode(t.text).tokens for t in texts]
    rng = np.random.default_rng(stage_seed(cfg.seed, "cid-train"))
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr)
    slog = _StepLog(log_path)
    best, history, step = None, [], 0
    text_order, text_pos = rng.permutation(len(text_bodies)), 0
    try:
        for epoch in range(epochs):
            alpha = alpha_at(epoch, sched)
            model.train()
            speech_batches = _batches(len(paired), tc.batch_size, rng)
            for bi, idx in enumerate(_batches(len(paired), tc.batch_size, rng)):
                batch = _augment([paired[i] for i in idx], tc.augment, rng)
                speech = [spec_augment(paired[i][0], tc.augment, rng) for i in speech_batches[bi % len(speech_batches)]]
                if text_pos + tc.text_batch_size > len(text_order):
                    text_order, text_pos = rng.permutation(len(text_bodies)), 0
                tb = [text_bodies[i] for i in text_order[text_pos : text_pos + tc.text_batch_size]]
                text_pos += tc.text_batch_size
                total, bd = loss_semi(model, batch, speech, tb, alpha, policy, tc.ctc_weight, mmd_cfg, cfg.decode.max_len_ratio)
                if not torch.isfinite(total):
                    raise TrainingFault(step)
                bd.check()
                opt.zero_grad()
                total.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
                opt.step()
                slog.write(stage="cid", step=step, epoch=epoch, **bd.as_dict())
                step += 1
            model.eval()
            best = _select_best(model, vocab, split.dev, epoch, best, history)
            log.info("cid epoch %d alpha %.3f dev CER %.2f", epoch, alpha, history[-1]["dev_cer"])
    finally:
        slog.close()
    model.load_state_dict(best[2])
    model.eval()
    return TrainResult(model, best[0], best[1], True, history)


def fuse_and_eval(model: CIDModel, lm: CharLM | None, vocab: Vocab, examples: list[Example], dcfg: DecodeConfig):
    """Beam search (+ LM fusion) over ``examples``; returns (word breakdown, char breakdown, n-best rows)."""
    nbests = decode_corpus(model, [e.frames for e in examples], lm, dcfg)
    rows = []
    tops = []
    for e, nb in zip(examples, nbests):
        tops.append(vocab.decode(nb[0].tokens) if nb else "")
        rows.extend((e.utt_id, r, h.score, vocab.decode(h.tokens)) for r, h in enumerate(nb))
    refs = [e.text for e in examples]
    return metrics.error_breakdown(refs, tops), metrics.char_breakdown(refs, tops), rows


def generate_labels(model: CIDModel, lm: CharLM | None, vocab: Vocab, speech, dcfg: DecodeConfig):
    """Top-1 fused hypothesis for every unlabeled utterance; nothing is filtered.

    Returns ``(pseudo, n_empty)`` with ``pseudo`` a list of Examples.
    """
    nbests = decode_corpus(model, [s.frames for s in speech], lm, dcfg)
    out, empty = [], 0
    for s, nb in zip(speech, nbests):
        text = vocab.decode(nb[0].tokens) if nb else ""
        if not text:
            empty += 1
        out.append(Example(s.utt_id, s.frames, text))
    if empty:
        log.warning("%d of %d pseudo-labels are empty", empty, len(out))
    return out, empty


def train_student(split: CorpusSplit, pseudo: list[Example], cfg: RunConfig, generation: int, log_path=None, init=None) -> TrainResult:
    """Fresh model (or a copy of ``init`` when warm-starting) trained on S ∪ M(X')."""
    vocab = split.vocab
    mixed = list(split.paired) + list(pseudo)
    check_split_invariants(
        {"mixed": [e.utt_id for e in mixed], "dev": [e.utt_id for e in split.dev], "test": [e.utt_id for e in split.test]}
    )
    feat_dim = split.paired[0].frames.shape[1]
    if init is not None:
        model = copy.deepcopy(init)
    else:
        model = CIDModel(model_config(cfg, vocab, feat_dim), seed=stage_seed(cfg.seed, f"student{generation}-init"))
    return train_supervised(
        model,
        _bodies(vocab, mixed),
        split.dev,
        vocab,
        cfg,
        cfg.trainer.epochs_student,
        stage_seed(cfg.seed, f"student{generation}-train"),
        log_path,
        f"student{generation}",
    )


# -- orchestration --------------------------------------------------------------


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def load_split(cfg: RunConfig) -> CorpusSplit:
    if cfg.corpus:
        return load_corpus(cfg.corpus)
    return synth_corpus(cfg.synth)


def _record(gen, kind, gdir, dev_w, dev_c, test_w, test_c, pseudo_id, wall, extra=None):
    rec = {
        "generation": gen,
        "kind": kind,
        "checkpoint_id": f"gen{gen}/checkpoint.cidm@{_sha(gdir / 'checkpoint.cidm')}",
        "pseudo_label_dataset_id": pseudo_id,
        "dev_wer": dev_w.wer,
        "dev_cer": dev_c.wer,
        "test_wer": test_w.wer,
        "test_cer": test_c.wer,
        "test_breakdown": test_w.as_dict(),
        "loss_curve_path": f"gen{gen}/losses.log",
    }
    if extra:
        rec.update(extra)
    (gdir / "metrics.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    rec = dict(rec)
    rec["wall_time"] = wall
    return rec


def _write_manifest(out: Path, manifest: dict):
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(out / "manifest.json")


def write_summary(out: Path, records: list[dict]):
    lines = ["generation\tkind\tdev_wer\tdev_cer\ttest_wer\ttest_cer"]
    for r in records:
        lines.append(f"{r['generation']}\t{r['kind']}\t{r['dev_wer']:.2f}\t{r['dev_cer']:.2f}\t{r['test_wer']:.2f}\t{r['test_cer']:.2f}")
    (out / "summary.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def run(cfg: RunConfig, out_dir, split: CorpusSplit | None = None) -> list[dict]:
    """Run (or resume) the pipeline; returns the generation records.

    nst: M_0, then ``generations`` students. cnst: M_0, M_1 (CID), then
    ``generations`` students. Completed generations found in ``out_dir`` are
    reused when the config hash matches; a different hash is a conflict.
    """
    cfg.validate()
    if cfg.mode == "cnst" and split is not None and not split.external_text:
        raise ValueError("cnst mode needs external text")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    records: list[dict] = []
    mpath = out / "manifest.json"
    if mpath.exists():
        old = json.loads(mpath.read_text(encoding="utf-8"))
        if old.get("config_hash") != chash:
            raise ConfigConflict(f"{out} was produced by config {old.get('config_hash', '?')[:12]}, now {chash[:12]}")
        records = old.get("records", [])
    torch.set_num_threads(1)
    split = split or load_split(cfg)
    if cfg.mode == "cnst" and not split.external_text:
        raise ValueError("cnst mode needs external text")
    vocab = split.vocab
    save_config(cfg, out / "config.json")
    manifest = {
        "format": "cidnst-run",
        "name": cfg.name,
        "mode": cfg.mode,
        "config_hash": chash,
        "seed": cfg.seed,
        "stage_seeds": {s: stage_seed(cfg.seed, s) for s in ("m0-init", "m0-train", "cid-train", "lm")},
        "records": records,
    }

    lm_path = out / "lm.cidl"
    if lm_path.exists():
        lm, _ = load_lm(lm_path)
    else:
        lm_cfg = copy.deepcopy(cfg.lm)
        lm_cfg.seed = stage_seed(cfg.seed, "lm")
        lm = train_lm([e.text for e in split.paired] + [t.text for t in split.external_text], vocab, lm_cfg)
        save_lm(lm_path, lm, vocab)
    dcfg = cfg.decode
    n_teacher = 2 if cfg.mode == "cnst" else 1
    total = n_teacher + cfg.generations

    def finish(gen, kind, model, t0, pseudo_id=None, extra=None):
        gdir = out / f"gen{gen}"
        save_model(gdir / "checkpoint.cidm", model, vocab, {"generation": gen, "kind": kind})
        dev_w, dev_c, _ = fuse_and_eval(model, lm, vocab, split.dev, dcfg)
        test_w, test_c, rows = fuse_and_eval(model, lm, vocab, split.test, dcfg)
        write_nbest(gdir / "nbest.txt", rows)
        rec = _record(gen, kind, gdir, dev_w, dev_c, test_w, test_c, pseudo_id, time.time() - t0, extra)
        records.append(rec)
        _write_manifest(out, manifest)
        write_summary(out, records)
        log.info("gen%d (%s): dev WER %.2f test WER %.2f CER %.2f", gen, kind, rec["dev_wer"], rec["test_wer"], rec["test_cer"])
        return model

    model = None
    if records:
        last = records[-1]["generation"]
        model, _, _ = load_model(out / f"gen{last}" / "checkpoint.cidm")
    for gen in range(len(records), total):
        gdir = out / f"gen{gen}"
        gdir.mkdir(exist_ok=True)
        t0 = time.time()
        if gen == 0:
            res = train_m0(split, cfg, gdir / "losses.log")
            model = finish(0, "m0", res.model, t0, extra={"trained": res.trained, "best_epoch": res.best_epoch})
        elif gen == 1 and cfg.mode == "cnst":
            res = train_cid(model, split, cfg, gdir / "losses.log")
            model = finish(1, "cid", res.model, t0, extra={"trained": res.trained, "best_epoch": res.best_epoch})
        else:
            pseudo, n_empty = generate_labels(model, lm, vocab, split.unlabeled_speech, dcfg)
            ppath = gdir / "pseudo.txt"
            write_transcripts(ppath, [(p.utt_id, p.text) for p in pseudo])
            extra = {"pseudo_empty": n_empty}
            if split.unlabeled_reference:
                refs = [split.unlabeled_reference[p.utt_id] for p in pseudo]
                extra["pseudo_cer"] = metrics.cer(refs, [p.text for p in pseudo])
                extra["pseudo_wer"] = metrics.wer(refs, [p.text for p in pseudo])
            res = train_student(split, pseudo, cfg, gen, gdir / "losses.log", init=model if cfg.warm_start else None)
            extra.update(trained=res.trained, best_epoch=res.best_epoch, mixed_size=len(split.paired) + len(pseudo))
            model = finish(gen, "student", res.model, t0, pseudo_id=f"gen{gen}/pseudo.txt@{_sha(ppath)}", extra=extra)
    return records
