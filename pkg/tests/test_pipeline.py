import json
import logging

import numpy as np
import pytest

from cidnst import metrics
from cidnst.config import config_from_dict
from cidnst.data import Example, read_nbest
from cidnst.decode import DecodeConfig
from cidnst.lm import LMConfig, train_lm
from cidnst.model import snapshot
from cidnst.pipeline import (
    ConfigConflict,
    TrainingFault,
    fuse_and_eval,
    generate_labels,
    load_split,
    run,
    stage_seed,
    train_cid,
    train_m0,
    train_student,
)

TINY = {
    "synth": {"n_paired": 24, "n_unlabeled": 16, "n_text": 60, "n_dev": 10, "n_test": 10},
    "model": {"hidden": 8, "dec_units": 16, "att_dim": 8, "emb_dim": 8},
    "trainer": {"epochs_sup": 2, "epochs_cid": 2, "epochs_student": 1},
    "lm": {"epochs": 1, "units": 16, "emb_dim": 8},
    "decode": {"beam": 3},
}


def tiny(**over):
    d = json.loads(json.dumps(TINY))
    for k, v in over.items():
        if isinstance(v, dict):
            d.setdefault(k, {}).update(v)
        else:
            d[k] = v
    return config_from_dict(d)


@pytest.fixture(scope="module")
def split():
    return load_split(tiny())


@pytest.fixture(scope="module")
def m0(split):
    return train_m0(split, tiny())


def read_log(path):
    return [json.loads(line) for line in open(path, encoding="utf-8")]


def test_stage_seeds_differ_and_are_stable():
    assert stage_seed(0, "m0-init") == stage_seed(0, "m0-init")
    assert len({stage_seed(0, s) for s in ("a", "b", "c")}) == 3
    assert stage_seed(0, "a") != stage_seed(1, "a")


def test_untrained_when_no_epochs(split):
    res = train_m0(split, tiny(trainer={"epochs_sup": 0}))
    assert not res.trained and res.best_epoch == -1


def test_m0_is_deterministic(split, m0, tmp_path):
    again = train_m0(split, tiny(), tmp_path / "log")
    assert again.dev_cer == m0.dev_cer
    a, b = snapshot(m0.model), snapshot(again.model)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    steps = read_log(tmp_path / "log")
    assert [s["step"] for s in steps] == list(range(len(steps)))
    assert all(s["stage"] == "m0" for s in steps)


def test_divergence_raises_with_step(split, monkeypatch):
    import cidnst.pipeline as P

    real = P.pair_loss_stats
    calls = []

    def poisoned(*a, **k):
        loss, n = real(*a, **k)
        calls.append(1)
        return (loss * float("nan"), n) if len(calls) == 3 else (loss, n)

    monkeypatch.setattr(P, "pair_loss_stats", poisoned)
    with pytest.raises(TrainingFault) as e:
        train_m0(split, tiny())
    assert e.value.step == 2


def test_cid_logs_consistent_breakdowns(split, m0, tmp_path):
    cfg = tiny(trainer={"epochs_cid": 4})
    res = train_cid(m0.model, split, cfg, tmp_path / "cid.log")
    assert res.trained
    steps = read_log(tmp_path / "cid.log")
    sched = cfg.cid.schedule(4)
    from cidnst.schedules import alpha_at

    for s in steps:
        u = s["l_idt"] + s["beta_used"] * s["l_cyc_dom"] + (1 - s["beta_used"]) * s["l_text"]
        assert abs(u - s["l_unpair"]) <= 1e-9
        assert abs(s["alpha_used"] * s["l_pair"] + (1 - s["alpha_used"]) * s["l_unpair"] - s["l_total"]) <= 1e-9
        assert s["alpha_used"] == alpha_at(s["epoch"], sched)
        assert s["beta_used"] in (0.0, 1.0)
    # M_0 is not modified in place
    assert m0.model is not res.model


def test_cid_needs_text(split, m0):
    with pytest.raises(ValueError):
        train_cid(m0.model, split, tiny(), external_text=[])


def test_fusion_and_reconciliation(split, m0, tmp_path):
    vocab = split.vocab
    lm = train_lm([e.text for e in split.paired], vocab, LMConfig(units=8, emb_dim=4, epochs=1))
    w0, c0, rows0 = fuse_and_eval(m0.model, lm, vocab, split.dev, DecodeConfig(beam=3, lm_weight=0.0))
    wn, cn, rowsn = fuse_and_eval(m0.model, None, vocab, split.dev, DecodeConfig(beam=3))
    assert w0 == wn and c0 == cn and rows0 == rowsn
    from cidnst.data import write_nbest

    write_nbest(tmp_path / "n.txt", rows0)
    top = {u: t for u, r, _, t in read_nbest(tmp_path / "n.txt") if r == 0}
    assert metrics.error_breakdown([e.text for e in split.dev], [top[e.utt_id] for e in split.dev]) == w0


def test_labels_cover_every_utterance(split, m0, caplog):
    dcfg = DecodeConfig(beam=2)
    with caplog.at_level(logging.WARNING):
        pseudo, empty = generate_labels(m0.model, None, split.vocab, split.unlabeled_speech, dcfg)
    again, _ = generate_labels(m0.model, None, split.vocab, split.unlabeled_speech, dcfg)
    assert len(pseudo) == len(split.unlabeled_speech)
    assert [p.text for p in pseudo] == [p.text for p in again]
    assert [p.utt_id for p in pseudo] == [s.utt_id for s in split.unlabeled_speech]
    assert empty == sum(1 for p in pseudo if not p.text)


def test_student_trains_fresh_on_mixed_set(split, m0, tmp_path):
    pseudo = [Example(s.utt_id, s.frames, split.unlabeled_reference[s.utt_id]) for s in split.unlabeled_speech]
    res = train_student(split, pseudo, tiny(), 2, tmp_path / "s.log")
    steps = read_log(tmp_path / "s.log")
    n = len(split.paired) + len(pseudo)
    assert len(steps) == -(-n // tiny().trainer.batch_size)
    # an empty pseudo-label is kept and trains the attention branch only
    pseudo[0] = Example(pseudo[0].utt_id, pseudo[0].frames, "")
    train_student(split, pseudo, tiny(), 2)
    leak = [Example(split.dev[0].utt_id, split.dev[0].frames, "x")]
    with pytest.raises(ValueError):
        train_student(split, leak, tiny(), 2)


def test_run_zero_generations_cnst(tmp_path):
    recs = run(tiny(generations=0), tmp_path / "r")
    assert [(r["generation"], r["kind"]) for r in recs] == [(0, "m0"), (1, "cid")]
    for g in (0, 1):
        d = tmp_path / "r" / f"gen{g}"
        assert {p.name for p in d.iterdir()} >= {"checkpoint.cidm", "nbest.txt", "metrics.json", "losses.log"}
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["config_hash"] == tiny(generations=0).config_hash()
    assert len(manifest["records"]) == 2


def test_nst_never_evaluates_cid_losses(tmp_path):
    recs = run(tiny(mode="nst", generations=1), tmp_path / "r")
    assert [r["kind"] for r in recs] == ["m0", "student"]
    for g in (0, 1):
        for s in read_log(tmp_path / "r" / f"gen{g}" / "losses.log"):
            assert s["stage"] != "cid" and "l_unpair" not in s
    assert recs[1]["mixed_size"] == 24 + 16


def test_resume_extend_and_conflict(tmp_path):
    out = tmp_path / "r"
    first = run(tiny(mode="nst", generations=1), out)
    metrics_before = (out / "gen1" / "metrics.json").read_bytes()
    again = run(tiny(mode="nst", generations=1), out)
    assert again == first
    longer = run(tiny(mode="nst", generations=2), out)
    assert longer[:2] == first and longer[2]["generation"] == 2
    assert (out / "gen1" / "metrics.json").read_bytes() == metrics_before
    with pytest.raises(ConfigConflict):
        run(tiny(mode="nst", generations=2, seed=9), out)


def test_rerun_reproduces_metrics_bitwise(tmp_path):
    cfg = tiny(generations=1)
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    for g in range(3):
        assert (tmp_path / "a" / f"gen{g}" / "metrics.json").read_bytes() == (tmp_path / "b" / f"gen{g}" / "metrics.json").read_bytes()
        assert (tmp_path / "a" / f"gen{g}" / "nbest.txt").read_bytes() == (tmp_path / "b" / f"gen{g}" / "nbest.txt").read_bytes()
