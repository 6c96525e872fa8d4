import json
import subprocess
import sys

import pytest

from cidnst.cli import format_table, main

TINY = {
    "name": "t",
    "synth": {"n_paired": 16, "n_unlabeled": 8, "n_text": 30, "n_dev": 6, "n_test": 6},
    "model": {"hidden": 8, "dec_units": 16, "att_dim": 8, "emb_dim": 8},
    "trainer": {"epochs_sup": 1, "epochs_cid": 1, "epochs_student": 1},
    "lm": {"epochs": 1, "units": 16, "emb_dim": 8},
    "decode": {"beam": 2},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def test_score_identical_files(tmp_path, capsys):
    p = tmp_path / "r.txt"
    p.write_text("u1\thello world\nu2\tab\n")
    assert main(["score", "--ref", str(p), "--hyp", str(p)]) == 0
    assert "WER 0.00" in capsys.readouterr().out


def test_bad_config_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"trainer": {"epocs": 3}}))
    assert main(["train-sup", "--config", str(p)]) == 2
    assert "trainer.epocs" in capsys.readouterr().err
    assert main(["run-cnst", "--alpha", "sometimes"]) == 2


def test_runtime_fault_exit_1(tmp_path, capsys):
    assert main(["score", "--ref", str(tmp_path / "missing.txt"), "--hyp", str(tmp_path / "missing.txt")]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_run_cnst_zero_generations_and_report(cfg_path, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run-cnst", "--config", str(cfg_path), "--generations", "0", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert [r["generation"] for r in manifest["records"]] == [0, 1]
    capsys.readouterr()
    assert main(["report", str(out), "--plot", str(tmp_path / "fig.png")]) == 0
    text = capsys.readouterr().out
    assert format_table(manifest["records"]) in text
    assert (tmp_path / "fig.png").stat().st_size > 0
    # the table reproduces the persisted numbers
    for r in manifest["records"]:
        assert f"{r['test_wer']:.2f}" in text


def test_stagewise_commands(cfg_path, tmp_path, capsys):
    c = ["--config", str(cfg_path)]
    corpus = tmp_path / "corpus"
    assert main(["synth-data", *c, "--out", str(corpus)]) == 0
    cfg2 = dict(TINY, corpus=str(corpus))
    p2 = tmp_path / "cfg2.json"
    p2.write_text(json.dumps(cfg2))
    c = ["--config", str(p2)]
    assert main(["train-sup", *c, "--out", str(tmp_path / "m0.cidm")]) == 0
    assert main(["train-cid", *c, "--init", str(tmp_path / "m0.cidm"), "--out", str(tmp_path / "m1.cidm"), "--policy", "max"]) == 0
    assert main(["train-lm", *c, "--out", str(tmp_path / "lm.cidl")]) == 0
    nb = tmp_path / "dev.nbest"
    args = ["decode", *c, "--model", str(tmp_path / "m1.cidm"), "--lm", str(tmp_path / "lm.cidl"), "--split", "dev", "--out", str(nb), "--beam", "2", "--nbest", "2"]
    assert main(args) == 0
    assert main(["decode", *c, "--model", str(tmp_path / "m1.cidm"), "--features", str(corpus / "test.cidf"), "--out", str(tmp_path / "t.nbest")]) == 0
    capsys.readouterr()
    assert main(["score", "--ref", str(corpus / "dev.txt"), "--hyp", str(nb), "--per-utt"]) == 0
    out = capsys.readouterr().out
    assert out.count("REF:") == TINY["synth"]["n_dev"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "cidnst", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "run-cnst" in r.stdout
