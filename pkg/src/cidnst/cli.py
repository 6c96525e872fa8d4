"""Command-line entry point: ``cidnst <command> [options]``.

Exit status is 0 on success, 2 for a bad configuration (the message names the
offending key path) and 1 for any other failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from cidnst import metrics
from cidnst.config import ConfigKeyError, RunConfig, config_from_dict, load_config

log = logging.getLogger("cidnst")

COMMANDS = ("synth-data", "train-sup", "train-cid", "train-lm", "decode", "score", "run-nst", "run-cnst", "report")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="root seed; overrides the config")
    p.add_argument("--out", help="output path")
    p.add_argument("--beam", type=int, help="beam size")
    p.add_argument("--lm-weight", type=float, help="shallow-fusion LM weight")
    p.add_argument("--policy", choices=("fixed", "min", "max", "avg", "med"), help="beta policy for CID training")
    p.add_argument("--alpha", help="supervised ratio: 'decay' or 'fixed:<v>'")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cidnst", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate and save the synthetic corpus")
    _add_common(p)

    p = sub.add_parser("train-sup", help="supervised training on the paired set (M_0)")
    _add_common(p)

    p = sub.add_parser("train-cid", help="CID training from an M_0 checkpoint (M_1)")
    _add_common(p)
    p.add_argument("--init", required=True, help="M_0 checkpoint")

    p = sub.add_parser("train-lm", help="train the character LM on paired + external text")
    _add_common(p)

    p = sub.add_parser("decode", help="beam search a split or feature file, write an n-best file")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--lm", help="LM checkpoint for shallow fusion")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--split", choices=("dev", "test", "unlabeled"), default="test")
    src.add_argument("--features", help="feature file (.cidf)")
    p.add_argument("--nbest", type=int, default=1, help="hypotheses written per utterance")

    p = sub.add_parser("score", help="WER/CER between transcript files")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True, help="transcripts or n-best file (rank 0 is used)")
    p.add_argument("--per-utt", action="store_true", help="dump aligned utterances")

    for name in ("run-nst", "run-cnst"):
        p = sub.add_parser(name, help=f"full {name[4:]} pipeline")
        _add_common(p)
        p.add_argument("--generations", type=int, help="student generations")

    p = sub.add_parser("report", help="per-generation table and loss curves of a run")
    p.add_argument("run_dir")
    p.add_argument("--plot", help="write a PNG figure here (needs matplotlib)")
    return ap


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.synth.seed = args.seed
    if args.beam is not None:
        cfg.decode.beam = args.beam
    if args.lm_weight is not None:
        cfg.decode.lm_weight = args.lm_weight
    if args.policy is not None:
        cfg.cid.policy = args.policy
    if args.alpha is not None:
        cfg.cid.alpha = args.alpha
    if getattr(args, "generations", None) is not None:
        cfg.generations = args.generations
    try:
        return cfg.validate()
    except ValueError as e:
        if isinstance(e, ConfigKeyError):
            raise
        raise ConfigKeyError("<root>", str(e)) from None


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_synth_data(args):
    from cidnst.data import save_corpus, synth_corpus

    cfg = _config(args)
    out = _out(args, f"run/{cfg.name}/corpus")
    path = save_corpus(synth_corpus(cfg.synth), out, cfg.synth)
    print(path)


def cmd_train_sup(args):
    from cidnst.model import save_model
    from cidnst.pipeline import load_split, train_m0

    cfg = _config(args)
    out = _out(args, f"run/{cfg.name}/m0.cidm")
    out.parent.mkdir(parents=True, exist_ok=True)
    split = load_split(cfg)
    res = train_m0(split, cfg, out.with_suffix(".losses.log"))
    save_model(out, res.model, split.vocab, {"kind": "m0", "trained": res.trained, "config_hash": cfg.config_hash()})
    print(f"{out}\tdev CER {res.dev_cer:.2f}")


def cmd_train_cid(args):
    from cidnst.model import load_model, save_model
    from cidnst.pipeline import load_split, train_cid

    cfg = _config(args)
    out = _out(args, f"run/{cfg.name}/m1.cidm")
    out.parent.mkdir(parents=True, exist_ok=True)
    split = load_split(cfg)
    m0, vocab, _ = load_model(args.init)
    if vocab != split.vocab:
        raise ValueError("checkpoint charset differs from the corpus charset")
    res = train_cid(m0, split, cfg, out.with_suffix(".losses.log"))
    save_model(out, res.model, vocab, {"kind": "cid", "trained": res.trained, "config_hash": cfg.config_hash()})
    print(f"{out}\tdev CER {res.dev_cer:.2f}")


def cmd_train_lm(args):
    from cidnst.lm import perplexity, save_lm, train_lm
    from cidnst.pipeline import load_split, stage_seed

    cfg = _config(args)
    cfg.lm.seed = stage_seed(cfg.seed, "lm")
    out = _out(args, f"run/{cfg.name}/lm.cidl")
    out.parent.mkdir(parents=True, exist_ok=True)
    split = load_split(cfg)
    lm = train_lm([e.text for e in split.paired] + [t.text for t in split.external_text], split.vocab, cfg.lm)
    save_lm(out, lm, split.vocab)
    print(f"{out}\tdev perplexity {perplexity(lm, [e.text for e in split.dev], split.vocab):.3f}")


def cmd_decode(args):
    from cidnst.data import read_features, write_nbest
    from cidnst.decode import decode_corpus
    from cidnst.lm import load_lm
    from cidnst.model import load_model
    from cidnst.pipeline import load_split

    cfg = _config(args)
    model, vocab, _ = load_model(args.model)
    lm = load_lm(args.lm)[0] if args.lm else None
    if args.features:
        items = [(f.utt_id, f.frames) for f in read_features(args.features)]
    else:
        split = load_split(cfg)
        seqs = {"dev": split.dev, "test": split.test, "unlabeled": split.unlabeled_speech}[args.split]
        items = [(s.utt_id, s.frames) for s in seqs]
    nbests = decode_corpus(model, [f for _, f in items], lm, cfg.decode)
    rows = [(u, r, h.score, vocab.decode(h.tokens)) for (u, _), nb in zip(items, nbests) for r, h in enumerate(nb[: args.nbest])]
    out = _out(args, f"run/{cfg.name}/{args.split if not args.features else 'decode'}.nbest.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_nbest(out, rows)
    print(out)


def _read_hyp(path):
    from cidnst.data import FormatError, read_nbest, read_transcripts

    try:
        return [(u, t) for u, r, _, t in read_nbest(path) if r == 0]
    except FormatError:
        return read_transcripts(path)


def cmd_score(args):
    from cidnst.data import read_transcripts

    sys.stdout.write(metrics.score_report(read_transcripts(args.ref), _read_hyp(args.hyp), args.per_utt, Path(args.ref).name))


def _run(args, mode):
    from cidnst.pipeline import run

    cfg = _config(args)
    cfg.mode = mode
    out = _out(args, f"run/{cfg.name}")
    records = run(cfg, out)
    sys.stdout.write(format_table(records))


def format_table(records) -> str:
    lines = [f"{'gen':>3}  {'kind':<8}{'dev WER':>9}{'dev CER':>9}{'test WER':>10}{'test CER':>10}{'INS':>7}{'DEL':>7}{'SUB':>7}"]
    for r in records:
        b = r["test_breakdown"]
        lines.append(
            f"{r['generation']:>3}  {r['kind']:<8}{r['dev_wer']:>9.2f}{r['dev_cer']:>9.2f}"
            f"{r['test_wer']:>10.2f}{r['test_cer']:>10.2f}{b['ins']:>7.2f}{b['del']:>7.2f}{b['sub']:>7.2f}"
        )
    return "\n".join(lines) + "\n"


def loss_curves(run_dir: Path, records) -> dict[int, list[float]]:
    """Per-generation list of per-epoch mean ``l_total``."""
    curves = {}
    for r in records:
        path = run_dir / r["loss_curve_path"]
        if not path.exists():
            continue
        per_epoch: dict[int, list[float]] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                per_epoch.setdefault(rec["epoch"], []).append(rec["l_total"])
        curves[r["generation"]] = [sum(v) / len(v) for _, v in sorted(per_epoch.items())]
    return curves


def cmd_report(args):
    run_dir = Path(args.run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    records = manifest["records"]
    print(f"# {manifest['name']} ({manifest['mode']}), config {manifest['config_hash'][:12]}")
    sys.stdout.write(format_table(records))
    curves = loss_curves(run_dir, records)
    print("# mean l_total per epoch")
    for gen, c in curves.items():
        print(f"gen{gen}\t" + " ".join(f"{v:.4f}" for v in c))
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
        gens = [r["generation"] for r in records]
        a1.plot(gens, [r["test_wer"] for r in records], marker="o", label="test WER")
        a1.plot(gens, [r["dev_wer"] for r in records], marker="s", label="dev WER")
        a1.set_xlabel("generation")
        a1.set_ylabel("%")
        a1.legend()
        for gen, c in curves.items():
            a2.plot(range(len(c)), c, label=f"gen{gen}")
        a2.set_xlabel("epoch")
        a2.set_ylabel("mean training loss")
        a2.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=100)
        print(args.plot)


HANDLERS = {
    "synth-data": cmd_synth_data,
    "train-sup": cmd_train_sup,
    "train-cid": cmd_train_cid,
    "train-lm": cmd_train_lm,
    "decode": cmd_decode,
    "score": cmd_score,
    "run-nst": lambda a: _run(a, "nst"),
    "run-cnst": lambda a: _run(a, "cnst"),
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        HANDLERS[args.command](args)
    except ConfigKeyError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as e:  # noqa: BLE001 - every runtime fault maps to exit 1
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
