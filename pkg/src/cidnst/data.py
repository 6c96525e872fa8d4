"""Synthetic speech-like corpus, character vocabulary and on-disk formats.

Each character of a fixed charset owns a seeded random prototype vector; an
utterance's frames are its characters' prototypes, each repeated
``frames_per_char`` times, plus Gaussian noise. Transcripts come from a small
seeded word-bigram language so that text alone carries learnable structure.

File formats (all little-endian):

* features (``.cidf``): ``b"CIDF"``, u32 version, then per utterance
  u16 id length, UTF-8 id, u32 T, u32 F, T*F float64 values (row-major).
* transcripts: UTF-8 lines ``utt_id<TAB>text``.
* n-best: UTF-8 lines ``utt_id<TAB>rank<TAB>score<TAB>text``.
* corpus manifest: ``manifest.json`` listing the split files and the seed.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD, SOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<sos>", "<eos>", "<unk>")
DEFAULT_CHARSET = " abcdefghijklmnopqrs"
FEATURE_MAGIC = b"CIDF"
FEATURE_VERSION = 1


class VocabError(ValueError):
    pass


class CorpusError(ValueError):
    """Split invariants violated, or a corpus that cannot be generated."""


class FormatError(ValueError):
    pass


@dataclass
class FeatureSequence:
    utt_id: str
    frames: np.ndarray  # (T, F) float64

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class TokenSequence:
    utt_id: str
    tokens: tuple[int, ...]  # body only; no reserved ids

    def __len__(self):
        return len(self.tokens)


@dataclass
class Example:
    """One paired utterance (x, y)."""

    utt_id: str
    frames: np.ndarray
    text: str

    @property
    def features(self) -> FeatureSequence:
        return FeatureSequence(self.utt_id, self.frames)


@dataclass
class TextLine:
    utt_id: str
    text: str


class Vocab:
    """Character vocabulary: four reserved ids followed by the charset.

    The CTC blank is not a vocabulary entry; it is the extra index
    ``len(vocab)`` in the CTC head.
    """

    def __init__(self, charset: str = DEFAULT_CHARSET):
        if len(set(charset)) != len(charset) or not charset:
            raise VocabError("charset must be non-empty with unique characters")
        if any(c in "\t\n\r" for c in charset):
            raise VocabError("charset may not contain tab or newline")
        self.charset = charset
        self.itos = list(SPECIALS) + list(charset)
        self.stoi = {c: i + len(SPECIALS) for i, c in enumerate(charset)}

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and other.charset == self.charset

    @property
    def blank(self) -> int:
        return len(self.itos)

    def encode(self, text: str, utt_id: str = "") -> TokenSequence:
        return TokenSequence(utt_id, tuple(self.stoi.get(c, UNK) for c in text))

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, SOS):
                continue
            if i == UNK:
                out.append("?")
            elif 0 <= i < len(self.itos):
                out.append(self.itos[i])
            else:
                raise VocabError(f"token id {i} outside vocabulary of size {len(self)}")
        return "".join(out)

    def check_ids(self, ids):
        for i in ids:
            if not 0 <= int(i) < len(self.itos):
                raise VocabError(f"token id {int(i)} outside vocabulary of size {len(self)}")


# -- synthetic corpus -------------------------------------------------------


@dataclass
class SynthConfig:
    charset_size: int = 20
    min_len: int = 3
    max_len: int = 12
    n_paired: int = 200
    n_unlabeled: int = 300
    n_text: int = 2000
    n_dev: int = 100
    n_test: int = 200
    frames_per_char: int = 4
    feat_dim: int = 16
    noise: float = 0.1
    lexicon_size: int = 60
    successors: int = 12
    seed: int = 0


@dataclass
class CorpusSplit:
    paired: list[Example]
    unlabeled_speech: list[FeatureSequence]
    external_text: list[TextLine]
    dev: list[Example]
    test: list[Example]
    charset: str = DEFAULT_CHARSET
    seed: int = 0
    # held-out transcripts of the unlabeled speech; diagnostics only, never trained on
    unlabeled_reference: dict[str, str] = field(default_factory=dict)
    prototypes: np.ndarray | None = None

    @property
    def vocab(self) -> Vocab:
        return Vocab(self.charset)

    def validate(self):
        check_split_invariants(
            {
                "paired": [e.utt_id for e in self.paired],
                "unlabeled_speech": [f.utt_id for f in self.unlabeled_speech],
                "external_text": [t.utt_id for t in self.external_text],
                "dev": [e.utt_id for e in self.dev],
                "test": [e.utt_id for e in self.test],
            },
            train_texts=[e.text for e in self.paired]
            + [t.text for t in self.external_text]
            + list(self.unlabeled_reference.values()),
            heldout_texts=[e.text for e in self.dev] + [e.text for e in self.test],
        )


def check_split_invariants(ids_by_split: dict[str, list[str]], train_texts=(), heldout_texts=()):
    seen: dict[str, str] = {}
    for name, ids in ids_by_split.items():
        for u in ids:
            if u in seen:
                raise CorpusError(f"utt_id {u!r} appears in both {seen[u]} and {name}")
            seen[u] = name
    overlap = set(train_texts) & set(heldout_texts)
    if overlap:
        raise CorpusError(f"{len(overlap)} transcript(s) shared between train and dev/test, e.g. {sorted(overlap)[0]!r}")


def make_charset(size: int) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz0123456789"
    if not 2 <= size <= len(letters) + 1:
        raise CorpusError(f"charset_size must be in [2, {len(letters) + 1}]")
    return " " + letters[: size - 1]


def _make_word(rng, letters, lo, hi):
    n = int(rng.integers(lo, hi + 1))
    word = [letters[int(rng.integers(len(letters)))]]
    while len(word) < n:
        c = letters[int(rng.integers(len(letters)))]
        if c != word[-1]:
            word.append(c)
    return "".join(word)


def _sentence_sampler(cfg: SynthConfig, rng, charset):
    letters = charset[1:]
    lexicon = sorted({_make_word(rng, letters, 2, 4) for _ in range(cfg.lexicon_size * 3)})
    rng.shuffle(lexicon)
    lexicon = lexicon[: cfg.lexicon_size]
    W = len(lexicon)
    k = min(cfg.successors, W)
    succ = np.stack([rng.choice(W, size=k, replace=False) for _ in range(W)])
    weights = 1.0 / np.arange(1, k + 1)
    weights /= weights.sum()

    def sample():
        w = int(rng.integers(W))
        words = [lexicon[w]]
        while rng.random() < 0.7:
            w = int(succ[w, rng.choice(k, p=weights)])
            words.append(lexicon[w])
            if sum(map(len, words)) + len(words) - 1 > cfg.max_len:
                break
        return " ".join(words)

    return sample


def synth_corpus(cfg: SynthConfig | None = None) -> CorpusSplit:
    """Generate a deterministic corpus with disjoint ids and disjoint train/heldout sentences."""
    cfg = cfg or SynthConfig()
    counts = [cfg.n_paired, cfg.n_unlabeled, cfg.n_text, cfg.n_dev, cfg.n_test]
    if min(counts) < 1:
        raise CorpusError("every split count must be >= 1")
    if not 1 <= cfg.min_len <= cfg.max_len:
        raise CorpusError("need 1 <= min_len <= max_len")
    rng = np.random.default_rng(cfg.seed)
    charset = make_charset(cfg.charset_size)
    vocab = Vocab(charset)

    protos = rng.normal(size=(len(charset), cfg.feat_dim))
    d = np.linalg.norm(protos[:, None] - protos[None], axis=-1)
    if np.min(d[~np.eye(len(charset), dtype=bool)]) < 1.0:
        raise CorpusError("prototype separation below 1; increase feat_dim")

    sample = _sentence_sampler(cfg, rng, charset)
    need = sum(counts)
    sentences: list[str] = []
    seen = set()
    attempts = 0
    while len(sentences) < need:
        attempts += 1
        if attempts > 200 * need:
            raise CorpusError(f"could only draw {len(sentences)} distinct sentences of the {need} required")
        s = sample()
        if cfg.min_len <= len(s) <= cfg.max_len and s not in seen:
            seen.add(s)
            sentences.append(s)

    def featurize(text):
        ids = [vocab.stoi[c] - len(SPECIALS) for c in text]
        clean = np.repeat(protos[ids], cfg.frames_per_char, axis=0)
        if cfg.noise > 0:
            return clean + rng.normal(scale=cfg.noise, size=clean.shape)
        return clean.copy()

    it = iter(sentences)

    def take(n, prefix):
        return [(f"{prefix}-{i:05d}", next(it)) for i in range(n)]

    paired = [Example(u, featurize(s), s) for u, s in take(cfg.n_paired, "paired")]
    unl = take(cfg.n_unlabeled, "unlab")
    unlabeled = [FeatureSequence(u, featurize(s)) for u, s in unl]
    text = [TextLine(u, s) for u, s in take(cfg.n_text, "text")]
    dev = [Example(u, featurize(s), s) for u, s in take(cfg.n_dev, "dev")]
    test = [Example(u, featurize(s), s) for u, s in take(cfg.n_test, "test")]
    split = CorpusSplit(
        paired=paired,
        unlabeled_speech=unlabeled,
        external_text=text,
        dev=dev,
        test=test,
        charset=charset,
        seed=cfg.seed,
        unlabeled_reference=dict(unl),
        prototypes=protos,
    )
    split.validate()
    return split


# -- file formats ---------------------------------------------------------


def write_features(path, seqs):
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", FEATURE_VERSION))
        for s in seqs:
            uid = s.utt_id.encode("utf-8")
            frames = np.ascontiguousarray(s.frames, dtype="<f8")
            if frames.ndim != 2:
                raise FormatError(f"{s.utt_id}: frames must be 2-D")
            fh.write(struct.pack("<H", len(uid)))
            fh.write(uid)
            fh.write(struct.pack("<II", *frames.shape))
            fh.write(frames.tobytes())


def read_features(path) -> list[FeatureSequence]:
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 8
    out = []
    while pos < len(data):
        try:
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            uid = data[pos : pos + n].decode("utf-8")
            pos += n
            T, F = struct.unpack_from("<II", data, pos)
            pos += 8
        except struct.error as e:
            raise FormatError(f"{path}: truncated record header") from e
        nbytes = 8 * T * F
        if pos + nbytes > len(data):
            raise FormatError(f"{path}: truncated frames for {uid}")
        frames = np.frombuffer(data, dtype="<f8", count=T * F, offset=pos).reshape(T, F).astype(np.float64)
        pos += nbytes
        out.append(FeatureSequence(uid, frames))
    return out


def _check_text(s: str):
    if "\t" in s or "\n" in s:
        raise FormatError(f"text field may not contain tab/newline: {s!r}")


def write_transcripts(path, lines):
    """``lines`` is an iterable of ``(utt_id, text)`` pairs."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for uid, text in lines:
            _check_text(uid)
            _check_text(text)
            fh.write(f"{uid}\t{text}\n")


def read_transcripts(path) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8", newline="\n") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if "\t" not in line:
                raise FormatError(f"{path}:{n}: expected utt_id<TAB>text")
            uid, text = line.split("\t", 1)
            out.append((uid, text))
    return out


def write_nbest(path, entries):
    """``entries``: iterable of ``(utt_id, rank, score, text)``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for uid, rank, score, text in entries:
            _check_text(text)
            fh.write(f"{uid}\t{int(rank)}\t{float(score)!r}\t{text}\n")


def read_nbest(path) -> list[tuple[str, int, float, str]]:
    out = []
    with open(path, encoding="utf-8", newline="\n") as fh:
        for n, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t", 3)
            if len(parts) != 4:
                raise FormatError(f"{path}:{n}: expected 4 tab-separated fields")
            out.append((parts[0], int(parts[1]), float(parts[2]), parts[3]))
    return out


_FILES = {
    "paired_feats": "paired.cidf",
    "paired_text": "paired.txt",
    "unlabeled_feats": "unlabeled.cidf",
    "unlabeled_reference": "unlabeled.ref.txt",
    "external_text": "external.txt",
    "dev_feats": "dev.cidf",
    "dev_text": "dev.txt",
    "test_feats": "test.cidf",
    "test_text": "test.txt",
}


def save_corpus(split: CorpusSplit, out_dir, synth_cfg: SynthConfig | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_features(out / _FILES["paired_feats"], [e.features for e in split.paired])
    write_transcripts(out / _FILES["paired_text"], [(e.utt_id, e.text) for e in split.paired])
    write_features(out / _FILES["unlabeled_feats"], split.unlabeled_speech)
    write_transcripts(out / _FILES["unlabeled_reference"], sorted(split.unlabeled_reference.items()))
    write_transcripts(out / _FILES["external_text"], [(t.utt_id, t.text) for t in split.external_text])
    for name, items in (("dev", split.dev), ("test", split.test)):
        write_features(out / _FILES[f"{name}_feats"], [e.features for e in items])
        write_transcripts(out / _FILES[f"{name}_text"], [(e.utt_id, e.text) for e in items])
    manifest = {
        "format": "cidnst-corpus",
        "version": 1,
        "seed": split.seed,
        "charset": split.charset,
        "synth_config": dataclasses.asdict(synth_cfg) if synth_cfg else None,
        "files": dict(_FILES),
        "sha256": {k: _sha256(out / v) for k, v in _FILES.items()},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _paired(feats, texts, path):
    tmap = dict(texts)
    if len(tmap) != len(feats) or set(tmap) != {f.utt_id for f in feats}:
        raise CorpusError(f"{path}: features and transcripts list different utterances")
    return [Example(f.utt_id, f.frames, tmap[f.utt_id]) for f in feats]


def load_corpus(path) -> CorpusSplit:
    """Load a corpus from its directory or ``manifest.json``; split invariants are re-checked."""
    path = Path(path)
    root = path if path.is_dir() else path.parent
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != "cidnst-corpus":
        raise FormatError(f"{root}: not a corpus manifest")
    files = {k: root / v for k, v in manifest["files"].items()}
    split = CorpusSplit(
        paired=_paired(read_features(files["paired_feats"]), read_transcripts(files["paired_text"]), root),
        unlabeled_speech=read_features(files["unlabeled_feats"]),
        external_text=[TextLine(u, t) for u, t in read_transcripts(files["external_text"])],
        dev=_paired(read_features(files["dev_feats"]), read_transcripts(files["dev_text"]), root),
        test=_paired(read_features(files["test_feats"]), read_transcripts(files["test_text"]), root),
        charset=manifest["charset"],
        seed=manifest["seed"],
        unlabeled_reference=dict(read_transcripts(files["unlabeled_reference"]))
        if os.path.exists(files["unlabeled_reference"])
        else {},
    )
    split.validate()
    return split
