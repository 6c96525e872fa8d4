import numpy as np
import pytest
import torch

from cidnst.data import EOS, FeatureSequence, FormatError, TokenSequence, VocabError
from cidnst.model import (
    CIDModel,
    ConfigError,
    EmptySequenceError,
    ModelConfig,
    TooShortError,
    ctc_frame_logits,
    decode_teacher_forced,
    embed_text,
    frontend,
    load_model,
    save_model,
    shared_encode,
    snapshot,
)
from cidnst.numerics import ShapeError

from conftest import random_frames, tiny_model


def test_frontend_subsamples_with_ceiling(rng):
    model, _ = tiny_model(subsample=3)
    for T in (3, 4, 7, 9):
        h = frontend(model, FeatureSequence("u", rng.normal(size=(T, 6))))
        assert h.shape == (-(-T // 3), 8)


def test_text_and_shared_shapes():
    model, vocab = tiny_model()
    b = embed_text(model, vocab.encode("abc"))
    assert b.shape == (3, 8)
    assert shared_encode(model, b).shape == (3, 8)


def test_identity_shared_encoder_is_exact():
    model, vocab = tiny_model(identity_shared=True)
    b = embed_text(model, vocab.encode("abcd"))
    assert torch.equal(shared_encode(model, b), b)


def test_teacher_forced_rows_are_distributions(rng):
    model, vocab = tiny_model()
    h = shared_encode(model, frontend(model, FeatureSequence("u", rng.normal(size=(10, 6)))))
    y = list(vocab.encode("ab").tokens) + [EOS]
    logp = decode_teacher_forced(model, h, y)
    assert logp.shape == (3, len(vocab))
    np.testing.assert_allclose(logp.exp().sum(-1).detach().numpy(), 1.0, atol=1e-12)
    ctc = ctc_frame_logits(model, h)
    assert ctc.shape == (h.shape[0], len(vocab) + 1)
    with pytest.raises(FormatError):
        decode_teacher_forced(model, h, y[:-1])


def test_batching_matches_single_utterance(rng):
    model, vocab = tiny_model()
    frames = random_frames(rng, 3)
    enc, lengths = model.encode_speech(frames)
    for i, fr in enumerate(frames):
        single = shared_encode(model, frontend(model, FeatureSequence("u", fr)))
        np.testing.assert_allclose(enc[i, : int(lengths[i])].detach().numpy(), single.detach().numpy(), atol=1e-12)
        assert torch.all(enc[i, int(lengths[i]) :] == 0)
    bodies = [vocab.encode(t).tokens for t in ("ab", "dcba", "c")]
    logp, tgt, mask = model.teacher_forced(enc, lengths, bodies)
    for i, body in enumerate(bodies):
        single = decode_teacher_forced(model, enc[i, : int(lengths[i])], list(body) + [EOS])
        np.testing.assert_allclose(logp[i, : len(body) + 1].detach().numpy(), single.detach().numpy(), atol=1e-12)


def test_errors(rng):
    model, vocab = tiny_model(subsample=4)
    with pytest.raises(TooShortError):
        frontend(model, FeatureSequence("u", rng.normal(size=(3, 6))))
    with pytest.raises(ShapeError):
        frontend(model, FeatureSequence("u", rng.normal(size=(8, 5))))
    with pytest.raises(EmptySequenceError):
        embed_text(model, TokenSequence("u", ()))
    with pytest.raises(VocabError):
        embed_text(model, TokenSequence("u", (99,)))
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=10, hidden=8, text_width=6).validate()
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=10, hidden=7).validate()


def test_seeded_init_and_checkpoint_roundtrip(tmp_path, rng):
    a, vocab = tiny_model(seed=5)
    b, _ = tiny_model(seed=5)
    c, _ = tiny_model(seed=6)
    sa, sb, sc = snapshot(a), snapshot(b), snapshot(c)
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert any(not np.array_equal(sa[k], sc[k]) for k in sa)
    path = tmp_path / "m.cidm"
    save_model(path, a, vocab, {"note": "x"})
    m, v, extra = load_model(path)
    assert v == vocab and extra == {"note": "x"}
    sm = snapshot(m)
    assert all(np.array_equal(sa[k], sm[k]) for k in sa)
    save_model(tmp_path / "m2.cidm", m, v, {"note": "x"})
    assert path.read_bytes() == (tmp_path / "m2.cidm").read_bytes()


def test_checkpoint_corruption_detected(tmp_path):
    from cidnst.checkpoint import CheckpointError

    model, vocab = tiny_model()
    path = tmp_path / "m.cidm"
    save_model(path, model, vocab)
    data = path.read_bytes()
    (tmp_path / "bad.cidm").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "bad.cidm")
    (tmp_path / "trunc.cidm").write_bytes(data[:-3])
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "trunc.cidm")
    (tmp_path / "extra.cidm").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "extra.cidm")
