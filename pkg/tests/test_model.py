import math
import struct

import numpy as np
import pytest

from xleditor import numerics as nx
from xleditor.encoding import SpanSample, collate, compose
from xleditor.model import (BadMagicError, CheckpointError, ContextCache, DecodeCapError, DecodeSession,
                            ModelConfig, ShapeMismatchError, TruncatedCheckpointError, VersionMismatchError,
                            XLEditorModel, decode_incremental, load_checkpoint, load_model_bundle,
                            param_shapes, save_checkpoint, save_model_bundle)

from conftest import tiny_model, tiny_vocab


def _incremental(model, left, right, y, eoi=2, style_token=None):
    sess = DecodeSession(ContextCache(model, left, right, vocab_eoi=eoi, style_token=style_token,
                                      cap=max(len(y), 1)))
    out = []
    for t in list(y) + [eoi]:
        out.append(sess.next_logprobs()[t])
        if t != eoi:
            sess.append(t)
    return np.array(out)


def test_config_text_roundtrip():
    cfg = ModelConfig(vocab_size=11, n_layers=3, dropout=0.25, l2r=True, n_styles=2)
    assert ModelConfig.from_text(cfg.to_text()) == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, d_model=30, n_heads=4)


def test_zero_model_is_uniform(vocab):
    m = tiny_model(vocab, zero=True)
    z, lay = compose(SpanSample((4, 5, 6, 7), 2, 3), vocab)
    lp, valid = m.span_logprobs(collate([(z, lay)]))
    np.testing.assert_allclose(lp[valid], -math.log(len(vocab)), rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_batch_equals_incremental(seed, vocab):
    m = tiny_model(vocab, seed=seed)
    rng = np.random.default_rng(seed)
    rows, expected = [], []
    for _ in range(4):
        x = tuple(int(t) for t in rng.integers(4, len(vocab), size=int(rng.integers(1, 7))))
        i = int(rng.integers(1, len(x) + 2))
        j = int(rng.integers(i - 1, len(x) + 1))
        s = SpanSample(x, i, j)
        rows.append(compose(s, vocab))
        expected.append(_incremental(m, s.left, s.right, s.span))
    lp, valid = m.span_logprobs(collate(rows))
    for r, e in enumerate(expected):
        np.testing.assert_allclose(lp[r][valid[r]], e, rtol=0, atol=1e-12)


def test_style_token_reaches_predictions(styled_vocab):
    m = tiny_model(styled_vocab, seed=3)
    a = _incremental(m, [6, 7], [8], [9], style_token=styled_vocab.style_id(0))
    b = _incremental(m, [6, 7], [8], [9], style_token=styled_vocab.style_id(1))
    assert not np.allclose(a, b)


def test_suffix_invariance_exact(vocab):
    m = tiny_model(vocab, seed=5)
    x = (4, 5, 6, 7, 8, 9)
    short = compose(SpanSample(x[:2] + (7,) + x[3:], 3, 3), vocab)
    long = compose(SpanSample(x[:2] + (7, 4, 5, 6) + x[3:], 3, 6), vocab)
    b = collate([short, long])
    with nx.no_grad_enabled():
        lp, _ = m.forward_train(b)
    np.testing.assert_array_equal(lp.data[0, 0], lp.data[1, 0])


def test_context_states_independent_of_span(vocab):
    m = tiny_model(vocab, seed=2)
    c1 = ContextCache(m, [4, 5], [6])
    c2 = ContextCache(m, [4, 5], [6], cap=20)
    for s1, s2 in zip(c1.states, c2.states):
        np.testing.assert_array_equal(s1, s2)


def test_l2r_refuses_cache(vocab):
    with pytest.raises(ValueError):
        ContextCache(tiny_model(vocab, l2r=True), [4], [5])


def test_decode_cap(vocab):
    sess = DecodeSession(ContextCache(tiny_model(vocab), [4], [5], cap=1))
    sess.append(6)
    with pytest.raises(DecodeCapError):
        sess.append(7)


def test_decode_modes(vocab):
    m = tiny_model(vocab, seed=1)
    sess = DecodeSession(ContextCache(m, [4], [5]))
    logp, tok = decode_incremental(sess)
    assert tok == int(np.argmax(logp))
    bias = np.zeros(len(vocab))
    bias[7] = 1.0
    _, tok = decode_incremental(sess, mode="biased", bias=bias)
    assert tok == 7
    _, tok = decode_incremental(sess, forbid=range(len(vocab) - 1))
    assert tok == len(vocab) - 1
    _, t1 = decode_incremental(sess, mode="sample", rng=nx.make_rng(0))
    _, t2 = decode_incremental(sess, mode="sample", rng=nx.make_rng(0))
    assert t1 == t2
    with pytest.raises(ValueError):
        decode_incremental(sess, mode="beam")


def test_dropout_only_with_rng(vocab):
    cfg = ModelConfig(vocab_size=len(vocab), n_layers=1, n_heads=2, d_model=8, d_ff=8, dropout=0.5)
    m = XLEditorModel.create(cfg, seed=0, std=0.5, dtype=np.float64)
    b = collate([compose(SpanSample((4, 5, 6), 2, 2), vocab)])
    a1, _ = m.forward_train(b)
    a2, _ = m.forward_train(b)
    np.testing.assert_array_equal(a1.data, a2.data)
    d1, _ = m.forward_train(b, rng=nx.make_rng(0))
    assert not np.array_equal(a1.data, d1.data)


def test_classifier_distribution(styled_vocab):
    m = tiny_model(styled_vocab, seed=4)
    p = m.classify_style([4, 5, 6])
    assert p.shape == (2,) and p.sum() == pytest.approx(1.0)
    batch = m.classify_styles([[4, 5, 6], [7], [8, 9]])
    np.testing.assert_allclose(batch[0], p, atol=1e-12)
    with pytest.raises(ValueError):
        m.classify_style([])


def test_classifier_ignores_padding(styled_vocab):
    m = tiny_model(styled_vocab, seed=4)
    alone = m.classify_styles([[4]])
    padded = m.classify_styles([[4], [5, 6, 7, 8, 9]])
    np.testing.assert_allclose(alone[0], padded[0], atol=1e-12)


# ------------------------------------------------------------------ checkpoints


def test_checkpoint_roundtrip(tmp_path, styled_vocab):
    m = tiny_model(styled_vocab, dtype=np.float32)
    save_model_bundle(m, styled_vocab, tmp_path / "m.ckpt")
    m2, v2 = load_model_bundle(tmp_path / "m.ckpt")
    assert m2.config == m.config and v2 == styled_vocab
    for k in param_shapes(m.config):
        np.testing.assert_array_equal(m.params[k].data, m2.params[k].data)


def test_checkpoint_errors(tmp_path, vocab):
    m = tiny_model(vocab, dtype=np.float32)
    p = tmp_path / "m.ckpt"
    save_checkpoint(m, p)
    data = p.read_bytes()

    (tmp_path / "magic").write_bytes(b"NOPE" + data[4:])
    with pytest.raises(BadMagicError):
        load_checkpoint(tmp_path / "magic")
    (tmp_path / "ver").write_bytes(data[:4] + struct.pack("<I", 99) + data[8:])
    with pytest.raises(VersionMismatchError):
        load_checkpoint(tmp_path / "ver")
    (tmp_path / "trunc").write_bytes(data[:-3])
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(tmp_path / "trunc")
    (tmp_path / "extra").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "extra")
    other = ModelConfig(vocab_size=len(vocab) + 1, n_layers=2, n_heads=2, d_model=16, d_ff=32)
    with pytest.raises(ShapeMismatchError):
        load_checkpoint(p, expect=other)


def test_bundle_vocab_mismatch(tmp_path):
    v = tiny_vocab()
    save_model_bundle(tiny_model(v, dtype=np.float32), tiny_vocab(n_words=3), tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError):
        load_model_bundle(tmp_path / "m.ckpt")
