import numpy as np
import pytest

from xleditor import numerics as nx
from xleditor.editor import Editor
from xleditor.encoding import Vocabulary
from xleditor.model import ModelConfig, XLEditorModel


def tiny_vocab(n_words=6, n_styles=0):
    return Vocabulary([f"w{k}" for k in range(n_words)], n_styles=n_styles)


def tiny_model(vocab, seed=0, n_layers=2, d_model=16, n_heads=2, dtype=np.float64, l2r=False,
               std=0.3, zero=False, max_decode_len=8):
    cfg = ModelConfig(vocab_size=len(vocab), n_layers=n_layers, n_heads=n_heads, d_model=d_model,
                      d_ff=2 * d_model, dropout=0.0, n_styles=vocab.n_styles, l2r=l2r,
                      max_decode_len=max_decode_len)
    return XLEditorModel.create(cfg, seed=seed, std=std, dtype=dtype, zero=zero)


@pytest.fixture
def vocab():
    return tiny_vocab()


@pytest.fixture
def styled_vocab():
    return tiny_vocab(n_styles=2)


@pytest.fixture
def model(vocab):
    return tiny_model(vocab)


@pytest.fixture
def editor(model, vocab):
    return Editor(model, vocab)


@pytest.fixture
def uniform_editor(vocab):
    return Editor(tiny_model(vocab, zero=True), vocab)


@pytest.fixture
def rng():
    return nx.make_rng(1234)


# one line per acceptance criterion, repeated in the terminal summary so it survives output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
