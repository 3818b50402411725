"""Vocabulary, corpus ingestion, interval sampling and composed-row assembly."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .positional import SpanLayout

PAD, UNK, EOI, CLS = "<pad>", "<unk>", "<eoi>", "<cls>"
_BASE_RESERVED = (PAD, UNK, EOI, CLS)


def style_token(s: int) -> str:
    return f"<style:{s}>"


class CorpusError(ValueError):
    """Bad or unreadable corpus input."""


class Vocabulary:
    """Bijective token <-> id map with reserved ids in front.

    Reserved tokens are never produced from raw text: a raw token spelled like
    a reserved one maps to UNK.
    """

    def __init__(self, words: Sequence[str], n_styles: int = 0):
        self.n_styles = int(n_styles)
        reserved = list(_BASE_RESERVED) + [style_token(s) for s in range(self.n_styles)]
        self.itos: list[str] = reserved + list(words)
        if len(set(self.itos)) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")
        self.stoi = {t: k for k, t in enumerate(self.itos)}
        self.n_reserved = len(reserved)
        self._word_ids = {t: k for k, t in enumerate(self.itos) if k >= self.n_reserved}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def eoi_id(self) -> int:
        return 2

    @property
    def cls_id(self) -> int:
        return 3

    def style_id(self, s: int) -> int:
        if not 0 <= s < self.n_styles:
            raise ValueError(f"style {s} outside [0, {self.n_styles})")
        return 4 + s

    @property
    def words(self) -> list[str]:
        return self.itos[self.n_reserved:]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self._word_ids.get(t, self.unk_id) for t in tokens]

    def encode_strict(self, tokens: Iterable[str]) -> list[int]:
        ids = []
        for t in tokens:
            if t not in self._word_ids:
                raise KeyError(f"token {t!r} not in vocabulary")
            ids.append(self._word_ids[t])
        return ids

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[k] for k in ids]

    def tokenize(self, line: str) -> list[int]:
        return self.encode(line.split())

    def detokenize(self, ids: Iterable[int]) -> str:
        return " ".join(self.decode(ids))

    def save(self, path: str | Path) -> None:
        lines = [f"#n_styles={self.n_styles}"] + self.words
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise CorpusError(f"cannot read vocabulary {path}: {e}") from e
        if not lines or not lines[0].startswith("#n_styles="):
            raise CorpusError(f"{path}: not a vocabulary file")
        return cls(lines[1:], n_styles=int(lines[0].split("=", 1)[1]))


def build_vocab(corpus: Iterable[str], min_count: int = 1, n_styles: int = 0) -> Vocabulary:
    """Whitespace word vocabulary; words seen fewer than ``min_count`` times become UNK."""
    counts: Counter[str] = Counter()
    n_lines = 0
    for line in corpus:
        toks = line.split()
        if toks:
            n_lines += 1
            counts.update(toks)
    if n_lines == 0:
        raise CorpusError("empty corpus")
    reserved = set(_BASE_RESERVED) | {style_token(s) for s in range(n_styles)}
    kept = [w for w, c in counts.items() if c >= min_count and w not in reserved]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(kept, n_styles=n_styles)


def read_corpus(path: str | Path) -> list[str]:
    """One document per line; blank lines are dropped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise CorpusError(f"cannot read corpus {path}: {e}") from e
    return [ln for ln in text.splitlines() if ln.strip()]


def read_style_corpus(path: str | Path) -> list[tuple[int, str]]:
    """TSV rows ``style_id<TAB>text``."""
    out = []
    for lineno, ln in enumerate(read_corpus(path), 1):
        parts = ln.split("\t", 1)
        if len(parts) != 2:
            raise CorpusError(f"{path}:{lineno}: expected style_id<TAB>text")
        try:
            s = int(parts[0])
        except ValueError as e:
            raise CorpusError(f"{path}:{lineno}: bad style id {parts[0]!r}") from e
        out.append((s, parts[1]))
    return out


# ------------------------------------------------------------------ spans


def n_intervals(n: int, strict: bool = False) -> int:
    return n * (n - 1) // 2 if strict else n * (n + 1) // 2


def sample_interval(n: int, rng: np.random.Generator, strict: bool = False) -> tuple[int, int]:
    """Uniform 1-based inclusive span (i, j) of a length-``n`` sequence.

    Singletons are included unless ``strict`` (then i < j).
    """
    if n < 1 or (strict and n < 2):
        raise ValueError(f"cannot sample an interval from a sequence of length {n}")
    k = int(rng.integers(n_intervals(n, strict)))
    # enumerate by span length: length L contributes n - L + 1 spans
    length = 2 if strict else 1
    while k >= n - length + 1:
        k -= n - length + 1
        length += 1
    i = k + 1
    return i, i + length - 1


@dataclass(frozen=True)
class SpanSample:
    x: tuple[int, ...]
    i: int
    j: int
    style: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(self.x))
        if not (1 <= self.i <= self.j + 1 <= len(self.x) + 1):
            raise ValueError(f"span ({self.i},{self.j}) out of bounds for length {len(self.x)}")

    @property
    def left(self) -> tuple[int, ...]:
        return self.x[: self.i - 1]

    @property
    def span(self) -> tuple[int, ...]:
        return self.x[self.i - 1: self.j]

    @property
    def right(self) -> tuple[int, ...]:
        return self.x[self.j:]


def compose(sample: SpanSample, vocab: Vocabulary, conditional: bool = False,
            with_cls: bool = False, l2r: bool = False) -> tuple[list[int], SpanLayout]:
    """Build ``left + span + EOI + right (+ STYLE) (+ CLS)`` and its span layout.

    In ``l2r`` mode there is no EOI slot and the span must be non-empty.
    """
    if conditional and sample.style is None:
        raise ValueError("conditional composition needs a style")
    z = list(sample.left) + list(sample.span)
    if l2r:
        if not sample.span:
            raise ValueError("l2r composition needs a non-empty span")
    else:
        z.append(vocab.eoi_id)
    a = sample.i
    b = len(z)
    z += list(sample.right)
    if conditional:
        z.append(vocab.style_id(sample.style))
    if with_cls:
        z.append(vocab.cls_id)
    return z, SpanLayout(total_len=len(z), a=a, b=b)


def strip_span(z: Sequence[int], layout: SpanLayout, n_trailing: int = 0) -> list[int]:
    """Inverse of :func:`compose` on the contexts: drop the span (and EOI) and trailing extras."""
    end = len(z) - n_trailing
    return list(z[: layout.a - 1]) + list(z[layout.b: end])


@dataclass
class ComposedBatch:
    """Padded composed rows.  ``loss_mask`` marks the predicted span slots."""

    tokens: np.ndarray  # (B, n) int64
    layouts: list[SpanLayout]
    lengths: np.ndarray  # (B,)
    loss_mask: np.ndarray  # (B, n) bool
    styles: list[int | None] = field(default_factory=list)
    l2r: bool = False

    @property
    def n_predicted(self) -> int:
        return int(self.loss_mask.sum())


def collate(rows: Sequence[tuple[Sequence[int], SpanLayout]], pad_id: int = 0,
            styles: Sequence[int | None] | None = None, l2r: bool = False) -> ComposedBatch:
    if not rows:
        raise ValueError("empty batch")
    n = max(len(z) for z, _ in rows)
    B = len(rows)
    tokens = np.full((B, n), pad_id, dtype=np.int64)
    mask = np.zeros((B, n), dtype=bool)
    lengths = np.zeros(B, dtype=np.int64)
    for r, (z, lay) in enumerate(rows):
        if lay.total_len != len(z):
            raise ValueError("layout does not match row length")
        tokens[r, : len(z)] = z
        lengths[r] = len(z)
        mask[r, lay.a - 1: lay.b] = True
    return ComposedBatch(tokens=tokens, layouts=[lay for _, lay in rows], lengths=lengths,
                         loss_mask=mask, styles=list(styles) if styles is not None else [None] * B,
                         l2r=l2r)
