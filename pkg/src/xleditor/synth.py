"""Synthetic corpora with learnable structure for desk-scale experiments.

``cycle`` documents walk a per-topic ring of words, cutting a sentence every
``sent_len`` words.  Any gap is therefore determined by its two sides, a
missing span shows up as a jump in the ring, and a sentence lifted from
another document belongs to the wrong ring.

``lexicon`` sentences are neutral templates with one or two sentiment slots;
the two styles draw those slots from mirrored word lists, so every sentence
has a well-defined counterpart in the other style.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DELIM = "."

_SYLLABLES = ["ka", "lo", "mi", "su", "te", "ra", "no", "vi", "pe", "zu", "da", "fo", "gi", "hu",
              "ja", "ke", "ly", "mo", "ni", "po", "qu", "ri", "sa", "to"]


def topic_words(n_topics: int, cycle_len: int) -> list[list[str]]:
    out = []
    for t in range(n_topics):
        stem = _SYLLABLES[t % len(_SYLLABLES)] + (_SYLLABLES[t // len(_SYLLABLES)] if t >= len(_SYLLABLES) else "")
        out.append([f"{stem}{k}" for k in range(cycle_len)])
    return out


@dataclass
class CycleSpec:
    n_topics: int = 12
    cycle_len: int = 11
    sent_len: int = 5
    min_sents: int = 3
    max_sents: int = 5


def cycle_document(spec: CycleSpec, topic: int, start: int, n_sents: int) -> list[list[str]]:
    """Sentences (each ending in the delimiter) of one ring walk."""
    ring = topic_words(spec.n_topics, spec.cycle_len)[topic]
    sents = []
    pos = start
    for _ in range(n_sents):
        words = [ring[(pos + k) % spec.cycle_len] for k in range(spec.sent_len)]
        pos += spec.sent_len
        sents.append(words + [DELIM])
    return sents


def cycle_corpus(n_docs: int, rng: np.random.Generator, spec: CycleSpec | None = None) -> list[str]:
    spec = spec or CycleSpec()
    lines = []
    for _ in range(n_docs):
        t = int(rng.integers(spec.n_topics))
        s = int(rng.integers(spec.cycle_len))
        n = int(rng.integers(spec.min_sents, spec.max_sents + 1))
        lines.append(" ".join(w for sent in cycle_document(spec, t, s, n) for w in sent))
    return lines


# ------------------------------------------------------------------ lexicon

SUBJECTS = ["the food", "the service", "the staff", "the room", "the pizza", "the coffee",
            "the movie", "the book", "the hotel", "the music", "the menu", "the bread"]
LEADS = ["i think", "we felt", "honestly", "overall", "my friend said", "today"]
INTENSIFIERS = ["very", "really", "quite", "so"]
POSITIVE = ["good", "great", "tasty", "friendly", "excellent", "lovely", "fresh", "amazing"]
NEGATIVE = ["bad", "awful", "bland", "rude", "terrible", "ugly", "stale", "horrible"]
LEXICON = (POSITIVE, NEGATIVE)


def style_words() -> set[str]:
    return set(POSITIVE) | set(NEGATIVE)


def lexicon_pair(rng: np.random.Generator) -> tuple[list[str], list[str]]:
    """One sentence rendered in style 0 and in style 1."""
    subj = SUBJECTS[int(rng.integers(len(SUBJECTS)))].split()
    form = int(rng.integers(4))
    k1 = int(rng.integers(len(POSITIVE)))
    k2 = int(rng.integers(len(POSITIVE)))
    pre = LEADS[int(rng.integers(len(LEADS)))].split() if rng.random() < 0.5 else []
    inten = [INTENSIFIERS[int(rng.integers(len(INTENSIFIERS)))]] if rng.random() < 0.4 else []

    def render(words):
        if form == 0:
            body = subj + ["is"] + inten + [words[k1]]
        elif form == 1:
            body = subj + ["was"] + inten + [words[k1]]
        elif form == 2:
            body = subj + ["is"] + [words[k1], "and"] + [words[k2]]
        else:
            body = ["a"] + inten + [words[k1]] + subj[1:] + ["here"]
        return pre + body + [DELIM]

    return render(POSITIVE), render(NEGATIVE)


def lexicon_corpus(n: int, rng: np.random.Generator) -> list[tuple[int, str]]:
    """Balanced (style, text) rows for the two-style corpus."""
    rows = []
    for k in range(n):
        pos, neg = lexicon_pair(rng)
        s = k % 2
        rows.append((s, " ".join(pos if s == 0 else neg)))
    return rows
