"""Synthetic post-editing tasks, their metrics and the evaluation driver."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .editor import Editor
from .encoding import CorpusError, Vocabulary
from .styler import TransferConfig, transfer
from .synth import DELIM

KINDS = ("locate", "infill", "delete", "transfer")
MODES = ("xledit", "xledit_rank", "l2r", "l2r_rank", "copy")


@dataclass
class TaskInstance:
    id: int
    kind: str
    tokens: list[str]
    candidates: list = field(default_factory=list)
    truth: Any = None
    style: int | None = None  # source style of a transfer instance
    reference: list[str] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "locate" and self.truth not in self.candidates:
            raise ValueError("locate truth must be among the candidates")
        if self.kind == "delete":
            self.candidates = [tuple(c) for c in self.candidates]
            self.truth = tuple(self.truth)
            if self.truth not in self.candidates:
                raise ValueError("delete truth must be among the candidates")

    def to_json(self) -> str:
        d = asdict(self)
        if self.kind == "delete":
            d["candidates"] = [list(c) for c in self.candidates]
            d["truth"] = list(self.truth)
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "TaskInstance":
        return cls(**json.loads(line))


def save_tasks(tasks: Sequence[TaskInstance], path: str | Path) -> None:
    Path(path).write_text("".join(t.to_json() + "\n" for t in tasks), encoding="utf-8")


def load_tasks(path: str | Path) -> list[TaskInstance]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return [TaskInstance.from_json(ln) for ln in lines if ln.strip()]
    except (OSError, ValueError, TypeError) as e:
        raise CorpusError(f"cannot read tasks from {path}: {e}") from e


# ------------------------------------------------------------ generation


def split_sentences(tokens: Sequence[str], delim: str = DELIM) -> list[list[str]]:
    """Sentences ending in ``delim``; a trailing fragment counts as a sentence."""
    out, cur = [], []
    for t in tokens:
        cur.append(t)
        if t == delim:
            out.append(cur)
            cur = []
    if cur:
        out.append(cur)
    return out


def _locate(doc: list[str], rng, max_span: int) -> tuple[list[str], list[int], int]:
    n = len(doc)
    length = int(rng.integers(1, min(max_span, n - 2) + 1))
    i = int(rng.integers(2, n - length + 1))  # keep one token on each side
    x = doc[: i - 1] + doc[i - 1 + length:]
    truth = i - 1
    others = [g for g in range(1, len(x)) if g != truth]
    picks = rng.choice(len(others), size=min(4, len(others)), replace=False)
    cands = sorted([truth] + [others[k] for k in picks])
    return x, cands, truth


def _infill(doc: list[str], rng) -> tuple[list[str], int, list[str]]:
    sents = split_sentences(doc)
    m = int(rng.integers(1, len(sents) - 1))
    start = sum(len(s) for s in sents[:m])
    words = len(sents[m]) - (1 if sents[m][-1] == DELIM else 0)
    length = int(rng.integers(1, words + 1))
    off = int(rng.integers(0, words - length + 1))
    g = start + off
    return doc[:g] + doc[g + length:], g, doc[g:g + length]


def _delete(docs: list[list[str]], d: int, rng) -> tuple[list[str], list[tuple[int, int]], tuple[int, int]]:
    sents = split_sentences(docs[d])
    w0 = int(rng.integers(0, len(sents) - 4))
    window = [list(s) for s in sents[w0:w0 + 5]]
    slot = int(rng.integers(1, 4))  # window sentence 2, 3 or 4
    while True:
        other = int(rng.integers(len(docs)))
        if other == d:
            continue
        osents = split_sentences(docs[other])
        alien = list(osents[int(rng.integers(len(osents)))])
        if alien != window[slot]:
            break
    window[slot] = alien
    spans, pos = [], 1
    for k, s in enumerate(window):
        if 1 <= k <= 3:
            spans.append((pos, pos + len(s) - 1))
        pos += len(s)
    return [t for s in window for t in s], spans, spans[slot - 1]


def gen_tasks(corpus: Sequence[str], kind: str, n: int, rng: np.random.Generator,
              max_span: int = 5, styles: Sequence[int] | None = None,
              references: Sequence[str] | None = None) -> list[TaskInstance]:
    """``n`` instances of ``kind`` drawn from whitespace-tokenised documents.

    ``transfer`` needs ``styles`` (the source style of each line); the target
    is the other of two styles.  ``references`` optionally pairs each line
    with its counterpart in the target style.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown task kind {kind!r}")
    if n <= 0:
        return []
    docs = [line.split() for line in corpus]
    if kind == "locate":
        pool = [k for k, d in enumerate(docs) if len(d) >= 3]
    elif kind == "infill":
        pool = [k for k, d in enumerate(docs) if len(split_sentences(d)) >= 3]
    elif kind == "delete":
        pool = [k for k, d in enumerate(docs) if len(split_sentences(d)) >= 5]
        if len(docs) < 2:
            pool = []
    else:
        if styles is None or len(styles) != len(docs):
            raise ValueError("transfer tasks need one source style per line")
        pool = [k for k, d in enumerate(docs) if d]
    if not pool:
        raise CorpusError(f"no document in the corpus is long enough for {kind} tasks")
    out = []
    for t in range(n):
        d = pool[int(rng.integers(len(pool)))]
        doc = docs[d]
        if kind == "locate":
            x, cands, truth = _locate(doc, rng, max_span)
            out.append(TaskInstance(t, kind, x, cands, truth))
        elif kind == "infill":
            x, g, y = _infill(doc, rng)
            out.append(TaskInstance(t, kind, x, [g], y))
        elif kind == "delete":
            x, spans, truth = _delete(docs, d, rng)
            out.append(TaskInstance(t, kind, x, spans, truth))
        else:
            src = int(styles[d])
            ref = references[d].split() if references is not None else None
            out.append(TaskInstance(t, kind, list(doc), [], 1 - src, style=src, reference=ref))
    return out


# ---------------------------------------------------------------- metrics


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[k:k + n]) for k in range(len(tokens) - n + 1))


def _bleu_parts(hyp: Sequence, ref: Sequence, max_n: int = 4) -> list[float]:
    logs = []
    for n in range(1, max_n + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        match = sum(min(c, r[g]) for g, c in h.items())
        total = max(len(hyp) - n + 1, 0)
        logs.append(math.log((match + 1) / (total + 1)))
    return logs


def _brevity(hyp_len: int, ref_len: int) -> float:
    return 1.0 if hyp_len >= ref_len else math.exp(1 - ref_len / hyp_len)


def bleu(hyp: Sequence, ref: Sequence, max_n: int = 4) -> float:
    """Sentence BLEU in percent: add-one smoothed n-gram precisions and a brevity penalty."""
    if len(ref) == 0:
        raise ValueError("BLEU needs a non-empty reference")
    if len(hyp) == 0:
        return 0.0
    logs = _bleu_parts(hyp, ref, max_n)
    return 100.0 * _brevity(len(hyp), len(ref)) * math.exp(sum(logs) / max_n)


def corpus_bleu(hyps: Sequence[Sequence], refs: Sequence[Sequence], max_n: int = 4) -> float:
    """Per-order log-precisions averaged over the set, brevity penalty on total lengths."""
    if len(hyps) != len(refs):
        raise ValueError("hypothesis and reference counts differ")
    if not hyps:
        raise ValueError("empty evaluation set")
    if any(len(r) == 0 for r in refs):
        raise ValueError("BLEU needs non-empty references")
    hl = sum(len(h) for h in hyps)
    if hl == 0:
        return 0.0
    per_order = np.mean([_bleu_parts(h, r, max_n) for h, r in zip(hyps, refs)], axis=0)
    return 100.0 * _brevity(hl, sum(len(r) for r in refs)) * math.exp(float(np.mean(per_order)))


def g_score(style_acc: float, bleu_score: float) -> float:
    """Geometric mean of style accuracy and BLEU, both in percent."""
    for v in (style_acc, bleu_score):
        if not 0 <= v <= 100:
            raise ValueError(f"score {v} outside [0, 100]")
    return math.sqrt(style_acc * bleu_score)


@dataclass
class MetricsReport:
    kind: str
    mode: str
    n_instances: int
    accuracy: float | None = None
    bleu: float | None = None
    exact_match: float | None = None
    style_accuracy: float | None = None
    g_score: float | None = None
    mean_edits: float | None = None

    def __post_init__(self):
        for name in ("accuracy", "bleu", "exact_match", "style_accuracy", "g_score"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 100 + 1e-9:
                raise ValueError(f"{name}={v} outside [0, 100]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _encode(vocab: Vocabulary, tokens: Sequence[str]) -> list[int]:
    try:
        return vocab.encode_strict(tokens)
    except KeyError as e:
        raise CorpusError(f"task token outside the model vocabulary: {e}") from e


def run_eval(editor: Editor | None, tasks: Sequence[TaskInstance], mode: str = "xledit",
             style_classifier=None, transfer_cfg: TransferConfig | None = None,
             vocab: Vocabulary | None = None) -> MetricsReport:
    """Evaluate one kind of task under one editing strategy.

    ``copy`` returns inputs unchanged (transfer only).  Transfer style
    accuracy needs ``style_classifier``, a model whose ``classify_styles``
    judges the outputs; it should not be the transfer model itself.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not tasks:
        raise ValueError("no tasks to evaluate")
    kinds = {t.kind for t in tasks}
    if len(kinds) != 1:
        raise ValueError(f"mixed task kinds {sorted(kinds)}")
    kind = kinds.pop()
    if mode == "copy" and kind != "transfer":
        raise ValueError("copy mode only applies to transfer tasks")
    if editor is None and mode != "copy":
        raise ValueError(f"mode {mode} needs a model")
    vocab = vocab or editor.vocab
    n = len(tasks)
    if kind == "locate":
        hits = sum(editor.locate(_encode(vocab, t.tokens), t.candidates) == t.truth for t in tasks)
        return MetricsReport(kind, mode, n, accuracy=100.0 * hits / n)
    if kind == "delete":
        hits = sum(editor.delete_rank(_encode(vocab, t.tokens), t.candidates, strategy=mode) == t.truth
                   for t in tasks)
        return MetricsReport(kind, mode, n, accuracy=100.0 * hits / n)
    if kind == "infill":
        hyps, refs = [], []
        for t in tasks:
            truth = _encode(vocab, t.truth)
            res = editor.infill(_encode(vocab, t.tokens), t.candidates[0], strategy=mode, truth_len=len(truth))
            hyps.append(list(res.y))
            refs.append(truth)
        exact = sum(h == r for h, r in zip(hyps, refs))
        return MetricsReport(kind, mode, n, bleu=float(np.mean([bleu(h, r) for h, r in zip(hyps, refs)])),
                             exact_match=100.0 * exact / n)
    # transfer
    outs, refs, edits = [], [], []
    for t in tasks:
        x = _encode(vocab, t.tokens)
        refs.append(list(t.reference) if t.reference else list(t.tokens))
        if mode == "copy":
            y, k = x, 0
        else:
            cfg = TransferConfig(**{**asdict(transfer_cfg or TransferConfig()), "s_src": t.style, "s_tgt": t.truth})
            y, trace = transfer(editor, x, cfg)
            k = trace.n_edits
        outs.append(y)
        edits.append(k)
    # against the reference when one is given, otherwise against the input (self-BLEU)
    ref_bleu = float(np.mean([bleu(vocab.decode(o), r) for o, r in zip(outs, refs)]))
    acc = None
    if style_classifier is not None:
        probs = style_classifier.classify_styles(outs)
        acc = 100.0 * float(np.mean(np.argmax(probs, axis=1) == np.array([t.truth for t in tasks])))
    return MetricsReport(kind, mode, n, bleu=ref_bleu, style_accuracy=acc,
                         g_score=g_score(acc, ref_bleu) if acc is not None else None,
                         mean_edits=float(np.mean(edits)))
