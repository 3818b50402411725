"""Unpaired style transfer by repeated post-editing.

Each round scores every short span and every insertion gap by how much more
likely the source style finds it than the target style, rewrites the top
candidate under the target style, and stops once no candidate clears the
threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .editor import EditOp, Editor
from .encoding import Vocabulary
from .model import ContextCache, DecodeSession


@dataclass(frozen=True)
class TransferConfig:
    L: int = 4
    v_thres: float = 2.0
    max_iters: int = 10
    biased_sampling: bool = True
    forced_insertion: bool = False
    forced_insertion_conf: float = 0.9
    s_src: int = 0
    s_tgt: int = 1
    max_payload: int = 8

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be at least 1")
        if not self.v_thres > 0:
            raise ValueError("v_thres must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.max_payload < 1:
            raise ValueError("max_payload must be at least 1")


@dataclass
class TraceStep:
    iteration: int
    op: EditOp
    x_after: tuple[int, ...]
    forced: bool = False


@dataclass
class TransferTrace:
    steps: list[TraceStep] = field(default_factory=list)
    terminated_by: str = "threshold"  # threshold | max_iters | forced_insertion_exhausted

    @property
    def n_edits(self) -> int:
        return len(self.steps)

    def to_jsonl(self, vocab: Vocabulary | None = None) -> str:
        def toks(ids):
            return vocab.decode(ids) if vocab is not None else list(ids)

        lines = []
        for st in self.steps:
            lines.append(json.dumps({"iter": st.iteration, "kind": st.op.kind, "i": st.op.i, "j": st.op.j,
                                     "y": toks(st.op.y), "score": st.op.score, "x_after": toks(st.x_after),
                                     "forced": st.forced}))
        return "".join(ln + "\n" for ln in lines)


def candidate_spans(n: int, L: int) -> list[tuple[int, int]]:
    """Replacement spans of length 1..L plus the ``n + 1`` insertion gaps, ordered by (i, j)."""
    spans = [(i, i - 1) for i in range(1, n + 2)]
    spans += [(i, j) for i in range(1, n + 1) for j in range(i, min(n, i + L - 1) + 1)]
    return sorted(spans)


def span_score_f(editor: Editor, x: Sequence[int], i: int, j: int, s_src: int, s_tgt: int) -> float:
    """q(x_i..j | contexts, s_src) / q(x_i..j | contexts, s_tgt); ``j = i - 1`` scores a gap."""
    return math.exp(_log_scores(editor, x, [(i, j)], s_src, s_tgt)[0])


def _log_scores(editor: Editor, x, spans, s_src: int, s_tgt: int) -> list[float]:
    if s_src == s_tgt:
        for i, j in spans:
            editor._check_span(x, i, j)
        return [0.0] * len(spans)
    items = []
    for i, j in spans:
        y = tuple(x[i - 1: j])
        items += [(x, i, j, y, s_src), (x, i, j, y, s_tgt)]
    ests = editor.estimate_batch(items)
    return [ests[2 * k].total_logprob - ests[2 * k + 1].total_logprob for k in range(len(spans))]


def score_all_candidates(editor: Editor, x: Sequence[int], cfg: TransferConfig) -> list[tuple[tuple[int, int], float]]:
    """Every candidate with its score, highest first; ties keep (i, j) order."""
    if len(x) < 1:
        raise ValueError("cannot score candidates of an empty sequence")
    spans = candidate_spans(len(x), cfg.L)
    logs = _log_scores(editor, x, spans, cfg.s_src, cfg.s_tgt)
    scored = [(s, math.exp(v)) for s, v in zip(spans, logs)]
    return sorted(scored, key=lambda t: -t[1])


def first_token_bias(editor: Editor, x: Sequence[int], i: int, j: int, s_src: int, s_tgt: int) -> np.ndarray:
    """q(y_1 | contexts, s_tgt) - q(y_1 | contexts, s_src) over the vocabulary."""
    left, right = x[: i - 1], x[j:]
    probs = []
    for s in (s_tgt, s_src):
        cache = ContextCache(editor.model, left, right, vocab_eoi=editor.vocab.eoi_id,
                             style_token=editor.vocab.style_id(s), cap=1)
        probs.append(np.exp(DecodeSession(cache).next_logprobs()))
    return probs[0] - probs[1]


def _payload(editor: Editor, x, i: int, j: int, cfg: TransferConfig):
    bias = first_token_bias(editor, x, i, j, cfg.s_src, cfg.s_tgt) if cfg.biased_sampling else None
    return editor.greedy_insert(x, i, j, style=cfg.s_tgt, cap=cfg.max_payload, first_bias=bias,
                                require_nonempty=j == i - 1).y


def transfer(editor: Editor, x: Sequence[int], cfg: TransferConfig) -> tuple[list[int], TransferTrace]:
    """Rewrite ``x`` from style ``cfg.s_src`` towards ``cfg.s_tgt``.

    A candidate whose decoded payload would leave the sequence unchanged is
    passed over in favour of the next one above the threshold.
    """
    if len(x) < 1:
        raise ValueError("cannot transfer an empty sequence")
    x = list(x)
    trace = TransferTrace()
    if cfg.s_src == cfg.s_tgt:
        # every ratio is exactly 1, so no span prefers either style
        return x, trace
    for it in range(1, cfg.max_iters + 1):
        op = None
        for (i, j), v in score_all_candidates(editor, x, cfg):
            if v < cfg.v_thres:
                break
            y = _payload(editor, x, i, j, cfg)
            if tuple(y) != tuple(x[i - 1: j]):
                op = EditOp.for_span(i, j, y, score=v)
                break
        if op is None:
            trace.terminated_by = "threshold"
            break
        x = op.apply(x)
        trace.steps.append(TraceStep(it, op, tuple(x)))
    else:
        trace.terminated_by = "max_iters"
    if (cfg.forced_insertion and trace.terminated_by == "threshold" and cfg.s_src != cfg.s_tgt
            and editor.model.config.n_styles > 0):
        p_src = float(editor.model.classify_style(x)[cfg.s_src])
        if p_src > cfg.forced_insertion_conf:
            y = _payload(editor, x, 1, 0, cfg)
            op = EditOp.for_span(1, 0, y, score=p_src)
            x = op.apply(x)
            trace.steps.append(TraceStep(len(trace.steps) + 1, op, tuple(x), forced=True))
            trace.terminated_by = "forced_insertion_exhausted"
    return x, trace
