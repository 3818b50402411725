"""Post-editing operations on top of a trained model.

Positions follow two conventions:

* spans ``(i, j)`` are 1-based and inclusive over ``x``; ``j = i - 1`` is the
  empty span sitting in front of ``x_i``;
* gaps ``g`` run ``0..len(x)``; gap ``g`` lies between ``x_g`` and ``x_{g+1}``,
  which is the empty span ``(g + 1, g)``.

Score ties are broken towards the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .encoding import SpanSample, Vocabulary, collate, compose
from .model import ContextCache, DecodeCapError, DecodeSession, XLEditorModel, decode_incremental

STRATEGIES = ("xledit", "xledit_rank", "l2r", "l2r_rank")


@dataclass(frozen=True)
class InsertionEstimate:
    total_logprob: float
    per_token_logprobs: tuple[float, ...]
    span: tuple[int, int]
    style: int | None = None

    @property
    def n_tokens(self) -> int:
        return len(self.per_token_logprobs)


@dataclass(frozen=True)
class EditOp:
    kind: str  # insert | delete | replace
    i: int
    j: int
    y: tuple[int, ...] = ()
    score: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(int(t) for t in self.y))
        if self.kind == "insert":
            ok = self.j == self.i - 1 and len(self.y) > 0
        elif self.kind == "delete":
            ok = self.j >= self.i and not self.y
        elif self.kind == "replace":
            ok = self.j >= self.i and len(self.y) > 0
        else:
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if not ok:
            raise ValueError(f"{self.kind} inconsistent with span ({self.i},{self.j}) and payload {self.y}")

    @classmethod
    def for_span(cls, i: int, j: int, y: Sequence[int], score: float = 0.0) -> "EditOp":
        """Pick the kind implied by the span and payload."""
        if j == i - 1:
            kind = "insert"
        elif not y:
            kind = "delete"
        else:
            kind = "replace"
        return cls(kind, i, j, tuple(y), score)

    def apply(self, x: Sequence[int]) -> list[int]:
        if not (1 <= self.i <= self.j + 1 <= len(x) + 1):
            raise ValueError(f"edit span ({self.i},{self.j}) outside a sequence of length {len(x)}")
        return list(x[: self.i - 1]) + list(self.y) + list(x[self.j:])


@dataclass(frozen=True)
class InfillResult:
    y: tuple[int, ...]
    logprob: float
    capped: bool  # decoding hit the length cap before choosing EOI


def perplexity(est: InsertionEstimate) -> float:
    """``exp(-total / n)`` over the scored slots (the EOI slot counts)."""
    n = est.n_tokens
    if n < 1:
        raise ValueError("perplexity of an estimate with no scored tokens")
    return math.exp(-est.total_logprob / n)


class Editor:
    """Read-only editing API over one model and its vocabulary.

    ``batch_size`` bounds the rows per forward pass on the batched path.
    """

    def __init__(self, model: XLEditorModel, vocab: Vocabulary, batch_size: int = 32):
        if model.config.vocab_size != len(vocab):
            raise ValueError(f"model vocabulary size {model.config.vocab_size} != vocabulary size {len(vocab)}")
        self.model = model
        self.vocab = vocab
        self.batch_size = batch_size
        self.l2r = model.config.l2r
        reserved = {vocab.pad_id, vocab.eoi_id, vocab.cls_id}
        reserved |= {vocab.style_id(s) for s in range(vocab.n_styles)}
        self.never_emit = tuple(sorted(reserved - {vocab.eoi_id}))
        self._not_payload = reserved

    # ----------------------------------------------------------- checking

    def _check_span(self, x: Sequence[int], i: int, j: int) -> None:
        if not (1 <= i <= j + 1 <= len(x) + 1):
            raise ValueError(f"span ({i},{j}) outside a sequence of length {len(x)}")

    def _check_payload(self, y: Sequence[int]) -> None:
        V = len(self.vocab)
        for t in y:
            if not 0 <= t < V or t in self._not_payload:
                raise KeyError(f"token id {t} is not an insertable vocabulary token")

    def _style_token(self, style: int | None) -> int | None:
        return None if style is None else self.vocab.style_id(style)

    # ---------------------------------------------------------- estimation

    def estimate_insertion(self, x: Sequence[int], i: int, j: int, y: Sequence[int],
                           style: int | None = None) -> InsertionEstimate:
        """log q(y | x_<i, x_>j) via one context cache and ``len(y) + 1`` decoding steps.

        In l2r mode there is no EOI and no cache; the span is scored in one
        teacher-forced pass instead.
        """
        self._check_span(x, i, j)
        self._check_payload(y)
        if self.l2r:
            return self.estimate_batch([(x, i, j, y, style)])[0]
        cache = ContextCache(self.model, x[: i - 1], x[j:], vocab_eoi=self.vocab.eoi_id,
                             style_token=self._style_token(style), cap=max(len(y), 1))
        sess = DecodeSession(cache)
        per = []
        for t in y:
            per.append(float(sess.next_logprobs()[t]))
            sess.append(t)
        per.append(float(sess.next_logprobs()[self.vocab.eoi_id]))
        return InsertionEstimate(float(sum(per)), tuple(per), (i, j), style)

    def estimate_batch(self, items: Sequence[tuple]) -> list[InsertionEstimate]:
        """Teacher-forced estimates for many ``(x, i, j, y[, style])`` at once.

        Numerically the same quantity as :meth:`estimate_insertion`; rows are
        packed into forward passes of at most ``batch_size``.
        """
        rows = []
        for item in items:
            x, i, j, y = item[:4]
            style = item[4] if len(item) > 4 else None
            self._check_span(x, i, j)
            self._check_payload(y)
            if self.l2r and not y:
                raise ValueError("l2r mode cannot score an empty insertion")
            xx = list(x[: i - 1]) + list(y) + list(x[j:])
            s = SpanSample(tuple(xx), i, i + len(y) - 1, style)
            rows.append((compose(s, self.vocab, conditional=style is not None, l2r=self.l2r), (i, j), style))
        out: list[InsertionEstimate] = []
        for k in range(0, len(rows), self.batch_size):
            chunk = rows[k:k + self.batch_size]
            batch = collate([r for r, _, _ in chunk], pad_id=self.vocab.pad_id, l2r=self.l2r)
            picked, valid = self.model.span_logprobs(batch)
            for r, (_, span, style) in enumerate(chunk):
                per = tuple(float(v) for v in picked[r][valid[r]])
                out.append(InsertionEstimate(float(sum(per)), per, span, style))
        return out

    def sequence_estimate(self, x: Sequence[int], style: int | None = None) -> InsertionEstimate:
        """Whole-sequence score: ``x`` inserted between empty contexts (EOI-terminated outside l2r)."""
        return self.estimate_batch([((), 1, 0, x, style)])[0]

    def sequence_estimates(self, xs: Sequence[Sequence[int]], style: int | None = None) -> list[InsertionEstimate]:
        return self.estimate_batch([((), 1, 0, x, style) for x in xs])

    # ------------------------------------------------------------- locate

    def locate_scores(self, x: Sequence[int], candidates: Sequence[int] | None = None) -> dict[int, float]:
        """Score per gap; lower means an insertion is more likely missing there.

        Outside l2r this is log q(EOI | x_<=g, x_>g).  In l2r mode it is the
        log-probability of the bigram straddling the gap given the rest, and
        gaps at either end of ``x`` are skipped.
        """
        if len(x) < 1:
            raise ValueError("locate needs a non-empty sequence")
        cands = list(range(len(x) + 1)) if candidates is None else [int(g) for g in candidates]
        if not cands:
            raise ValueError("empty candidate set")
        for g in cands:
            if not 0 <= g <= len(x):
                raise ValueError(f"gap {g} outside 0..{len(x)}")
        if self.l2r:
            cands = [g for g in cands if 1 <= g <= len(x) - 1]
            if not cands:
                raise ValueError("no interior gap to score in l2r mode")
            items = [(x, g, g + 1, tuple(x[g - 1: g + 1])) for g in cands]
        else:
            items = [(x, g + 1, g, ()) for g in cands]
        ests = self.estimate_batch(items)
        return {g: e.total_logprob for g, e in zip(cands, ests)}

    def locate(self, x: Sequence[int], candidates: Sequence[int] | None = None) -> int:
        scores = self.locate_scores(x, candidates)
        return min(sorted(scores), key=lambda g: scores[g])

    # ------------------------------------------------------------ replace

    def replace_odds(self, x: Sequence[int], i: int, j: int, y: Sequence[int],
                     style: int | None = None) -> float:
        """q(y | contexts) / q(x_i..j | contexts); deletion is ``y = ()``."""
        if not 1 <= i <= j <= len(x):
            raise ValueError(f"replace needs a non-empty span inside x, got ({i},{j})")
        old = tuple(x[i - 1: j])
        if tuple(y) == old:
            self._check_payload(y)
            return 1.0
        new_est, old_est = self.estimate_batch([(x, i, j, tuple(y), style), (x, i, j, old, style)])
        return math.exp(new_est.total_logprob - old_est.total_logprob)

    # ------------------------------------------------------------- delete

    def delete_scores(self, x: Sequence[int], spans: Sequence[tuple[int, int]],
                      strategy: str = "xledit") -> list[float]:
        """Per-candidate score; the chosen deletion maximises it.

        ``xledit``: PPL of the span over PPL of the EOI-only insertion.
        ``l2r``: the same ratio on the span widened by one token each side,
        against inserting just those two border tokens.
        ``*_rank``: negative whole-sequence PPL after the deletion.
        """
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        if not spans:
            raise ValueError("empty candidate set")
        for i, j in spans:
            if not 1 <= i <= j <= len(x):
                raise ValueError(f"deletion span ({i},{j}) outside x")
        if strategy.endswith("_rank"):
            ests = self.sequence_estimates([list(x[: i - 1]) + list(x[j:]) for i, j in spans])
            return [-perplexity(e) for e in ests]
        items = []
        for i, j in spans:
            if strategy == "xledit":
                items += [(x, i, j, tuple(x[i - 1: j])), (x, i, j, ())]
            else:
                a, b = max(i - 1, 1), min(j + 1, len(x))
                border = tuple(x[a - 1: i - 1]) + tuple(x[j: b])
                if not border:
                    border = tuple(x[i - 1: j])[:1]
                items += [(x, a, b, tuple(x[a - 1: b])), (x, a, b, border)]
        ests = self.estimate_batch(items)
        return [perplexity(ests[2 * k]) / perplexity(ests[2 * k + 1]) for k in range(len(spans))]

    def delete_rank(self, x: Sequence[int], spans: Sequence[tuple[int, int]],
                    strategy: str = "xledit") -> tuple[int, int]:
        spans = [tuple(s) for s in spans]
        if len(spans) == 1:
            return spans[0]
        scores = self.delete_scores(x, spans, strategy)
        best = max(range(len(spans)), key=lambda k: (scores[k], -k))
        return spans[best]

    # ------------------------------------------------------------- infill

    def greedy_insert(self, x: Sequence[int], i: int, j: int, style: int | None = None,
                      cap: int | None = None, first_bias: np.ndarray | None = None,
                      require_nonempty: bool = False) -> InfillResult:
        """Greedy decode of the insertion replacing ``x_i..j`` until EOI or ``cap``.

        ``first_bias`` replaces the model scores when choosing the first token.
        ``require_nonempty`` forbids EOI as the first token.
        """
        self._check_span(x, i, j)
        if self.l2r:
            raise ValueError("open-ended greedy insertion needs the insertion-aware model")
        cap = self.model.config.max_decode_len if cap is None else cap
        if cap < 0:
            raise ValueError("cap must be non-negative")
        cache = ContextCache(self.model, x[: i - 1], x[j:], vocab_eoi=self.vocab.eoi_id,
                             style_token=self._style_token(style), cap=max(cap, 1))
        sess = DecodeSession(cache)
        eoi = self.vocab.eoi_id
        total = 0.0
        while True:
            first = not sess.tokens
            forbid = self.never_emit + ((eoi,) if first and require_nonempty else ())
            if len(sess.tokens) >= cap:
                total += float(sess.next_logprobs()[eoi])
                return InfillResult(tuple(sess.tokens), total, capped=cap > 0 or require_nonempty)
            mode = "biased" if first and first_bias is not None else "greedy"
            logp, tok = decode_incremental(sess, mode=mode, bias=first_bias, forbid=forbid)
            total += float(logp[tok])
            if tok == eoi:
                return InfillResult(tuple(sess.tokens), total, capped=False)
            try:
                sess.append(tok)
            except DecodeCapError:  # pragma: no cover - guarded by the cap check above
                return InfillResult(tuple(sess.tokens), total, capped=True)

    def _l2r_fixed_length(self, x: Sequence[int], g: int, lengths: Sequence[int]) -> list[InfillResult]:
        """Greedy decodes of every requested length in parallel (one row per length)."""
        pad_tok = self.vocab.unk_id
        ys: list[list[int]] = [[] for _ in lengths]
        lps = [0.0] * len(lengths)
        for t in range(max(lengths)):
            active = [k for k, L in enumerate(lengths) if t < L]
            rows = []
            for k in active:
                y = ys[k] + [pad_tok] * (lengths[k] - t)
                xx = list(x[:g]) + y + list(x[g:])
                rows.append(compose(SpanSample(tuple(xx), g + 1, g + lengths[k]), self.vocab, l2r=True))
            for c in range(0, len(rows), self.batch_size):
                batch = collate(rows[c:c + self.batch_size], pad_id=self.vocab.pad_id, l2r=True)
                logp, _ = self._nograd_forward(batch)
                for r, k in enumerate(active[c:c + self.batch_size]):
                    dist = logp[r, t].copy()
                    dist[list(self.never_emit) + [self.vocab.eoi_id]] = -np.inf
                    tok = int(np.argmax(dist))
                    ys[k].append(tok)
                    lps[k] += float(logp[r, t, tok])
        return [InfillResult(tuple(y), lp, capped=False) for y, lp in zip(ys, lps)]

    def _nograd_forward(self, batch):
        with nx.no_grad_enabled():
            logp, plan = self.model.forward_train(batch)
        return logp.data, plan

    def infill(self, x: Sequence[int], g: int, cap: int | None = None, strategy: str = "xledit",
               truth_len: int | None = None) -> InfillResult:
        """Fill gap ``g``.

        Insertion-aware strategies decode greedily until EOI or ``cap``.  l2r
        strategies decode every length up to ``max(10, 2 * truth_len)`` and keep
        the lowest span perplexity (``l2r``) or the lowest whole-sequence
        perplexity after insertion (``l2r_rank``).
        """
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        if not 0 <= g <= len(x):
            raise ValueError(f"gap {g} outside 0..{len(x)}")
        if not strategy.startswith("l2r"):
            return self.greedy_insert(x, g + 1, g, cap=cap)
        if not self.l2r:
            raise ValueError("l2r strategies need a model trained in l2r mode")
        max_len = max(10, 2 * truth_len) if truth_len else (cap or self.model.config.max_decode_len)
        lengths = list(range(1, max_len + 1))
        cands = self._l2r_fixed_length(x, g, lengths)
        if strategy == "l2r":
            scores = [-c.logprob / len(c.y) for c in cands]
        else:
            ests = self.sequence_estimates([list(x[:g]) + list(c.y) + list(x[g:]) for c in cands])
            scores = [perplexity(e) for e in ests]
        best = min(range(len(cands)), key=lambda k: (scores[k], k))
        return cands[best]
