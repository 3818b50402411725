"""Two-stream relative-attention transformer over composed insertion rows.

The content stream runs over every position; the query stream runs only over
span slots and predicts the token sitting in each slot without seeing it.
Both streams share weights.  The attention score between a query state ``e_i``
and a key state ``e_j`` at effective offset ``d`` is

    (W_q e_i + u) . (W_kE e_j)  +  (W_q e_i + v) . (W_kR R_d)

scaled by ``1/sqrt(d_head)``, with ``R_d`` a fixed sinusoid vector.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .encoding import ComposedBatch, Vocabulary
from .numerics import Tensor
from .positional import (OffsetMatrix, SpanLayout, build_offset_matrix, full_offset_matrix,
                         sinusoid_table)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 256
    d_ff: int = 512
    max_offset: int = 256
    dropout: float = 0.1
    n_styles: int = 0
    l2r: bool = False
    max_decode_len: int = 24

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if min(self.vocab_size, self.n_layers, self.n_heads, self.d_model, self.d_ff, self.max_offset) < 1:
            raise ValueError("model sizes must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            k, v = line.split("=", 1)
            if k not in types:
                raise ValueError(f"unknown model config key {k!r}")
            t = types[k]
            if t in ("bool", bool):
                kw[k] = v == "True"
            elif t in ("float", float):
                kw[k] = float(v)
            else:
                kw[k] = int(v)
        return cls(**kw)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, H, dh, V = cfg.d_model, cfg.n_heads, cfg.d_head, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (V, d),
        "out_bias": (V,),
        "query_init": (d,),
        "u": (H, dh),
        "v": (H, dh),
    }
    for k in range(cfg.n_layers):
        p = f"l{k}."
        for w in ("wq", "wk", "wr", "wv", "wo"):
            shapes[p + w] = (d, d)
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "ff.w1": (d, cfg.d_ff), p + "ff.b1": (cfg.d_ff,),
            p + "ff.w2": (cfg.d_ff, d), p + "ff.b2": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
        })
    if cfg.n_styles > 0:
        shapes.update({"cls.w1": (d, d), "cls.b1": (d,), "cls.w2": (d, cfg.n_styles),
                       "cls.b2": (cfg.n_styles,)})
    return shapes


CLASSIFIER_PARAMS = ("cls.w1", "cls.b1", "cls.w2", "cls.b2")


def _is_bias(name: str) -> bool:
    return name.endswith((".b", ".b1", ".b2")) or name in ("out_bias", "u", "v")


def init_params(cfg: ModelConfig, rng: np.random.Generator | None = None, std: float = 0.02,
                dtype=np.float32, zero: bool = False) -> dict[str, Tensor]:
    """Truncated-normal weights, zero biases, unit layer-norm gains.

    ``zero=True`` gives the all-zero model (uniform outputs everywhere).
    """
    params = {}
    for name, shape in param_shapes(cfg).items():
        if zero:
            arr = np.zeros(shape)
        elif name.endswith(".g"):
            arr = np.ones(shape)
        elif _is_bias(name):
            arr = np.zeros(shape)
        else:
            arr = np.clip(rng.standard_normal(shape), -2.0, 2.0) * std
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


@dataclass
class _Attn:
    idx: np.ndarray  # (B, S, N) row index into the offset table
    mask: np.ndarray  # (B, S, N) bool


@dataclass
class _Rows:
    """Where the packed (M, d) rows of a stream sit in its padded (B, N) grid."""

    rows: np.ndarray
    cols: np.ndarray
    B: int
    N: int

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "_Rows":
        r, c = np.nonzero(mask)
        return cls(r, c, mask.shape[0], mask.shape[1])

    @classmethod
    def full(cls, B: int, N: int) -> "_Rows":
        return cls.from_mask(np.ones((B, N), dtype=bool))

    def unpack(self, x: Tensor) -> Tensor:
        return nx.unpack_rows(x, self.rows, self.cols, self.B, self.N)

    def pack(self, x: Tensor) -> Tensor:
        return nx.pack_rows(x, self.rows, self.cols)


@dataclass
class BatchPlan:
    content: _Attn
    query: _Attn
    qpos: np.ndarray  # (B, S) 0-based positions of span slots
    qvalid: np.ndarray  # (B, S) bool
    targets: np.ndarray  # (B, S) token ids in those slots
    K: int  # offset table covers -K..K


class XLEditorModel:
    """Parameters plus the forward computations that use them."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        missing = set(param_shapes(config)) - set(params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0, std: float = 0.02, dtype=np.float32,
               zero: bool = False) -> "XLEditorModel":
        rng = nx.make_rng(seed)
        return cls(config, init_params(config, rng, std=std, dtype=dtype, zero=zero))

    @property
    def dtype(self):
        return self.params["tok_emb"].dtype

    def astype(self, dtype) -> "XLEditorModel":
        return XLEditorModel(self.config, {k: Tensor(p.data.astype(dtype), requires_grad=True, name=k)
                                           for k, p in self.params.items()})

    def copy(self) -> "XLEditorModel":
        return self.astype(self.dtype)

    # ------------------------------------------------------------ planning

    def plan(self, batch: ComposedBatch) -> BatchPlan:
        cfg = self.config
        B, n = batch.tokens.shape
        K = max(1, min(cfg.max_offset, n))
        offs = np.zeros((B, n, n), dtype=np.int64)
        legal = np.zeros((B, n, n), dtype=bool)
        for r, lay in enumerate(batch.layouts):
            om = build_offset_matrix(lay, l2r=batch.l2r or cfg.l2r, max_offset=cfg.max_offset)
            T = lay.total_len
            offs[r, :T, :T] = om.offsets
            legal[r, :T, :T] = om.legal
        S = max(lay.b - lay.a + 1 for lay in batch.layouts)
        qpos = np.zeros((B, S), dtype=np.int64)
        qvalid = np.zeros((B, S), dtype=bool)
        for r, lay in enumerate(batch.layouts):
            k = lay.b - lay.a + 1
            qpos[r, :k] = np.arange(lay.a - 1, lay.b)
            qvalid[r, :k] = True
        rows = np.arange(B)[:, None]
        q_offs = offs[rows, qpos]
        q_legal = legal[rows, qpos] & qvalid[:, :, None]
        q_legal &= np.arange(n)[None, None, :] != qpos[:, :, None]
        targets = np.where(qvalid, batch.tokens[rows, qpos], 0)
        return BatchPlan(content=_Attn(offs + K, legal), query=_Attn(q_offs + K, q_legal),
                         qpos=qpos, qvalid=qvalid, targets=targets, K=K)

    # --------------------------------------------------------- primitives

    def _rel_keys(self, layer: int, K: int) -> Tensor:
        """W_kR R_d for d in -K..K, shape (2K+1, H, dh)."""
        cfg = self.config
        R = Tensor(sinusoid_table(K, cfg.d_model, dtype=self.dtype))
        rk = nx.matmul(R, self.params[f"l{layer}.wr"])
        return nx.reshape(rk, (2 * K + 1, cfg.n_heads, cfg.d_head))

    def key_values(self, layer: int, hkv: Tensor, where: _Rows) -> tuple[Tensor, Tensor]:
        """Key heads transposed for scoring (B,H,dh,N) and value heads (B,H,N,dh).

        ``hkv`` holds packed content states.  Both streams of a layer read the
        same content states, so this is computed once per layer.
        """
        cfg, P = self.config, self.params
        if hkv.shape[-1] != cfg.d_model:
            raise ValueError("key/value input width does not match d_model")
        B, N = where.B, where.N
        H, dh = cfg.n_heads, cfg.d_head
        p = f"l{layer}."
        k = nx.reshape(where.unpack(nx.matmul(hkv, P[p + "wk"])), (B, N, H, dh))
        v = nx.reshape(where.unpack(nx.matmul(hkv, P[p + "wv"])), (B, N, H, dh))
        return nx.transpose(k, (0, 2, 3, 1)), nx.transpose(v, (0, 2, 1, 3))

    def attention_scores(self, layer: int, xq: Tensor, where: _Rows, kt: Tensor, idx: np.ndarray,
                         rk: Tensor) -> Tensor:
        """Scaled relative scores (B,H,S,N) of packed queries ``xq`` against key heads ``kt``."""
        cfg, P = self.config, self.params
        B, S = where.B, where.N
        N = kt.shape[-1]
        if xq.shape[-1] != cfg.d_model or idx.shape != (B, S, N):
            raise ValueError("attention input shapes do not match")
        H, dh = cfg.n_heads, cfg.d_head
        q = nx.reshape(where.unpack(nx.matmul(xq, P[f"l{layer}.wq"])), (B, S, H, dh))
        qu = nx.transpose(nx.add(q, P["u"]), (0, 2, 1, 3))
        qv = nx.transpose(nx.add(q, P["v"]), (0, 2, 1, 3))
        content = nx.matmul(qu, kt)
        pos_full = nx.matmul(qv, nx.transpose(rk, (1, 2, 0)))
        position = nx.gather_last(pos_full, idx[:, None, :, :])
        return nx.scale(nx.add(content, position), 1.0 / math.sqrt(dh))

    def _dropout(self, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        p = self.config.dropout
        if rng is None or p <= 0:
            return x
        keep = (rng.random(x.shape, dtype=np.float32) >= p).astype(x.dtype) / x.dtype.type(1 - p)
        return nx.mul(x, keep)

    def _block(self, layer: int, xq: Tensor, where: _Rows, kv: tuple[Tensor, Tensor], att: _Attn,
               rk: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        """One post-LN layer over packed query rows ``xq`` (M, d)."""
        P = self.params
        p = f"l{layer}."
        d = self.config.d_model
        kt, v = kv
        scores = self.attention_scores(layer, xq, where, kt, att.idx, rk)
        probs = nx.softmax(scores, att.mask[:, None, :, :])
        o = nx.matmul(probs, v)
        o = where.pack(nx.reshape(nx.transpose(o, (0, 2, 1, 3)), (where.B, where.N, d)))
        o = self._dropout(nx.matmul(o, P[p + "wo"]), rng)
        h = nx.layernorm(nx.add(xq, o), P[p + "ln1.g"], P[p + "ln1.b"])
        f = nx.relu(nx.add(nx.matmul(h, P[p + "ff.w1"]), P[p + "ff.b1"]))
        f = self._dropout(nx.add(nx.matmul(f, P[p + "ff.w2"]), P[p + "ff.b2"]), rng)
        return nx.layernorm(nx.add(h, f), P[p + "ln2.g"], P[p + "ln2.b"])

    def _query_init(self, M: int) -> Tensor:
        zeros = Tensor(np.zeros((M, self.config.d_model), dtype=self.dtype))
        return nx.add(zeros, self.params["query_init"])

    def _logits(self, g: Tensor) -> Tensor:
        P = self.params
        return nx.add(nx.matmul(g, nx.transpose(P["tok_emb"], (1, 0))), P["out_bias"])

    # -------------------------------------------------------------- forward

    def forward_train(self, batch: ComposedBatch, rng: np.random.Generator | None = None,
                      plan: BatchPlan | None = None) -> tuple[Tensor, BatchPlan]:
        """Log-probabilities (B, S, V) at every span slot, teacher-forced in one pass.

        ``rng`` enables dropout.  Slot ``s`` of row ``r`` is position
        ``plan.qpos[r, s]``; invalid (padding) slots are flagged in ``plan.qvalid``.
        """
        plan = plan or self.plan(batch)
        B, n = batch.tokens.shape
        content = _Rows.from_mask(np.arange(n)[None, :] < batch.lengths[:, None])
        query = _Rows.from_mask(plan.qvalid)
        h = self._dropout(nx.embedding(self.params["tok_emb"], batch.tokens[content.rows, content.cols]), rng)
        g = self._query_init(len(query.rows))
        for layer in range(self.config.n_layers):
            rk = self._rel_keys(layer, plan.K)
            kv = self.key_values(layer, h, content)
            h_next = self._block(layer, h, content, kv, plan.content, rk, rng)
            g = self._block(layer, g, query, kv, plan.query, rk, rng)
            h = h_next
        return query.unpack(nx.log_softmax(self._logits(g))), plan

    def span_logprobs(self, batch: ComposedBatch) -> tuple[np.ndarray, np.ndarray]:
        """Per-slot log-probability of the token actually in each slot, and the slot mask."""
        with nx.no_grad_enabled():
            logp, plan = self.forward_train(batch)
        picked = np.take_along_axis(logp.data, plan.targets[..., None], axis=-1)[..., 0]
        return np.where(plan.qvalid, picked, 0.0), plan.qvalid

    def content_states(self, tokens: np.ndarray, offsets: OffsetMatrix) -> list[np.ndarray]:
        """Content stream over one row restricted by ``offsets``; returns layer inputs 0..L."""
        cfg = self.config
        n = len(tokens)
        K = max(1, min(cfg.max_offset, n + 1))
        att = _Attn(idx=(offsets.offsets + K)[None], mask=offsets.legal[None])
        where = _Rows.full(1, n)
        with nx.no_grad_enabled():
            h = nx.embedding(self.params["tok_emb"], np.asarray(tokens))
            states = [h.data]
            for layer in range(cfg.n_layers):
                h = self._block(layer, h, where, self.key_values(layer, h, where), att, self._rel_keys(layer, K))
                states.append(h.data)
        return states

    # ------------------------------------------------------------- classify

    def _encode_plain(self, rows: Sequence[Sequence[int]], rng=None) -> Tensor:
        """Top-layer CLS state of each ``x + [CLS]`` under full bidirectional attention."""
        vocab_cls = 3
        n = max(len(r) for r in rows) + 1
        B = len(rows)
        tokens = np.zeros((B, n), dtype=np.int64)
        offs = np.zeros((B, n, n), dtype=np.int64)
        legal = np.zeros((B, n, n), dtype=bool)
        last = np.zeros(B, dtype=np.int64)
        for r, x in enumerate(rows):
            T = len(x) + 1
            tokens[r, :T] = list(x) + [vocab_cls]
            om = full_offset_matrix(T, self.config.max_offset)
            offs[r, :T, :T] = om.offsets
            legal[r, :T, :T] = om.legal
            last[r] = T - 1
        K = max(1, min(self.config.max_offset, n))
        att = _Attn(idx=offs + K, mask=legal)
        where = _Rows.from_mask(np.arange(n)[None, :] <= last[:, None])
        h = self._dropout(nx.embedding(self.params["tok_emb"], tokens[where.rows, where.cols]), rng)
        for layer in range(self.config.n_layers):
            h = self._block(layer, h, where, self.key_values(layer, h, where), att, self._rel_keys(layer, K), rng)
        # packed rows are row-major, so each row's CLS is the row's last packed entry
        ends = np.cumsum(last + 1) - 1
        return nx.getitem(h, ends)

    def style_logits(self, rows: Sequence[Sequence[int]], rng=None) -> Tensor:
        if self.config.n_styles < 1:
            raise ValueError("model has no style classifier head")
        if any(len(x) == 0 for x in rows):
            raise ValueError("classify_style needs non-empty sequences")
        P = self.params
        c = self._encode_plain(rows, rng)
        z = nx.relu(nx.add(nx.matmul(c, P["cls.w1"]), P["cls.b1"]))
        return nx.add(nx.matmul(z, P["cls.w2"]), P["cls.b2"])

    def classify_style(self, x: Sequence[int]) -> np.ndarray:
        """Distribution over the configured styles for one sequence."""
        with nx.no_grad_enabled():
            lp = nx.log_softmax(self.style_logits([list(x)]))
        return np.exp(lp.data[0])

    def classify_styles(self, rows: Sequence[Sequence[int]], batch_size: int = 64) -> np.ndarray:
        out = []
        with nx.no_grad_enabled():
            for k in range(0, len(rows), batch_size):
                lp = nx.log_softmax(self.style_logits([list(r) for r in rows[k:k + batch_size]]))
                out.append(np.exp(lp.data))
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.n_styles))


# ------------------------------------------------------- incremental decoding


class DecodeCapError(RuntimeError):
    """Raised when a decode session is pushed past its length cap."""


class ContextCache:
    """Per-layer content states of the contexts (left, right, style) of one insertion.

    Context positions never attend to span slots, so these states are reused
    unchanged by every decoding step.
    """

    def __init__(self, model: XLEditorModel, left: Sequence[int], right: Sequence[int],
                 vocab_eoi: int = 2, style_token: int | None = None, cap: int | None = None):
        if model.config.l2r:
            raise ValueError("context caching needs the insertion-aware offsets (l2r is off)")
        self.model = model
        self.left = list(left)
        self.right = list(right) + ([style_token] if style_token is not None else [])
        self.eoi = vocab_eoi
        self.cap = model.config.max_decode_len if cap is None else cap
        self.a = len(self.left) + 1
        n_ctx = len(self.left) + len(self.right)
        z = self.left + [self.eoi] + self.right
        om = build_offset_matrix(SpanLayout(len(z), self.a, self.a), max_offset=model.config.max_offset)
        ctx = [p for p in range(len(z)) if p != self.a - 1]
        sub = OffsetMatrix(om.offsets[np.ix_(ctx, ctx)], om.legal[np.ix_(ctx, ctx)])
        self.states = model.content_states([z[p] for p in ctx], sub) if n_ctx else \
            [np.zeros((0, model.config.d_model), dtype=model.dtype)] * (model.config.n_layers + 1)
        self.K = max(1, min(model.config.max_offset, n_ctx + self.cap + 2))
        with nx.no_grad_enabled():
            self.rel_keys = [model._rel_keys(layer, self.K) for layer in range(model.config.n_layers)]


class DecodeSession:
    """Grows the insertion one token at a time on top of a :class:`ContextCache`."""

    def __init__(self, cache: ContextCache):
        self.cache = cache
        self.tokens: list[int] = []
        self.span_states: list[list[np.ndarray]] = [[] for _ in range(cache.model.config.n_layers + 1)]

    def _row(self, with_self: bool) -> tuple[np.ndarray, np.ndarray]:
        """Offset-table indices and legality for the current slot against every key.

        The layout parks the EOI at the current slot; by construction the offsets
        to every key are the same for any longer span.  Keys are ordered left,
        span so far (plus the slot itself for the content stream), right.
        """
        c = self.cache
        slot = len(self.tokens)
        L, R = len(c.left), len(c.right)
        b = c.a + slot
        om = build_offset_matrix(SpanLayout(b + R, c.a, b), max_offset=c.model.config.max_offset)
        i = b - 1
        n_span = slot + 1 if with_self else slot
        keys = list(range(L + n_span)) + list(range(b, b + R))
        return om.offsets[i, keys] + c.K, om.legal[i, keys]

    def _step(self, x0: np.ndarray, with_self: bool) -> list[np.ndarray]:
        c, m = self.cache, self.cache.model
        idx, legal = self._row(with_self)
        att = _Attn(idx=idx[None, None, :], mask=legal[None, None, :])
        L = len(c.left)
        outs = [x0]
        one = _Rows.full(1, 1)
        with nx.no_grad_enabled():
            x = Tensor(x0[None, :])
            for layer in range(m.config.n_layers):
                parts = [c.states[layer][:L]] + [s[None, :] for s in self.span_states[layer]]
                if with_self:
                    parts.append(outs[layer][None, :])
                parts.append(c.states[layer][L:])
                keys = np.concatenate(parts, axis=0)
                kv = m.key_values(layer, Tensor(keys), _Rows.full(1, len(keys)))
                x = m._block(layer, x, one, kv, att, c.rel_keys[layer])
                outs.append(x.data[0])
        return outs

    def next_logprobs(self) -> np.ndarray:
        """Log-distribution over the vocabulary for the next span slot."""
        m = self.cache.model
        top = self._step(m.params["query_init"].data, with_self=False)[-1]
        with nx.no_grad_enabled():
            lp = nx.log_softmax(m._logits(Tensor(top[None, :])))
        return lp.data[0]

    def append(self, token: int) -> None:
        """Commit ``token`` to the current slot and cache its content states."""
        if len(self.tokens) >= self.cache.cap:
            raise DecodeCapError(f"insertion already at the cap of {self.cache.cap} tokens")
        outs = self._step(self.cache.model.params["tok_emb"].data[token], with_self=True)
        self.tokens.append(int(token))
        for layer, s in enumerate(outs):
            self.span_states[layer].append(s)


def decode_incremental(session: DecodeSession, mode: str = "greedy", bias: np.ndarray | None = None,
                       rng: np.random.Generator | None = None,
                       forbid: Sequence[int] = ()) -> tuple[np.ndarray, int]:
    """One decoding step: next-token log-distribution and the chosen token.

    ``biased`` picks the argmax of ``bias`` for the first token only, then
    behaves greedily.  Tokens in ``forbid`` are never chosen.
    """
    logp = session.next_logprobs()
    score = logp.copy()
    if mode == "biased" and not session.tokens:
        if bias is None:
            raise ValueError("biased mode needs a bias vector")
        score = np.asarray(bias, dtype=np.float64).copy()
    for t in forbid:
        score[t] = -np.inf
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        p = np.exp(score - np.max(score))
        p /= p.sum()
        choice = int(rng.choice(len(p), p=p))
    elif mode in ("greedy", "biased"):
        choice = int(np.argmax(score))
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    return logp, choice


# ---------------------------------------------------------------- checkpoints

MAGIC = b"XLED"
VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def save_checkpoint(model: XLEditorModel, path: str | Path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg = model.config.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    names = list(param_shapes(model.config))
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f4")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> XLEditorModel:
    """Read a checkpoint; with ``expect``, every tensor must match that config's shapes."""
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"{path}: bad magic (not an XLED checkpoint)")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {VERSION}")
    try:
        cfg = ModelConfig.from_text(r.take(r.u32()).decode("utf-8"))
    except (ValueError, TypeError) as e:  # UnicodeDecodeError is a ValueError
        raise CheckpointError(f"{path}: unreadable model config: {e}") from e
    shapes = param_shapes(expect if expect is not None else cfg)
    params = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        if name not in shapes:
            raise ShapeMismatchError(f"tensor {name!r} not expected by the model config")
        if tuple(dims) != shapes[name]:
            raise ShapeMismatchError(f"tensor {name!r} has shape {tuple(dims)}, expected {shapes[name]}")
        params[name] = Tensor(arr, requires_grad=True, name=name)
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes")
    missing = set(shapes) - set(params)
    if missing:
        raise ShapeMismatchError(f"checkpoint lacks tensors {sorted(missing)}")
    return XLEditorModel(expect if expect is not None else cfg, params)


def vocab_path_for(checkpoint: str | Path) -> Path:
    return Path(str(checkpoint) + ".vocab")


def save_model_bundle(model: XLEditorModel, vocab: Vocabulary, path: str | Path) -> None:
    save_checkpoint(model, path)
    vocab.save(vocab_path_for(path))


def load_model_bundle(path: str | Path) -> tuple[XLEditorModel, Vocabulary]:
    model = load_checkpoint(path)
    vocab = Vocabulary.load(vocab_path_for(path))
    if len(vocab) != model.config.vocab_size:
        raise CheckpointError(f"vocabulary size {len(vocab)} does not match checkpoint {model.config.vocab_size}")
    return model, vocab
