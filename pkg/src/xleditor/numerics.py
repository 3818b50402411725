"""Dense tensors with reverse-mode differentiation, Adam, and a gradient checker.

The op set is deliberately small: matmul, elementwise add/sub/mul, exp, log,
relu, masked softmax, log-softmax, layer norm, row gather (embedding), gather
along the last axis, reshape/transpose, slice/concat and sums.  Everything in
the model is expressed with these.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ContractError",
    "Tensor",
    "tensor",
    "backward",
    "no_grad_enabled",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "exp",
    "log",
    "relu",
    "softmax",
    "log_softmax",
    "layernorm",
    "embedding",
    "gather_last",
    "reshape",
    "transpose",
    "getitem",
    "pack_rows",
    "unpack_rows",
    "concat",
    "sum_all",
    "mean_all",
    "AdamState",
    "adam_init",
    "adam_step",
    "clip_grad_norm",
    "gradcheck",
    "make_rng",
    "spawn_rng",
]


class ContractError(ValueError):
    """Raised when an op is called outside its documented preconditions."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _prev: tuple = (), _backward: Callable | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._prev = _prev
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)


def tensor(data, requires_grad: bool = False, dtype=None, name: str | None = None) -> Tensor:
    arr = np.array(data, dtype=dtype) if dtype is not None else np.array(data)
    return Tensor(arr, requires_grad=requires_grad, name=name)


_STATE = threading.local()  # per-thread, so inference threads never disable training graphs


def _grad_enabled() -> bool:
    return getattr(_STATE, "grad", True)


class no_grad_enabled:
    """Context manager that stops graph recording (inference)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _STATE.grad = False
        return self

    def __exit__(self, *exc):
        _STATE.grad = self._prev
        return False


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data)
    out = Tensor(data, requires_grad=True, _prev=tuple(parents))
    out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    # never mutate in place: the same upstream array may be handed to several parents
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _seq_sum_last(x: np.ndarray) -> np.ndarray:
    # Strictly left-to-right accumulation: trailing exact zeros leave the result
    # bit-identical, which masked attention relies on.  Reducing over a leading
    # axis adds whole slices in order; when nothing else is left to vectorise over
    # numpy would switch to pairwise summation, so single rows go through cumsum.
    if x.size == x.shape[-1]:
        return np.cumsum(x, axis=-1)[..., -1:]
    return np.add.reduce(np.ascontiguousarray(np.moveaxis(x, -1, 0)), axis=0)[..., None]


# --------------------------------------------------------------------- ops


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim > 2 and b.data.ndim == 2:
        return _matmul_flat(a, b)
    out_data = np.matmul(a.data, b.data)

    def _bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if b.data.ndim > 1 else np.multiply.outer(g, b.data)
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            if a.data.ndim == 1:
                gb = np.multiply.outer(a.data, g)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, _unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), _bw)


def _matmul_flat(a: Tensor, b: Tensor) -> Tensor:
    # (..., k) @ (k, m) as one 2-D product; keeps the weight gradient a single GEMM
    lead = a.shape[:-1]
    a2 = a.data.reshape(-1, a.shape[-1])
    out = (a2 @ b.data).reshape(lead + (b.shape[1],))

    def _bw(g):
        g2 = g.reshape(-1, b.shape[1])
        if a.requires_grad:
            _accum(a, (g2 @ b.data.T).reshape(a.shape))
        if b.requires_grad:
            _accum(b, a2.T @ g2)

    return _make(out, (a, b), _bw)


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def _bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), _bw)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def _bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), _bw)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def _bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), _bw)


def scale(a: Tensor, c: float) -> Tensor:
    def _bw(g):
        _accum(a, g * c)

    return _make(a.data * a.data.dtype.type(c), (a,), _bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def _bw(g):
        _accum(a, g * out)

    return _make(out, (a,), _bw)


def log(a: Tensor) -> Tensor:
    def _bw(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), _bw)


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0

    def _bw(g):
        _accum(a, g * pos)

    return _make(np.maximum(a.data, 0), (a,), _bw)


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` (broadcastable, True = legal) removes entries; a row with no legal
    entry yields all zeros instead of NaN.
    """
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0)
    e = np.exp(z - m)
    s = _seq_sum_last(e)
    p = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def _bw(g):
        gp = g * p
        _accum(x, gp - p * _seq_sum_last(gp))

    return _make(p, (x,), _bw)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data
    m = np.max(z, axis=-1, keepdims=True)
    lse = np.log(_seq_sum_last(np.exp(z - m))) + m
    out = z - lse

    def _bw(g):
        p = np.exp(out)
        _accum(x, g - p * _seq_sum_last(g))

    return _make(out, (x,), _bw)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def _bw(g):
        if gamma.requires_grad:
            _accum(gamma, _unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            _accum(beta, _unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            gx = inv / d * (d * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            _accum(x, gx)

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), _bw)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` at integer ``ids`` (any shape)."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"embedding id out of range [0, {table.shape[0]})")

    def _bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        _accum(table, gt)

    return _make(table.data[ids], (table,), _bw)


def gather_last(x: Tensor, idx: np.ndarray) -> Tensor:
    """out[..., s, j] = x[..., s, idx[..., s, j]]; ``idx`` broadcasts over leading dims of x."""
    lead = x.shape[:-1]
    idx = np.broadcast_to(idx, lead + idx.shape[-1:])
    out = np.take_along_axis(x.data, idx, axis=-1)

    def _bw(g):
        r = x.shape[-1]
        base = (np.arange(int(np.prod(lead))) * r).reshape(lead + (1,))
        flat = (base + idx).reshape(-1)
        gx = np.bincount(flat, weights=g.reshape(-1), minlength=x.data.size)
        _accum(x, gx.reshape(x.shape).astype(x.dtype, copy=False))

    return _make(out, (x,), _bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def _bw(g):
        _accum(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), _bw)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)

    def _bw(g):
        _accum(x, np.transpose(g, inv))

    return _make(np.transpose(x.data, axes), (x,), _bw)


def getitem(x: Tensor, idx) -> Tensor:
    def _bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accum(x, gx)

    return _make(x.data[idx], (x,), _bw)


def pack_rows(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Select ``x[rows, cols]`` from a (B, N, ...) tensor; index pairs must be distinct."""
    def _bw(g):
        gx = np.zeros_like(x.data)
        gx[rows, cols] = g
        _accum(x, gx)

    return _make(x.data[rows, cols], (x,), _bw)


def unpack_rows(x: Tensor, rows: np.ndarray, cols: np.ndarray, B: int, N: int) -> Tensor:
    """Inverse of :func:`pack_rows`: scatter (M, ...) rows into zeros of shape (B, N, ...)."""
    out = np.zeros((B, N) + x.shape[1:], dtype=x.dtype)
    out[rows, cols] = x.data

    def _bw(g):
        _accum(x, g[rows, cols])

    return _make(out, (x,), _bw)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in xs], axis=axis), xs, _bw)


def sum_all(x: Tensor) -> Tensor:
    def _bw(g):
        _accum(x, np.broadcast_to(g, x.shape))

    return _make(np.asarray(x.data.sum()), (x,), _bw)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def _bw(g):
        _accum(x, np.broadcast_to(g / n, x.shape))

    return _make(np.asarray(x.data.mean()), (x,), _bw)


# ---------------------------------------------------------------- backward


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict:
    """Back-propagate from a scalar ``loss``.

    Returns a map from leaf key (``name`` when set, else ``id``) to its gradient
    array.  Leaf ``.grad`` fields are populated as a side effect; interior
    gradients are released.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    order = _topo(loss)
    loss.grad = np.ones_like(loss.data)
    leaves = {}
    seen: set[int] = set()
    for node in reversed(order):
        if node._backward is None:
            g = node.grad
            if g is not None and (id(g) in seen or not g.flags.writeable or g.base is not None):
                g = node.grad = g.copy()
            if g is not None:
                seen.add(id(g))
            leaves[node.name if node.name is not None else id(node)] = g
            continue
        if node.grad is not None:
            node._backward(node.grad)
        node.grad = None
    return leaves


# -------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict[str, Tensor], lr: float = 3e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    st = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for k, p in params.items():
        st.m[k] = np.zeros_like(p.data)
        st.v[k] = np.zeros_like(p.data)
    return st


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float | None = None) -> AdamState:
    """In-place bias-corrected Adam update; missing grads count as zero."""
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {k} {p.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        upd = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= upd.astype(p.dtype, copy=False)
    return state


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if total > max_norm and total > 0:
        f = max_norm / total
        for g in grads.values():
            g *= f
    return total


# --------------------------------------------------------------- gradcheck


def gradcheck(fn: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5,
              max_entries: int | None = None, rng: np.random.Generator | None = None,
              per_tensor: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` rebuilds the scalar loss from the (mutated in place) ``params``.  When
    ``max_entries`` is set, that many random coordinates per parameter are probed.
    By default the error is taken per coordinate; ``per_tensor`` instead compares
    the probed sub-vector of each parameter in norm, which is not swamped by
    rounding noise on coordinates whose gradient is close to zero.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = rng.choice(flat.size, size=max_entries, replace=False)
        nums, ans = [], []
        for c in coords:
            old = flat[c]
            flat[c] = old + h
            fp = float(fn().data)
            flat[c] = old - h
            fm = float(fn().data)
            flat[c] = old
            nums.append((fp - fm) / (2 * h))
            ans.append(float(ga.reshape(-1)[c]))
        nums, ans = np.array(nums), np.array(ans)
        if per_tensor:
            denom = max(np.linalg.norm(nums), np.linalg.norm(ans), 1e-6)
            worst = max(worst, float(np.linalg.norm(nums - ans)) / denom)
        else:
            denom = np.maximum(np.maximum(np.abs(nums), np.abs(ans)), 1e-6)
            worst = max(worst, float(np.max(np.abs(nums - ans) / denom, initial=0.0)))
    return worst


# --------------------------------------------------------------------- RNG


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) so streams reproduce across platforms."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent child stream identified by ``keys`` under ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=keys)))
