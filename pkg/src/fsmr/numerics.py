"""Dense float64 tensors with reverse-mode gradients, plus the optimizer and
gradient-check oracle everything else builds on.

Graph convention: every op returns a fresh ``Tensor``. When no input
participates in gradients the result is a plain constant (no graph node), so
evaluation-mode forwards allocate no tape at all. Otherwise the result node
stores its parent tensors and a closure mapping the incoming gradient to
per-parent gradients. ``backward`` walks the graph in reverse topological
order and accumulates with ``+=`` at fan-in.

Shapes are kept deliberately small: scalars (), vectors (k,), matrices (r, c).
Broadcasting exists only where the model needs it (bias rows, scalar shifts).
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass
from operator import attrgetter

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

Array = np.ndarray

# Creation counter: a node's parents always carry smaller values, so ascending
# order is topological and the reverse walk can use it directly.
_SEQ = itertools.count()


class Tensor:
    """A float64 array plus its gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._seq = next(_SEQ)

    @staticmethod
    def _node(data: Array, parents: tuple["Tensor", ...], backward) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = data
        t.requires_grad = True
        t.grad = None
        t._parents = parents
        t._backward = backward
        t._seq = next(_SEQ)
        return t

    @staticmethod
    def _const(data: Array) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._seq = next(_SEQ)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Small amount of operator sugar; the model code mostly calls the named ops.
    def __add__(self, other):
        return shift(self, other) if isinstance(other, (int, float)) else add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return scale(self, other) if isinstance(other, (int, float)) else mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return self + (-other) if isinstance(other, Tensor) else shift(self, -other)

    def __rsub__(self, other):
        return shift(scale(self, -1.0), other)


def tensor(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _grad_tracked(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class GradTape:
    """Topologically ordered record of the op nodes a root depends on.

    ``order`` holds interior nodes only (leaves receive gradients but dispatch
    none), sorted parents-first by creation sequence. The reverse walk sees
    each node's fully accumulated gradient before dispatching it.
    """

    def __init__(self, root: Tensor):
        nodes: list[Tensor] = []
        if root._backward is not None:
            nodes.append(root)
        visited = {id(root)}
        stack = [root]
        while stack:
            for p in stack.pop()._parents:
                if p._backward is not None and id(p) not in visited:
                    visited.add(id(p))
                    stack.append(p)
                    nodes.append(p)
        nodes.sort(key=attrgetter("_seq"))
        self.order = nodes

    def run(self) -> None:
        for node in reversed(self.order):
            g = node.grad
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pg.copy()
                else:
                    parent.grad += pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` for every tracked node."""
    if loss.data.ndim != 0:
        raise NumericError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.array(1.0)
    GradTape(loss).run()


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise & arithmetic
# ---------------------------------------------------------------------------


def _bwd_add_same(g):
    return g, g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    if not (a.requires_grad or b.requires_grad):
        return Tensor._const(data)
    ash, bsh = a.data.shape, b.data.shape
    if ash == bsh:
        return Tensor._node(data, (a, b), _bwd_add_same)

    def bwd(g, ash=ash, bsh=bsh):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return Tensor._node(data, (a, b), bwd)


def add_n(parts: list[Tensor]) -> Tensor:
    data = parts[0].data
    for p in parts[1:]:
        data = data + p.data
    if not _grad_tracked(*parts):
        return Tensor._const(data)

    def bwd(g, k=len(parts)):
        return (g,) * k

    return Tensor._node(data, tuple(parts), bwd)


def shift(a: Tensor, c: float) -> Tensor:
    data = a.data + c
    if not a.requires_grad:
        return Tensor._const(data)
    return Tensor._node(data, (a,), lambda g: (g,))


def scale(a: Tensor, c: float) -> Tensor:
    data = a.data * c
    if not a.requires_grad:
        return Tensor._const(data)
    return Tensor._node(data, (a,), lambda g, c=c: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    if not _grad_tracked(a, b):
        return Tensor._const(data)

    def bwd(g, ad=a.data, bd=b.data):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._node(data, (a, b), bwd)


_TANH_HI = float(np.nextafter(1.0, 0.0))


def tanh(x: Tensor) -> Tensor:
    # Clamped into the open interval: float64 tanh rounds to exactly +-1 for
    # |x| > ~19, which would break the strict (-1, 1) output contract.
    out = np.clip(np.tanh(x.data), -_TANH_HI, _TANH_HI)
    if not x.requires_grad:
        return Tensor._const(out)
    return Tensor._node(out, (x,), lambda g, o=out: (g * (1.0 - o * o),))


_SIG_LO = 1e-300
_SIG_HI = float(np.nextafter(1.0, 0.0))


def sigmoid(x: Tensor) -> Tensor:
    # Clamped to the largest open sub-interval of (0, 1) representable in
    # float64 so downstream log() never sees exactly 0 or 1.
    xd = x.data
    with np.errstate(over="ignore", invalid="ignore"):
        pos = 1.0 / (1.0 + np.exp(-xd))
        neg = np.exp(xd) / (1.0 + np.exp(xd))
    out = np.where(xd >= 0, pos, neg)
    out = np.clip(out, _SIG_LO, _SIG_HI)
    if not x.requires_grad:
        return Tensor._const(out)
    return Tensor._node(out, (x,), lambda g, o=out: (g * o * (1.0 - o),))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    if not x.requires_grad:
        return Tensor._const(out)
    return Tensor._node(out, (x,), lambda g, xd=x.data: (g * (xd > 0),))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log requires strictly positive input")
    out = np.log(x.data)
    if not x.requires_grad:
        return Tensor._const(out)
    return Tensor._node(out, (x,), lambda g, xd=x.data: (g / xd,))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul expects (r,k) x (k,c); got {ad.shape} x {bd.shape}")
    data = ad @ bd
    if not _grad_tracked(a, b):
        return Tensor._const(data)

    def bwd(g, ad=ad, bd=bd):
        return g @ bd.T, ad.T @ g

    return Tensor._node(data, (a, b), bwd)


def dot(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape != bd.shape or ad.ndim != 1:
        raise ShapeError(f"dot expects equal-length vectors; got {ad.shape} and {bd.shape}")
    data = ad @ bd
    if not _grad_tracked(a, b):
        return Tensor._const(np.asarray(data))

    def bwd(g, ad=ad, bd=bd):
        return g * bd, g * ad

    return Tensor._node(np.asarray(data), (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b). x may be a (n,in) matrix or an (in,) vector; w is (in,out)."""
    xd, wd = x.data, w.data
    if xd.shape[-1] != wd.shape[0]:
        raise ShapeError(f"linear: input width {xd.shape} does not match weight {wd.shape}")
    data = xd @ wd
    if b is not None:
        data = data + b.data
    tracked = _grad_tracked(x, w) or (b is not None and b.requires_grad)
    if not tracked:
        return Tensor._const(data)

    if b is None:

        def bwd(g, xd=xd, wd=wd):
            if xd.ndim == 1:
                return g @ wd.T, np.outer(xd, g)
            return g @ wd.T, xd.T @ g

        return Tensor._node(data, (x, w), bwd)

    def bwd_b(g, xd=xd, wd=wd):
        if xd.ndim == 1:
            return g @ wd.T, np.outer(xd, g), g
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return Tensor._node(data, (x, w, b), bwd_b)


# ---------------------------------------------------------------------------
# reductions and row structure
# ---------------------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum())
    if not x.requires_grad:
        return Tensor._const(data)
    return Tensor._node(data, (x,), lambda g, sh=x.data.shape: (np.broadcast_to(g, sh),))


def mean_over_rows(x: Tensor) -> Tensor:
    """Column-wise mean of an (r,c) matrix; r must be >= 1."""
    xd = x.data
    if xd.ndim != 2 or xd.shape[0] < 1:
        raise NumericError(f"mean_over_rows needs a non-empty matrix, got shape {xd.shape}")
    data = xd.mean(axis=0)
    if not x.requires_grad:
        return Tensor._const(data)
    r = xd.shape[0]
    return Tensor._node(data, (x,), lambda g, r=r, sh=xd.shape: (np.broadcast_to(g / r, sh),))


def max_over_rows(x: Tensor) -> Tensor:
    """Column-wise max; ties route the gradient to the first maximal row."""
    xd = x.data
    if xd.ndim != 2 or xd.shape[0] < 1:
        raise NumericError(f"max_over_rows needs a non-empty matrix, got shape {xd.shape}")
    idx = xd.argmax(axis=0)
    data = xd[idx, np.arange(xd.shape[1])]
    if not x.requires_grad:
        return Tensor._const(data)

    def bwd(g, idx=idx, sh=xd.shape):
        gx = np.zeros(sh)
        gx[idx, np.arange(sh[1])] = g
        return (gx,)

    return Tensor._node(data, (x,), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-stochastic softmax of an (r,c) matrix, max-subtracted for stability."""
    xd = x.data
    if xd.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {xd.shape}")
    e = np.exp(xd - xd.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)
    if not x.requires_grad:
        return Tensor._const(s)

    def bwd(g, s=s):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Tensor._node(s, (x,), bwd)


def logsumexp(x: Tensor) -> Tensor:
    """log(sum(exp(x))) of a vector, computed via max subtraction."""
    xd = x.data
    m = xd.max()
    e = np.exp(xd - m)
    z = e.sum()
    data = np.asarray(m + math.log(z))
    if not x.requires_grad:
        return Tensor._const(data)
    soft = e / z
    return Tensor._node(data, (x,), lambda g, soft=soft: (g * soft,))


def pick(x: Tensor, i: int) -> Tensor:
    data = np.asarray(x.data[i])
    if not x.requires_grad:
        return Tensor._const(data)

    def bwd(g, i=i, sh=x.data.shape):
        gx = np.zeros(sh)
        gx[i] = g
        return (gx,)

    return Tensor._node(data, (x,), bwd)


def row(x: Tensor, i: int) -> Tensor:
    data = x.data[i].copy()
    if not x.requires_grad:
        return Tensor._const(data)

    def bwd(g, i=i, sh=x.data.shape):
        gx = np.zeros(sh)
        gx[i] = g
        return (gx,)

    return Tensor._node(data, (x,), bwd)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    data = x.data[start:stop].copy()
    if not x.requires_grad:
        return Tensor._const(data)

    def bwd(g, start=start, stop=stop, sh=x.data.shape):
        gx = np.zeros(sh)
        gx[start:stop] = g
        return (gx,)

    return Tensor._node(data, (x,), bwd)


def _as_row_matrix(t: Tensor) -> Array:
    return t.data.reshape(1, -1) if t.data.ndim == 1 else t.data


def concat_rows(parts: list[Tensor]) -> Tensor:
    """Stack parts along axis 0. Vectors count as single rows."""
    mats = [_as_row_matrix(p) for p in parts]
    width = mats[0].shape[1]
    for m in mats:
        if m.shape[1] != width:
            raise ShapeError(f"concat_rows: widths differ ({m.shape[1]} vs {width})")
    data = np.concatenate(mats, axis=0)
    if not _grad_tracked(*parts):
        return Tensor._const(data)
    sizes = [m.shape[0] for m in mats]
    vec = [p.data.ndim == 1 for p in parts]

    def bwd(g, sizes=sizes, vec=vec):
        out = []
        off = 0
        for k, is_vec in zip(sizes, vec):
            piece = g[off : off + k]
            out.append(piece[0] if is_vec else piece)
            off += k
        return tuple(out)

    return Tensor._node(data, tuple(parts), bwd)


def concat_vec(parts: list[Tensor]) -> Tensor:
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat_vec expects vectors, got shape {p.data.shape}")
    data = np.concatenate([p.data for p in parts])
    if not _grad_tracked(*parts):
        return Tensor._const(data)
    sizes = [p.data.shape[0] for p in parts]

    def bwd(g, sizes=sizes):
        out = []
        off = 0
        for k in sizes:
            out.append(g[off : off + k])
            off += k
        return tuple(out)

    return Tensor._node(data, tuple(parts), bwd)


def replace_rows(dst: Tensor, src: Tensor, pairs: list[tuple[int, int]]) -> Tensor:
    """Copy of ``dst`` with row di := src row si for each (di, si) pair.

    All sources are read from the original ``src``; when several pairs name the
    same destination row, the first pair in list order wins.
    """
    dd, sd = dst.data, src.data
    seen: set[int] = set()
    applied: list[tuple[int, int]] = []
    for di, si in pairs:
        if not (0 <= di < dd.shape[0]) or not (0 <= si < sd.shape[0]):
            raise ShapeError(f"replace_rows: pair ({di},{si}) out of range for {dd.shape} <- {sd.shape}")
        if di in seen:
            continue
        seen.add(di)
        applied.append((di, si))
    data = dd.copy()
    for di, si in applied:
        data[di] = sd[si]
    if not _grad_tracked(dst, src):
        return Tensor._const(data)

    def bwd(g, applied=applied, dsh=dd.shape, ssh=sd.shape):
        gd = g.copy()
        gs = np.zeros(ssh)
        for di, si in applied:
            gd[di] = 0.0
            gs[si] += g[di]
        return gd, gs

    return Tensor._node(data, (dst, src), bwd)


def embedding(table: Tensor, ids) -> Tensor:
    idx = np.asarray(ids, dtype=np.intp)
    data = table.data[idx] if idx.size else np.zeros((0, table.data.shape[1]))
    if not table.requires_grad:
        return Tensor._const(data)

    def bwd(g, idx=idx, sh=table.data.shape):
        gt = np.zeros(sh)
        if idx.size:
            np.add.at(gt, idx, g)
        return (gt,)

    return Tensor._node(data, (table,), bwd)


def embedding_with_pos(table: Tensor, pos: Tensor, ids) -> Tensor:
    """Row t of the result is table[ids[t]] + pos[t]."""
    idx = np.asarray(ids, dtype=np.intp)
    n = idx.size
    d = table.data.shape[1]
    data = (table.data[idx] + pos.data[:n]) if n else np.zeros((0, d))
    if not _grad_tracked(table, pos):
        return Tensor._const(data)

    def bwd(g, idx=idx, tsh=table.data.shape, psh=pos.data.shape):
        gt = np.zeros(tsh)
        gp = np.zeros(psh)
        if idx.size:
            np.add.at(gt, idx, g)
            gp[: idx.size] = g
        return gt, gp

    return Tensor._node(data, (table, pos), bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    data = x.data * mask
    if not x.requires_grad:
        return Tensor._const(data)
    return Tensor._node(data, (x,), lambda g, mask=mask: (g * mask,))


# ---------------------------------------------------------------------------
# fused transformer blocks (single tape nodes; hand-written backwards)
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization of an (L,d) matrix: (x - mean)/std * gamma + beta."""
    xd = x.data
    d = xd.shape[1]
    inv_d = 1.0 / d
    mu = xd.sum(axis=1, keepdims=True) * inv_d
    xc = xd - mu
    var = (xc * xc).sum(axis=1, keepdims=True) * inv_d
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    data = xn * gamma.data + beta.data
    if not (x.requires_grad or gamma.requires_grad or beta.requires_grad):
        return Tensor._const(data)

    def bwd(g, xn=xn, inv=inv, gd=gamma.data, inv_d=inv_d):
        g_gamma = (g * xn).sum(axis=0)
        g_beta = g.sum(axis=0)
        gxn = g * gd
        gx = inv * (
            gxn
            - gxn.sum(axis=1, keepdims=True) * inv_d
            - xn * ((gxn * xn).sum(axis=1, keepdims=True) * inv_d)
        )
        return gx, g_gamma, g_beta

    return Tensor._node(data, (x, gamma, beta), bwd)


def mha_block(
    xq: Tensor,
    xkv: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
    probs_sink: list | None = None,
) -> Tensor:
    """Multi-head scaled dot-product attention with input/output projections.

    Queries come from ``xq`` (n,d); keys and values from ``xkv`` (m,d). Scale is
    1/sqrt(d/heads). Dropout, when active, is applied to the attention
    probabilities. ``probs_sink``, if given, receives the pre-dropout (heads,n,m)
    probability array for inspection.
    """
    d = xq.data.shape[1]
    if d % heads != 0:
        raise ConfigError(f"attention heads ({heads}) must divide the hidden size ({d})")
    n, m = xq.data.shape[0], xkv.data.shape[0]
    dk = d // heads
    scale_f = 1.0 / math.sqrt(dk)

    q = xq.data @ wq.data
    k = xkv.data @ wk.data
    v = xkv.data @ wv.data
    if heads == 1:
        qh, kh, vh = q, k, v
        kt = (1, 0)
    else:
        qh = q.reshape(n, heads, dk).transpose(1, 0, 2)
        kh = k.reshape(m, heads, dk).transpose(1, 0, 2)
        vh = v.reshape(m, heads, dk).transpose(1, 0, 2)
        kt = (0, 2, 1)

    scores = (qh @ kh.transpose(kt)) * scale_f
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    probs = e / e.sum(axis=-1, keepdims=True)
    if probs_sink is not None:
        probs_sink.append(probs if heads > 1 else probs[np.newaxis])

    mask = None
    if training and dropout_rate > 0.0:
        if rng is None:
            raise ConfigError("attention dropout in training mode needs an rng stream")
        mask = (rng.random(probs.shape) >= dropout_rate) / (1.0 - dropout_rate)
        pd = probs * mask
    else:
        pd = probs

    ctx = pd @ vh if heads == 1 else (pd @ vh).transpose(1, 0, 2).reshape(n, d)
    data = ctx @ wo.data
    if not _grad_tracked(xq, xkv, wq, wk, wv, wo):
        return Tensor._const(data)

    def bwd(
        g,
        xqd=xq.data,
        xkvd=xkv.data,
        wqd=wq.data,
        wkd=wk.data,
        wvd=wv.data,
        wod=wo.data,
        qh=qh,
        kh=kh,
        vh=vh,
        probs=probs,
        pd=pd,
        mask=mask,
        ctx=ctx,
        kt=kt,
        n=n,
        m=m,
        heads=heads,
        dk=dk,
        scale_f=scale_f,
    ):
        g_wo = ctx.T @ g
        g_ctx = g @ wod.T
        if heads > 1:
            g_ctx = g_ctx.reshape(n, heads, dk).transpose(1, 0, 2)
        g_pd = g_ctx @ vh.transpose(kt)
        g_vh = pd.transpose(kt) @ g_ctx
        g_probs = g_pd * mask if mask is not None else g_pd
        g_scores = probs * (g_probs - (g_probs * probs).sum(axis=-1, keepdims=True))
        g_scores *= scale_f
        g_qh = g_scores @ kh
        g_kh = g_scores.transpose(kt) @ qh
        if heads == 1:
            g_q, g_k, g_v = g_qh, g_kh, g_vh
        else:
            g_q = g_qh.transpose(1, 0, 2).reshape(n, heads * dk)
            g_k = g_kh.transpose(1, 0, 2).reshape(m, heads * dk)
            g_v = g_vh.transpose(1, 0, 2).reshape(m, heads * dk)
        g_xq = g_q @ wqd.T
        g_xkv = g_k @ wkd.T + g_v @ wvd.T
        return g_xq, g_xkv, xqd.T @ g_q, xkvd.T @ g_k, xkvd.T @ g_v, g_wo

    return Tensor._node(data, (xq, xkv, wq, wk, wv, wo), bwd)


def ffn_block(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer feed-forward with ReLU: relu(x@w1 + b1) @ w2 + b2."""
    u = x.data @ w1.data + b1.data
    r = np.maximum(u, 0.0)
    data = r @ w2.data + b2.data
    if not _grad_tracked(x, w1, b1, w2, b2):
        return Tensor._const(data)

    def bwd(g, xd=x.data, w1d=w1.data, w2d=w2.data, u=u, r=r):
        g_w2 = r.T @ g
        g_b2 = g.sum(axis=0)
        g_r = g @ w2d.T
        g_u = g_r * (u > 0)
        g_w1 = xd.T @ g_u
        g_b1 = g_u.sum(axis=0)
        g_x = g_u @ w1d.T
        return g_x, g_w1, g_b1, g_w2, g_b2

    return Tensor._node(data, (x, w1, b1, w2, b2), bwd)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class TrainHyper:
    """Optimizer regimen. Toy-scale learning rate by default; the published
    regimen (lr 4e-6) stays selectable through the same fields."""

    learning_rate: float = 1e-3
    weight_decay: float = 8e-5
    epsilon: float = 5e-5
    rms_decay: float = 0.99
    epochs: int = 30
    batch_size: int = 8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.rms_decay < 1.0:
            raise ConfigError(f"rms_decay must lie in (0,1), got {self.rms_decay}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")


class RmspropState:
    """Per-parameter squared-gradient running averages plus the step counter.

    ``total_steps`` drives the linear learning-rate decay to zero; when None
    the learning rate stays constant.
    """

    def __init__(self, params: dict[str, Tensor], total_steps: int | None = None):
        self.square_avg = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.step = 0
        self.total_steps = total_steps


def rmsprop_step(
    params: dict[str, Tensor],
    grads: dict[str, Array],
    state: RmspropState,
    hyper: TrainHyper,
) -> None:
    """One RMSprop update with decoupled weight decay and linear lr decay."""
    lr = hyper.learning_rate
    if state.total_steps:
        lr = lr * max(0.0, 1.0 - state.step / state.total_steps)
    rho = hyper.rms_decay
    for name, p in params.items():
        g = grads.get(name)
        v = state.square_avg[name]
        if g is None:
            v *= rho
            if hyper.weight_decay:
                p.data -= lr * hyper.weight_decay * p.data
            continue
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient for '{name}' has shape {g.shape}, parameter has {p.data.shape}")
        v *= rho
        v += (1.0 - rho) * (g * g)
        p.data -= lr * (g / (np.sqrt(v) + hyper.epsilon))
        if hyper.weight_decay:
            p.data -= lr * hyper.weight_decay * p.data
    state.step += 1


# ---------------------------------------------------------------------------
# gradient-check oracle
# ---------------------------------------------------------------------------


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |analytic - fd| / max(1, |fd|). ``f`` must
    map a Tensor to a scalar Tensor deterministically (no live dropout).
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.ndim != 0:
        raise NumericError(f"grad_check needs a scalar function, got output shape {out.data.shape}")
    backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    base = Tensor(x.data.copy())
    flat = base.data.ravel()
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(base).data)
        flat[i] = orig - h
        lo = float(f(base).data)
        flat[i] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericError("grad_check: function returned a non-finite value")
        fd[i] = (hi - lo) / (2.0 * h)
    fd = fd.reshape(x.data.shape)
    rel = np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))
    return float(rel.max()) if rel.size else 0.0


def grad_check_params(make_loss, params: dict[str, Tensor], h: float = 1e-5) -> dict[str, float]:
    """Finite-difference check of d(loss)/d(param) for every named parameter.

    Analytic gradients come from one backward pass; the FD sweep runs with
    gradient tracking switched off so perturbed forwards stay tape-free.
    """
    zero_grads(params)
    loss = make_loss()
    if loss.data.ndim != 0:
        raise NumericError("grad_check_params needs a scalar loss")
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    for p in params.values():
        p.requires_grad = False
    try:
        errs: dict[str, float] = {}
        for name, p in params.items():
            flat = p.data.ravel()
            worst = 0.0
            ana = analytic[name].ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                hi = float(make_loss().data)
                flat[i] = orig - h
                lo = float(make_loss().data)
                flat[i] = orig
                if not (math.isfinite(hi) and math.isfinite(lo)):
                    raise NumericError("grad_check_params: non-finite loss during FD sweep")
                fd = (hi - lo) / (2.0 * h)
                rel = abs(ana[i] - fd) / max(1.0, abs(fd))
                if rel > worst:
                    worst = rel
            errs[name] = worst
    finally:
        for p in params.values():
            p.requires_grad = True
    return errs


# ---------------------------------------------------------------------------
# seeding and initialization
# ---------------------------------------------------------------------------


def named_stream(seed: int, name: str) -> np.random.Generator:
    """Independent, reproducible RNG stream keyed by (seed, name)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *words])


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
