"""Small reverse-mode automatic differentiation over float64 numpy arrays.

Just enough machinery for the toy causal LM: broadcast-aware add/mul, batched
matmul, reshapes/transposes, head repetition, SiLU, RMS normalization, last-
axis softmax, rotary embedding, embedding lookup and a fused shifted
cross-entropy.  Nodes form an implicit DAG; ``backward`` walks it once in
reverse topological order and accumulates gradients on leaves.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A value in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._vjp(node.grad)):
                if not parent.requires_grad or pgrad is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pgrad


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return Tensor(
        out,
        parents=(a, b),
        vjp=lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return Tensor(
        out,
        parents=(a, b),
        vjp=lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return ga, gb

    return Tensor(out, parents=(a, b), vjp=vjp)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor(
        a.data.reshape(shape),
        parents=(a,),
        vjp=lambda g: (g.reshape(a.data.shape),),
    )


def transpose(a: Tensor, axes) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return Tensor(
        a.data.transpose(axes),
        parents=(a,),
        vjp=lambda g: (g.transpose(inverse),),
    )


def repeat_heads(a: Tensor, reps: int, axis: int) -> Tensor:
    """np.repeat along ``axis`` (block head duplication for group sharing)."""
    if reps == 1:
        return a
    out = np.repeat(a.data, reps, axis=axis)
    n_src = a.data.shape[axis]

    def vjp(g):
        folded = g.reshape(
            a.data.shape[:axis] + (n_src, reps) + a.data.shape[axis + 1 :]
        )
        return (folded.sum(axis=axis + 1),)

    return Tensor(out, parents=(a,), vjp=vjp)


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig
    # d/dx [x*sig(x)] = sig(x) * (1 + x * (1 - sig(x)))
    return Tensor(
        out,
        parents=(a,),
        vjp=lambda g: (g * sig * (1.0 + a.data * (1.0 - sig)),),
    )


RMS_NORM_EPS = 1e-6


def rms_norm(x: Tensor, scale: Tensor, eps: float = RMS_NORM_EPS) -> Tensor:
    """Scale-only RMS normalization over the last axis."""
    d = x.data.shape[-1]
    inv = 1.0 / np.sqrt(np.mean(x.data**2, axis=-1, keepdims=True) + eps)
    out = x.data * inv * scale.data

    def vjp(g):
        gs_x = g * scale.data
        gx = gs_x * inv - x.data * inv**3 / d * np.sum(
            gs_x * x.data, axis=-1, keepdims=True
        )
        gscale = _unbroadcast(g * x.data * inv, scale.data.shape)
        return gx, gscale

    return Tensor(out, parents=(x, scale), vjp=vjp)


def softmax_last(a: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis (-inf entries get 0)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    return Tensor(
        y,
        parents=(a,),
        vjp=lambda g: (y * (g - np.sum(g * y, axis=-1, keepdims=True)),),
    )


def rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotary embedding of [..., s, n, d] given [s, d/2] angle tables."""
    c = cos[:, None, :]
    s = sin[:, None, :]
    even, odd = x.data[..., 0::2], x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = even * c - odd * s
    out[..., 1::2] = even * s + odd * c

    def vjp(g):
        ge, go = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * c + go * s  # rotation transpose = rotate by -angle
        gx[..., 1::2] = -ge * s + go * c
        return (gx,)

    return Tensor(out, parents=(x,), vjp=vjp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor(out, parents=(table,), vjp=vjp)


def cross_entropy_next_token(logits: Tensor, tokens: np.ndarray) -> Tensor:
    """Mean next-token cross-entropy: logits [b, s, V] predict tokens[:, 1:]."""
    tokens = np.asarray(tokens)
    b, s, _ = logits.data.shape
    if s < 2:
        raise ValueError("need at least 2 positions for next-token loss")
    pred = logits.data[:, :-1]
    targets = tokens[:, 1:]
    shifted = pred - pred.max(axis=-1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    logprobs = shifted - logz
    count = b * (s - 1)
    rows = np.arange(b)[:, None], np.arange(s - 1)[None, :]
    loss = -logprobs[rows[0], rows[1], targets].sum() / count

    def vjp(g):
        probs = np.exp(logprobs)
        dpred = probs.copy()
        dpred[rows[0], rows[1], targets] -= 1.0
        dlogits = np.zeros_like(logits.data)
        dlogits[:, :-1] = dpred * (float(g) / count)
        return (dlogits,)

    return Tensor(loss, parents=(logits,), vjp=vjp)
