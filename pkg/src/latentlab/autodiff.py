"""Reverse-mode gradient tape over dense numpy arrays.

The engine records matrix-level operations (matmul, broadcast arithmetic,
reductions, elementwise transcendentals, slicing) rather than scalar ops:
the batch-statistic losses need differentiable batch moments, and coarse
nodes keep tapes to a few dozen entries per training step.

A ``Tensor`` owns its value, its parents, and a vector-Jacobian-product
closure.  ``backward(out, seed)`` walks the graph in reverse topological
order and returns a dict of cotangents, so one tape supports repeated
backward passes with different seeds (used for exact Jacobians).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Node in the computation graph; wraps an ndarray (or scalar)."""

    __slots__ = ("value", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    # operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a cotangent back down to the broadcast-source shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.value - b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.value * b.value, (a, b),
                  lambda g: (_unbroadcast(g * b.value, a.value.shape),
                             _unbroadcast(g * a.value, b.value.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    inv = 1.0 / b.value
    return Tensor(a.value * inv, (a, b),
                  lambda g: (_unbroadcast(g * inv, a.value.shape),
                             _unbroadcast(-g * a.value * inv * inv, b.value.shape)))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.value ** exponent
    return Tensor(out, (a,), lambda g: (g * exponent * a.value ** (exponent - 1.0),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.value @ b.value, (a, b),
                  lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value.T, (a,), lambda g: (g.T,))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        # read-only broadcast views are fine: consumers never mutate cotangents
        if axis is None:
            return (np.broadcast_to(g, a.value.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape),)

    return Tensor(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    denom = a.value.size if axis is None else a.value.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / denom, a.value.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / denom, a.value.shape),)

    return Tensor(out, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return Tensor(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    s = np.sin(a.value)
    return Tensor(np.cos(a.value), (a,), lambda g: (-g * s,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    c = np.cos(a.value)
    return Tensor(np.sin(a.value), (a,), lambda g: (g * c,))


def cf_distance(proj, nodes: np.ndarray, weights: np.ndarray, target: np.ndarray) -> Tensor:
    """Per-slice squared distance between an empirical characteristic function
    and a target CF, under a fixed quadrature rule.

    ``proj``: (B, S) projections.  Returns (S,) with entries
    sum_q w_q [(mean_b cos(t_q p_bs) - target_q)^2 + (mean_b sin(t_q p_bs))^2].
    Fused so the (B, S, Q) trigonometric block is evaluated exactly once.
    """
    proj = as_tensor(proj)
    batch = proj.value.shape[0]
    args = proj.value[:, :, None] * nodes
    cos_block = np.cos(args)
    sin_block = np.sin(args)
    cos_mean = cos_block.mean(axis=0)
    sin_mean = sin_block.mean(axis=0)
    delta_cos = cos_mean - target
    out = (delta_cos**2 + sin_mean**2) @ weights

    def vjp(g):
        # d out_s / d proj_bs = (2/B) sum_q t_q w_q (sin_mean * cos_bq - delta_cos * sin_bq)
        wc = (g[:, None] * delta_cos) * (weights * nodes)
        ws = (g[:, None] * sin_mean) * (weights * nodes)
        grad = np.einsum("bsq,sq->bs", cos_block, ws) - np.einsum("bsq,sq->bs", sin_block, wc)
        return (grad * (2.0 / batch),)

    return Tensor(out, (proj,), vjp)


def gelu(a) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x); gradient Phi(x) + x * phi(x)."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + special.erf(a.value / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.value * a.value)
    return Tensor(a.value * cdf, (a,), lambda g: (g * (cdf + a.value * pdf),))


def hinge_at_zero(a) -> Tensor:
    """max(0, a) with subgradient zero at the kink."""
    a = as_tensor(a)
    mask = (a.value > 0.0).astype(np.float64)
    return Tensor(a.value * mask, (a,), lambda g: (g * mask,))


def logsumexp(a, axis: int) -> Tensor:
    a = as_tensor(a)
    m = a.value.max(axis=axis, keepdims=True)
    ex = np.exp(a.value - m)
    tot = ex.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(tot), axis=axis)
    soft = ex / tot
    return Tensor(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,))


def take_diag(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.fill_diagonal(out, g)
        return (out,)

    return Tensor(np.diagonal(a.value).copy(), (a,), vjp)


def rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        out[start:stop] = g
        return (out,)

    return Tensor(a.value[start:stop].copy(), (a,), vjp)


def cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        out[:, start:stop] = g
        return (out,)

    return Tensor(a.value[:, start:stop].copy(), (a,), vjp)


def concat_rows(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    heights = [p.value.shape[0] for p in parts]
    offsets = np.cumsum([0] + heights)

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return Tensor(np.concatenate([p.value for p in parts], axis=0), tuple(parts), vjp)


def concat_cols(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    widths = [p.value.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return Tensor(np.concatenate([p.value for p in parts], axis=1), tuple(parts), vjp)


def unsqueeze(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.expand_dims(a.value, axis), (a,),
                  lambda g: (np.squeeze(g, axis=axis),))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(out: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(out: Tensor, seed=None) -> dict[int, np.ndarray]:
    """Cotangents of every node reachable from ``out``, keyed by id().

    ``seed`` is the cotangent of ``out`` itself (defaults to 1 for scalars);
    repeated calls with different seeds reuse the same tape.
    """
    if seed is None:
        seed = np.ones_like(out.value)
    grads: dict[int, np.ndarray] = {id(out): np.asarray(seed, dtype=np.float64)}
    for node in reversed(_topo_order(out)):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    return grads


def grad_of(out: Tensor, leaves, seed=None) -> list[np.ndarray]:
    """Gradients of ``out`` w.r.t. each leaf tensor (zeros if unreachable)."""
    grads = backward(out, seed)
    return [grads.get(id(leaf), np.zeros_like(leaf.value)) for leaf in leaves]
