"""Minimal tape-based reverse-mode differentiation over ``numpy`` arrays.

Every primitive accepts plain arrays or :class:`Var` values. When no input
is tracked the primitive returns a plain ``ndarray`` and records nothing, so
the same forward code serves inference and training::

    tape = Tape()
    w = tape.leaf(np.ones((3, 2)), "w")
    loss = ag.sum(ag.matmul(x, w))
    grads = tape.backward(loss)     # {"w": array of shape (3, 2)}

The tape is append-only; reverse append order is a valid topological order
because an op's output is appended after all of its inputs exist.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError
from .ltransform import l_product, l_transpose

MASK_VALUE = -1e30
_GELU_C = np.sqrt(2.0 / np.pi)


class Var:
    """A tracked value produced on a :class:`Tape`."""

    __slots__ = ("value", "tape", "id", "name")

    def __init__(self, value, tape, name=None):
        self.value = value
        self.tape = tape
        self.id = tape._next_id()
        self.name = name

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __repr__(self):
        return f"Var(id={self.id}, name={self.name!r}, shape={self.value.shape})"


@dataclass
class TapeNode:
    op: str
    inputs: tuple
    output: Var
    vjps: tuple  # one callable per input (None for untracked inputs)
    saved: dict = field(default_factory=dict)


class Tape:
    """Append-only record of tracked operations. Not thread-safe; use one per forward pass."""

    def __init__(self):
        self.nodes = []
        self.leaves = {}
        self._count = 0

    def _next_id(self):
        self._count += 1
        return self._count

    def leaf(self, value, name):
        if name in self.leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        v = Var(np.asarray(value, dtype=np.float64), self, name)
        self.leaves[name] = v
        return v

    def backward(self, output, seed=None):
        """Propagate ``d output`` back to every leaf; returns ``{leaf name: gradient}``.

        Leaves that do not influence ``output`` get zero gradients.
        """
        if not isinstance(output, Var) or output.tape is not self:
            raise ValueError("backward() needs a Var recorded on this tape")
        if seed is None:
            if output.value.size != 1:
                raise ShapeError("seed gradient required for non-scalar outputs")
            seed = np.ones_like(output.value)
        store = GradStore()
        store.accumulate(output, np.asarray(seed, dtype=np.float64))
        for node in reversed(self.nodes):
            g = store.get(node.output)
            if g is None:
                continue
            for inp, vjp in zip(node.inputs, node.vjps):
                if vjp is not None:
                    store.accumulate(inp, vjp(g))
        return {name: store.get(v) if store.get(v) is not None else np.zeros_like(v.value)
                for name, v in self.leaves.items()}


class GradStore:
    """Accumulated gradients keyed by ``Var.id``; accumulation is additive."""

    def __init__(self):
        self._g = {}

    def accumulate(self, var, g):
        if g.shape != var.value.shape:
            raise ShapeError(f"gradient shape {g.shape} != value shape {var.value.shape} for {var!r}")
        prev = self._g.get(var.id)
        self._g[var.id] = g if prev is None else prev + g

    def get(self, var):
        return self._g.get(var.id)


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(inputs):
    for x in inputs:
        if isinstance(x, Var):
            return x.tape
    return None


def _record(op, inputs, out, vjps, **saved):
    tape = _tape_of(inputs)
    if tape is None:
        return out
    var = Var(out, tape)
    vjps = tuple(f if isinstance(x, Var) else None for x, f in zip(inputs, vjps))
    tape.nodes.append(TapeNode(op, tuple(inputs), var, vjps, saved))
    return var


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- structural ops ---------------------------------------------------------


def add(a, b):
    av, bv = np.asarray(value(a)), np.asarray(value(b))
    return _record("add", (a, b), av + bv,
                   (lambda g: unbroadcast(g, av.shape), lambda g: unbroadcast(g, bv.shape)))


def neg(a):
    return _record("neg", (a,), -value(a), (lambda g: -g,))


def mul(a, b):
    """Elementwise product with broadcasting."""
    av, bv = np.asarray(value(a)), np.asarray(value(b))
    return _record("mul", (a, b), av * bv,
                   (lambda g: unbroadcast(g * bv, av.shape), lambda g: unbroadcast(g * av, bv.shape)))


def sum(a):
    av = value(a)
    return _record("sum", (a,), np.sum(av), (lambda g: np.broadcast_to(g, av.shape).copy(),))


def reshape(a, shape):
    av = value(a)
    return _record("reshape", (a,), av.reshape(shape), (lambda g: g.reshape(av.shape),))


def transpose(a, axes):
    axes = tuple(ax % value(a).ndim for ax in axes)
    inv = tuple(np.argsort(axes))
    # contiguous outputs keep downstream matmuls on the BLAS path
    return _record("transpose", (a,), np.ascontiguousarray(np.transpose(value(a), axes)),
                   (lambda g: np.ascontiguousarray(np.transpose(g, inv)),))


def moveaxis(a, src, dst):
    nd = value(a).ndim
    order = [i for i in range(nd) if i != src % nd]
    order.insert(dst % nd, src % nd)
    return transpose(a, order)


def swapaxes(a, ax1, ax2):
    nd = value(a).ndim
    order = list(range(nd))
    order[ax1 % nd], order[ax2 % nd] = order[ax2 % nd], order[ax1 % nd]
    return transpose(a, order)


def take(a, index, axis):
    """``np.take`` along ``axis`` with a slice or integer array index; keeps the axis."""
    av = value(a)
    sl = [slice(None)] * av.ndim
    sl[axis] = index
    sl = tuple(sl)

    def vjp(g):
        out = np.zeros_like(av)
        if isinstance(index, slice):
            out[sl] = g
        else:
            np.add.at(out, sl, g)
        return out

    return _record("take", (a,), av[sl], (vjp,))


def concat(parts, axis):
    vals = [value(x) for x in parts]
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    vjps = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        def vjp(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]
        vjps.append(vjp)
    return _record("concat", tuple(parts), np.concatenate(vals, axis=axis), tuple(vjps))


def embedding(table, ids):
    """Gather rows ``table[ids]``; ``ids`` is an integer array and never tracked."""
    tv = value(table)
    ids = np.asarray(ids)

    def vjp(g):
        out = np.zeros_like(tv)
        np.add.at(out, ids, g)
        return out

    return _record("embedding", (table,), tv[ids], (vjp,))


# -- linear algebra -----------------------------------------------------------


def _mT(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b):
    """Batched matrix product with numpy broadcasting of the leading axes."""
    av, bv = np.asarray(value(a)), np.asarray(value(b))
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul operands must have at least two axes")
    return _record("matmul", (a, b), av @ bv,
                   (lambda g: unbroadcast(g @ _mT(bv), av.shape),
                    lambda g: unbroadcast(_mT(av) @ g, bv.shape)))


def mode3(a, Z):
    """Mode-3 product along the last axis, ``a ×_3 Z``, with ``Z`` constant."""
    av = np.asarray(value(a))
    Z = np.asarray(Z)
    if av.shape[-1] != Z.shape[1]:
        raise ShapeError(f"mode-3 size {av.shape[-1]} does not match Z with {Z.shape[1]} columns")
    return _record("mode3", (a,), av @ Z.T, (lambda g: backward_mode3(g, av, Z),), Z=Z)


def backward_mode3(G, x, Z):
    """Cotangent of ``x ×_3 Z``: ``G ×_3 Z^T``."""
    return np.asarray(G) @ np.asarray(Z)


def l_product_op(a, b, L):
    """Differentiable L-product built from mode-3 products and a facewise matmul."""
    a_hat = moveaxis(mode3(a, L.Z), -1, -3)
    b_hat = moveaxis(mode3(b, L.Z), -1, -3)
    return mode3(moveaxis(matmul(a_hat, b_hat), -3, -1), L.Z_inv)


def backward_l_product(G, x, w, L):
    """Cotangents of ``Y = x *_L w``: ``dX = G *_L w^T`` and ``dW = x^T *_L G``.

    These closed forms are the exact adjoints when ``L`` is orthonormal. For
    a general invertible transform the exact adjoint routes ``G`` through
    ``Z^{-T}`` on the way in and ``Z^T`` on the way out, which is what is
    returned in that case.
    """
    if L.orthonormal:
        return l_product(G, l_transpose(w, L), L), l_product(l_transpose(x, L), G, L)
    g_hat = np.moveaxis(np.asarray(G) @ L.Z_inv, -1, -3)
    x_hat = np.moveaxis(np.asarray(x) @ L.Z.T, -1, -3)
    w_hat = np.moveaxis(np.asarray(w) @ L.Z.T, -1, -3)
    dx = np.moveaxis(g_hat @ _mT(w_hat), -3, -1) @ L.Z
    dw = np.moveaxis(_mT(x_hat) @ g_hat, -3, -1) @ L.Z
    return dx, dw


# -- nonlinearities -----------------------------------------------------------


def softmax_value(s, axis=-1):
    s = np.asarray(s, dtype=np.float64)
    m = np.max(s, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("softmax row has no unmasked entries")
    e = np.exp(s - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(s, axis=-1):
    y = softmax_value(value(s), axis)

    def vjp(g):
        # fused Jacobian-vector product: y * (g - <g, y>)
        return y * (g - np.sum(g * y, axis=axis, keepdims=True))

    return _record("softmax", (s,), y, (vjp,))


def relu(a):
    av = value(a)
    return _record("relu", (a,), np.maximum(av, 0.0), (lambda g: g * (av > 0),))


def _gelu_grad(x):
    u = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(u)
    du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * du


def gelu_value(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def gelu(a):
    """GELU, tanh approximation."""
    av = value(a)
    return _record("gelu", (a,), gelu_value(av), (lambda g: g * _gelu_grad(av),))


ACTIVATIONS = {"gelu": gelu, "relu": relu}


def activation(a, kind):
    try:
        return ACTIVATIONS[kind](a)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None


def layernorm(x, gamma, beta, eps, axis=-2):
    """Normalize along ``axis`` then apply the broadcast affine ``gamma * . + beta``."""
    xv, gv, bv = (np.asarray(value(t)) for t in (x, gamma, beta))
    mu = np.mean(xv, axis=axis, keepdims=True)
    xc = xv - mu
    var = np.mean(xc * xc, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gv * xhat + bv

    def dx(g):
        d = g * gv
        return inv * (d - np.mean(d, axis=axis, keepdims=True)
                      - xhat * np.mean(d * xhat, axis=axis, keepdims=True))

    return _record("layernorm", (x, gamma, beta), out,
                   (dx, lambda g: unbroadcast(g * xhat, gv.shape), lambda g: unbroadcast(g, bv.shape)))


def masked_mean(z, mask):
    """Mean of ``z`` (B, T, d) over the positions where ``mask`` (B, T) is true."""
    zv = value(z)
    m = np.asarray(mask, dtype=np.float64)
    count = m.sum(axis=-1, keepdims=True)
    if np.any(count == 0):
        raise ValueError("masked mean over a sequence with no unmasked positions")
    w = (m / count)[..., None]
    return _record("masked_mean", (z,), np.sum(zv * w, axis=-2), (lambda g: g[..., None, :] * w,))


def sinusoid(alpha, theta, odd):
    """``sin(theta * alpha)`` where ``odd`` else ``cos``, differentiable in ``alpha``.

    ``theta`` has shape (T, d_s) and ``alpha`` shape (p,); output is (T, d_s, p).
    """
    av = value(alpha)
    arg = theta[..., None] * av
    sel = odd[None, :, None]
    out = np.where(sel, np.sin(arg), np.cos(arg))
    deriv = np.where(sel, np.cos(arg), -np.sin(arg)) * theta[..., None]
    return _record("sinusoid", (alpha,), out, (lambda g: np.sum(g * deriv, axis=(0, 1)),))


def cross_entropy(logits, labels, reduction="mean"):
    """Softmax cross-entropy over the last axis with integer ``labels``."""
    lv = value(logits)
    labels = np.asarray(labels)
    n = lv.shape[0]
    shifted = lv - np.max(lv, axis=-1, keepdims=True)
    logp = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    losses = -logp[np.arange(n), labels]
    if reduction == "mean":
        scale = 1.0 / n
    elif reduction == "sum":
        scale = 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    probs = np.exp(logp)
    onehot = np.zeros_like(lv)
    onehot[np.arange(n), labels] = 1.0
    return _record("cross_entropy", (logits,), np.asarray(np.sum(losses) * scale),
                   (lambda g: g * scale * (probs - onehot),))
