"""Neural building blocks: softmax, slice-aware positional encodings, tensor LayerNorm,
embedding lookup and the masked mean-pool classifier head.

The functions here accept plain arrays or :class:`~ltransformer.autograd.Var`
values (see :mod:`ltransformer.autograd`).
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .exceptions import ShapeError

PE_KINDS = ("standard", "linear", "exponential", "harmonic", "learnable", "learnable_alpha")
LN_EPS = 1e-5
LEARNABLE_PE_INIT = 0.02


def fixed_alphas(kind, p):
    """Per-slice frequency scales for the fixed sinusoidal strategies (slice ``k`` is 1-based)."""
    k = np.arange(1, p + 1, dtype=np.float64)
    if kind == "standard":
        return np.ones(p)
    if kind == "linear":
        return k / p
    if kind == "exponential":
        return np.ones(1) if p == 1 else 2.0 ** ((k - 1) / (p - 1))
    if kind == "harmonic":
        return k
    raise ValueError(f"no closed-form alphas for PE kind {kind!r}")


@dataclass
class PEStrategy:
    """Positional-encoding choice.

    ``learnable`` trains the whole ``(T, d_s, p)`` table ``learn_table``;
    ``learnable_alpha`` keeps the sinusoid but trains the ``p`` frequency
    scales (initialized to the linear schedule). The remaining kinds are fixed.
    """

    kind: str
    alphas: np.ndarray = None
    learn_table: np.ndarray = None

    def __post_init__(self):
        if self.kind not in PE_KINDS:
            raise ValueError(f"unknown PE kind {self.kind!r}; choose from {PE_KINDS}")

    @classmethod
    def create(cls, kind, T, d_s, p, seed=0):
        if kind == "learnable":
            rng = np.random.default_rng(seed)
            return cls(kind, learn_table=rng.uniform(-LEARNABLE_PE_INIT, LEARNABLE_PE_INIT, size=(T, d_s, p)))
        if kind == "learnable_alpha":
            return cls(kind, alphas=fixed_alphas("linear", p))
        return cls(kind, alphas=fixed_alphas(kind, p))

    @property
    def trainable(self):
        return self.kind in ("learnable", "learnable_alpha")


def pe_angles(T, d_s):
    """Angles ``t / 10000^(2 floor((j-1)/2) / d_s)`` for 1-based ``t`` and ``j``, plus the odd-``j`` mask."""
    t = np.arange(1, T + 1, dtype=np.float64)[:, None]
    j = np.arange(1, d_s + 1)
    theta = t / 10000.0 ** (2 * ((j - 1) // 2) / d_s)[None, :]
    return theta, (j % 2 == 1)


def sinusoidal_pe(alphas, T, d_s):
    theta, odd = pe_angles(T, d_s)
    return ag.sinusoid(alphas, theta, odd)


def positional_encoding(strategy, T, d_s, p):
    """Slice-aware sinusoidal encoding, shape ``(T, d_s, p)``; odd (1-based) ``j`` uses sine."""
    if strategy.kind == "learnable":
        table = strategy.learn_table
        if table is None or ag.value(table).shape != (T, d_s, p):
            raise ShapeError(f"learnable PE table must have shape {(T, d_s, p)}")
        return table
    alphas = strategy.alphas if strategy.alphas is not None else fixed_alphas(strategy.kind, p)
    if ag.value(alphas).shape != (p,):
        raise ShapeError(f"expected {p} alphas, got shape {ag.value(alphas).shape}")
    return sinusoidal_pe(alphas, T, d_s)


def softmax_rows(S):
    """Row-wise softmax; ``-inf`` entries get zero weight. A fully masked row is an error."""
    return ag.softmax(S, axis=-1)


@dataclass
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = LN_EPS

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("LayerNorm eps must be positive")

    @classmethod
    def create(cls, d_s, p, eps=LN_EPS):
        return cls(np.ones((1, d_s, p)), np.zeros((1, d_s, p)), eps)


def tensor_layernorm(x, P):
    """Normalize every ``(t, k)`` fiber along mode 2, then scale by ``gamma`` and shift by ``beta``."""
    xs = ag.value(x).shape
    if xs[-2:] != ag.value(P.gamma).shape[-2:]:
        raise ShapeError(f"input {xs} does not match LayerNorm parameters {ag.value(P.gamma).shape}")
    return ag.layernorm(x, P.gamma, P.beta, P.eps, axis=-2)


@dataclass
class EmbeddingTable:
    weights: np.ndarray

    @property
    def vocab(self):
        return ag.value(self.weights).shape[0]

    @property
    def d(self):
        return ag.value(self.weights).shape[1]


def embed(tokens, E):
    tokens = np.asarray(tokens)
    if not np.issubdtype(tokens.dtype, np.integer):
        raise TypeError("token ids must be integers")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= E.vocab):
        bad = tokens[(tokens < 0) | (tokens >= E.vocab)][0]
        raise IndexError(f"token id {bad} outside vocabulary of size {E.vocab}")
    return ag.embedding(E.weights, tokens)


def classify(z, mask, W, b):
    """Mean-pool ``z`` over unmasked positions, then map to class logits.

    ``z`` is ``(T, d)`` or ``(B, T, d)``; returns ``(logits, pooled)``.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != ag.value(z).shape[:-1]:
        raise ShapeError(f"mask shape {mask.shape} does not match sequence shape {ag.value(z).shape[:-1]}")
    pooled = ag.masked_mean(z, mask)
    if ag.value(pooled).ndim == 1:
        logits = ag.add(ag.matmul(ag.reshape(pooled, (1, -1)), W), b)
        return ag.reshape(logits, (-1,)), pooled
    return ag.add(ag.matmul(pooled, W), b), pooled
