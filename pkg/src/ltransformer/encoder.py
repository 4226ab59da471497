"""The L-product Transformer: spectral multi-head attention, tensor FFN, encoder and
decoder layers, and the stacked classification model.

Layout
------
Activations are arrays of shape ``(..., T, d_s, p)`` in the original tensor
domain. Weights are stored already transformed (the "hat" tensors) in the
layouts below and are never re-transformed during a forward pass:

=========================  ======================
``wq``, ``wk``, ``wv``     ``(h, d_s, d_h, p)``  one ``d_s x d_h x p`` tensor per head
``wo``                     ``(d_s, d_s, p)``
``w1`` / ``b1``            ``(d_s, d_ff_s, p)`` / ``(1, d_ff_s, p)``
``w2`` / ``b2``            ``(d_ff_s, d_s, p)`` / ``(1, d_s, p)``
``gamma`` / ``beta``       ``(1, d_s, p)``
=========================  ======================

Inside a block the slice index is moved in front, ``(..., p, T, d_s)``, so
every per-slice computation is a batched matrix product. ``execution``
selects between one batched call over all slices (``"batched"``) and an
explicit loop over slices (``"sequential"``); both run the same kernel on
the same per-matrix shapes and give bit-identical results. With
``workers > 1`` and nothing being recorded for differentiation, the
sequential loop runs slices on a thread pool.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from functools import cached_property

import numpy as np

from . import autograd as ag
from . import nn
from .exceptions import ConfigError, DivisibilityError, ShapeError
from .ltransform import TransformOp, make_transform

EXECUTION_MODES = ("batched", "sequential")
FFN_MULT = 4


@dataclass(frozen=True)
class ModelConfig:
    """Hyper-parameters of an L-Transformer classifier.

    ``heads`` is the head count ``H`` of the width-``d`` baseline; each slice
    carries ``h = H / p`` heads of width ``d_h = d / H``.
    """

    T: int
    d: int
    p: int
    layers: int = 1
    heads: int = 4
    vocab: int = 50
    num_classes: int = 2
    pe: str = "linear"
    activation: str = "gelu"
    transform: object = "dct"
    seed: int = 0
    ln_eps: float = nn.LN_EPS

    def __post_init__(self):
        for name in ("T", "d", "p", "heads", "vocab", "num_classes"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}", field=name)
        if not isinstance(self.layers, (int, np.integer)) or self.layers < 0:
            raise ConfigError(f"layers must be a non-negative integer, got {self.layers!r}", field="layers")
        if self.d % self.p:
            raise DivisibilityError(self.d, self.p)
        if self.heads % self.p:
            raise ConfigError(f"p={self.p} must divide the head count H={self.heads}", field="heads")
        if self.d % self.heads:
            raise ConfigError(f"H={self.heads} must divide d={self.d}", field="heads")
        if self.pe not in nn.PE_KINDS:
            raise ConfigError(f"unknown pe {self.pe!r}; choose from {nn.PE_KINDS}", field="pe")
        if self.activation not in ag.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", field="activation")
        if self.ln_eps <= 0:
            raise ConfigError("ln_eps must be positive", field="ln_eps")
        self.transform_op  # fail early on a bad transform

    @property
    def d_s(self):
        return self.d // self.p

    @property
    def h(self):
        return self.heads // self.p

    @property
    def d_h(self):
        return self.d // self.heads

    @property
    def d_ff_s(self):
        return FFN_MULT * self.d_s

    @cached_property
    def transform_op(self):
        return make_transform(self.transform, self.p)

    def replace(self, **changes):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return ModelConfig(**kw)

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        if isinstance(self.transform, TransformOp):
            out["transform"] = {"Z": self.transform.Z.tolist(), "Z_inv": self.transform.Z_inv.tolist(),
                                "orthonormal": self.transform.orthonormal}
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        tr = data.get("transform")
        if isinstance(tr, dict):
            data["transform"] = TransformOp(np.array(tr["Z"]), np.array(tr["Z_inv"]), tr["orthonormal"])
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config field(s): {sorted(unknown)}", field=sorted(unknown)[0])
        return cls(**data)


@dataclass
class AttentionParams:
    wq: object
    wk: object
    wv: object
    wo: object


@dataclass
class FfnParams:
    w1: object
    w2: object
    b1: object
    b2: object


@dataclass
class EncoderParams:
    attn: AttentionParams
    ffn: FfnParams
    ln1: nn.LayerNormParams
    ln2: nn.LayerNormParams


@dataclass
class DecoderParams:
    self_attn: AttentionParams
    cross_attn: AttentionParams
    ffn: FfnParams
    ln1: nn.LayerNormParams
    ln2: nn.LayerNormParams
    ln3: nn.LayerNormParams


# -- initialization -----------------------------------------------------------


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_attention(cfg, rng):
    h, d_s, d_h, p = cfg.h, cfg.d_s, cfg.d_h, cfg.p
    return AttentionParams(
        wq=_uniform(rng, d_s, (h, d_s, d_h, p)),
        wk=_uniform(rng, d_s, (h, d_s, d_h, p)),
        wv=_uniform(rng, d_s, (h, d_s, d_h, p)),
        wo=_uniform(rng, d_s, (d_s, d_s, p)),
    )


def init_ffn(cfg, rng):
    d_s, d_ff, p = cfg.d_s, cfg.d_ff_s, cfg.p
    return FfnParams(
        w1=_uniform(rng, d_s, (d_s, d_ff, p)),
        w2=_uniform(rng, d_ff, (d_ff, d_s, p)),
        b1=np.zeros((1, d_ff, p)),
        b2=np.zeros((1, d_s, p)),
    )


def init_encoder_params(cfg, rng):
    return EncoderParams(init_attention(cfg, rng), init_ffn(cfg, rng),
                         nn.LayerNormParams.create(cfg.d_s, cfg.p, cfg.ln_eps),
                         nn.LayerNormParams.create(cfg.d_s, cfg.p, cfg.ln_eps))


def init_decoder_params(cfg, rng):
    ln = [nn.LayerNormParams.create(cfg.d_s, cfg.p, cfg.ln_eps) for _ in range(3)]
    return DecoderParams(init_attention(cfg, rng), init_attention(cfg, rng), init_ffn(cfg, rng), *ln)


# -- masks ----------------------------------------------------------------------


def causal_mask(T):
    """Additive ``(T, T)`` mask that blocks attention to later positions."""
    return np.triu(np.full((T, T), ag.MASK_VALUE), k=1)


def key_padding_mask(mask):
    """Additive mask from a boolean ``(B, T)`` validity mask, broadcastable over slices and heads."""
    mask = np.asarray(mask, dtype=bool)
    add = np.where(mask, 0.0, ag.MASK_VALUE)
    return add.reshape(mask.shape[0], 1, 1, 1, mask.shape[1])


# -- slice-wise cores (inputs are slice-first and already transformed) ----------


def _attention_core(xq, xkv, wq, wk, wv, wo, mask, d_h):
    """Standard multi-head attention applied independently to every slice.

    ``xq``: (..., p, Tq, d_s), ``xkv``: (..., p, Tk, d_s), ``wq``: (p, h, d_s, d_h),
    ``wo``: (p, d_s, d_s). Returns (..., p, Tq, d_s).
    """
    def with_head_axis(x):
        shp = ag.value(x).shape
        return ag.reshape(x, shp[:-2] + (1,) + shp[-2:])

    xq_, xkv_ = with_head_axis(xq), with_head_axis(xkv)
    q = ag.matmul(xq_, wq)
    k = ag.matmul(xkv_, wk)
    v = ag.matmul(xkv_, wv)
    scores = ag.mul(ag.matmul(q, ag.swapaxes(k, -1, -2)), 1.0 / np.sqrt(d_h))
    if mask is not None:
        scores = ag.add(scores, mask)
    heads = ag.matmul(ag.softmax(scores, axis=-1), v)
    shp = ag.value(heads).shape  # (..., p, h, Tq, d_h)
    concat = ag.reshape(ag.swapaxes(heads, -3, -2), shp[:-3] + (shp[-2], shp[-3] * shp[-1]))
    return ag.matmul(concat, wo)


def _ffn_core(xs, w1, b1, w2, b2, activation):
    hidden = ag.activation(ag.add(ag.matmul(xs, w1), b1), activation)
    return ag.add(ag.matmul(hidden, w2), b2)


def _has_var(args):
    return any(isinstance(a, ag.Var) for a in args)


def _run_slices(core, sliced, fixed, execution="batched", workers=None):
    """Evaluate ``core(*sliced_parts, *fixed)`` over the slice axis.

    ``sliced`` is a list of ``(value, axis)`` pairs naming each operand's
    slice axis; outputs are stacked on axis ``-3``.
    """
    if execution not in EXECUTION_MODES:
        raise ValueError(f"execution must be one of {EXECUTION_MODES}, got {execution!r}")
    if execution == "batched":
        return core(*[v for v, _ in sliced], *fixed)

    p = ag.value(sliced[0][0]).shape[sliced[0][1]]

    def one(i):
        return core(*[ag.take(v, slice(i, i + 1), ax) for v, ax in sliced], *fixed)

    if workers and workers > 1 and not _has_var([v for v, _ in sliced] + list(fixed)):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(one, range(p)))  # map preserves slice order
    else:
        outs = [one(i) for i in range(p)]
    return ag.concat(outs, axis=-3)


def _slices_first(x):
    return ag.moveaxis(x, -1, -3)


def _slices_last(x):
    return ag.moveaxis(x, -3, -1)


def _attn_weights(P):
    heads_first = lambda w: ag.transpose(w, (3, 0, 1, 2))  # (h, d_s, d_h, p) -> (p, h, d_s, d_h)
    return heads_first(P.wq), heads_first(P.wk), heads_first(P.wv), ag.moveaxis(P.wo, -1, 0)


def _ffn_weights(P):
    return (ag.moveaxis(P.w1, -1, 0), ag.moveaxis(P.b1, -1, 0),
            ag.moveaxis(P.w2, -1, 0), ag.moveaxis(P.b2, -1, 0))


def _check_input(x, cfg):
    shp = ag.value(x).shape
    if len(shp) < 3 or shp[-2:] != (cfg.d_s, cfg.p):
        raise ShapeError(f"expected input (..., T, {cfg.d_s}, {cfg.p}), got {shp}")


def _check_mask(mask, tq, tk):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 2 and mask.shape != (tq, tk):
        raise ShapeError(f"attention mask must be {(tq, tk)}, got {mask.shape}")
    return mask


def slice_batched_forward(x_hat, per_slice_params, cfg, mask=None, execution="batched", workers=None):
    """Run the attention or FFN core on a transform-domain input ``(..., T, d_s, p)``.

    ``per_slice_params`` is an :class:`AttentionParams` or :class:`FfnParams`.
    The output stays in the transform domain.
    """
    xs = _slices_first(x_hat)
    if isinstance(per_slice_params, AttentionParams):
        wq, wk, wv, wo = _attn_weights(per_slice_params)
        t = ag.value(x_hat).shape[-3]
        core = lambda x, a, b, c, o, m: _attention_core(x, x, a, b, c, o, m, cfg.d_h)
        out = _run_slices(core, [(xs, -3), (wq, 0), (wk, 0), (wv, 0), (wo, 0)],
                          [_check_mask(mask, t, t)], execution, workers)
    elif isinstance(per_slice_params, FfnParams):
        w1, b1, w2, b2 = _ffn_weights(per_slice_params)
        core = lambda x, a, b, c, e, act: _ffn_core(x, a, b, c, e, act)
        out = _run_slices(core, [(xs, -3), (w1, 0), (b1, 0), (w2, 0), (b2, 0)],
                          [cfg.activation], execution, workers)
    else:
        raise TypeError("per_slice_params must be AttentionParams or FfnParams")
    return _slices_last(out)


# -- public blocks ----------------------------------------------------------------


def l_mha(x, P, cfg, mask=None, execution="batched", workers=None):
    """L-multi-head self-attention of a position-encoded input ``(..., T, d_s, p)``."""
    _check_input(x, cfg)
    L = cfg.transform_op
    y_hat = slice_batched_forward(ag.mode3(x, L.Z), P, cfg, mask, execution, workers)
    return ag.mode3(y_hat, L.Z_inv)


def l_mha_masked(x, P, cfg, key_mask=None, execution="batched", workers=None):
    """Causal self-attention: position ``t`` attends to positions ``<= t`` only."""
    T = ag.value(x).shape[-3]
    mask = causal_mask(T)
    if key_mask is not None:
        mask = mask + key_mask
    return l_mha(x, P, cfg, mask, execution, workers)


def l_cross_attention(x_dec, x_enc, P, cfg, mask=None, execution="batched", workers=None):
    """Queries from the decoder stream, keys and values from the encoder stream."""
    _check_input(x_dec, cfg)
    _check_input(x_enc, cfg)
    L = cfg.transform_op
    q_s = _slices_first(ag.mode3(x_dec, L.Z))
    kv_s = _slices_first(ag.mode3(x_enc, L.Z))
    wq, wk, wv, wo = _attn_weights(P)
    tq, tk = ag.value(x_dec).shape[-3], ag.value(x_enc).shape[-3]
    core = lambda xq, xkv, a, b, c, o, m: _attention_core(xq, xkv, a, b, c, o, m, cfg.d_h)
    out = _run_slices(core, [(q_s, -3), (kv_s, -3), (wq, 0), (wk, 0), (wv, 0), (wo, 0)],
                      [_check_mask(mask, tq, tk)], execution, workers)
    return ag.mode3(_slices_last(out), L.Z_inv)


def tffn(x, P, cfg, execution="batched", workers=None):
    """Tensor FFN ``act(x *_L W1 + B1) *_L W2 + B2`` with spectral-domain weights."""
    _check_input(x, cfg)
    L = cfg.transform_op
    y_hat = slice_batched_forward(ag.mode3(x, L.Z), P, cfg, None, execution, workers)
    return ag.mode3(y_hat, L.Z_inv)


def encoder_layer(x, P, cfg, mask=None, execution="batched", workers=None):
    """Post-norm encoder layer; LayerNorm runs in the original domain."""
    x1 = nn.tensor_layernorm(ag.add(x, l_mha(x, P.attn, cfg, mask, execution, workers)), P.ln1)
    return nn.tensor_layernorm(ag.add(x1, tffn(x1, P.ffn, cfg, execution, workers)), P.ln2)


def decoder_layer(x, x_enc, P, cfg, self_mask=None, cross_mask=None, execution="batched", workers=None):
    x1 = nn.tensor_layernorm(
        ag.add(x, l_mha_masked(x, P.self_attn, cfg, self_mask, execution, workers)), P.ln1)
    x2 = nn.tensor_layernorm(
        ag.add(x1, l_cross_attention(x1, x_enc, P.cross_attn, cfg, cross_mask, execution, workers)), P.ln2)
    return nn.tensor_layernorm(ag.add(x2, tffn(x2, P.ffn, cfg, execution, workers)), P.ln3)


# -- full model ---------------------------------------------------------------------


def _tensorize(x, p):
    shp = ag.value(x).shape
    d = shp[-1]
    return ag.swapaxes(ag.reshape(x, shp[:-1] + (p, d // p)), -1, -2)


def _matricize(x):
    shp = ag.value(x).shape
    return ag.reshape(ag.swapaxes(x, -1, -2), shp[:-2] + (shp[-2] * shp[-1],))


@dataclass
class Model:
    """An L-Transformer classifier: embedding, PE, encoder stack, mean-pool head.

    ``params`` is a flat ``{name: array}`` mapping; :meth:`layer` and friends
    give structured views over it (or over a mapping of tracked values).
    """

    config: ModelConfig
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config):
        cfg = config
        rng = np.random.default_rng(cfg.seed)
        params = {"embedding": rng.normal(0.0, 1.0, size=(cfg.vocab, cfg.d))}
        pe = nn.PEStrategy.create(cfg.pe, cfg.T, cfg.d_s, cfg.p, seed=int(rng.integers(2**31)))
        if cfg.pe == "learnable":
            params["pe.table"] = pe.learn_table
        elif cfg.pe == "learnable_alpha":
            params["pe.alpha"] = pe.alphas
        for i in range(cfg.layers):
            lp = init_encoder_params(cfg, rng)
            for sub, obj in (("attn", lp.attn), ("ffn", lp.ffn), ("ln1", lp.ln1), ("ln2", lp.ln2)):
                for f in fields(obj):
                    if f.name != "eps":
                        params[f"layers.{i}.{sub}.{f.name}"] = getattr(obj, f.name)
        params["classifier.weight"] = _uniform(rng, cfg.d, (cfg.d, cfg.num_classes))
        params["classifier.bias"] = np.zeros(cfg.num_classes)
        return cls(cfg, params)

    def layer(self, i, params=None):
        P = self.params if params is None else params
        pre = f"layers.{i}."
        eps = self.config.ln_eps
        return EncoderParams(
            AttentionParams(*(P[pre + "attn." + n] for n in ("wq", "wk", "wv", "wo"))),
            FfnParams(*(P[pre + "ffn." + n] for n in ("w1", "w2", "b1", "b2"))),
            nn.LayerNormParams(P[pre + "ln1.gamma"], P[pre + "ln1.beta"], eps),
            nn.LayerNormParams(P[pre + "ln2.gamma"], P[pre + "ln2.beta"], eps),
        )

    def pe_strategy(self, params=None):
        P = self.params if params is None else params
        cfg = self.config
        if cfg.pe == "learnable":
            return nn.PEStrategy("learnable", learn_table=P["pe.table"])
        if cfg.pe == "learnable_alpha":
            return nn.PEStrategy("learnable_alpha", alphas=P["pe.alpha"])
        return nn.PEStrategy(cfg.pe, alphas=nn.fixed_alphas(cfg.pe, cfg.p))

    def forward(self, tokens, mask=None, params=None, execution="batched", workers=None):
        """Logits and pooled features for a ``(B, T')`` batch of token ids, ``T' <= T``."""
        return encode(tokens, mask, self, params=params, execution=execution, workers=workers)

    def predict_logits(self, tokens, mask=None, batch_size=256, execution="batched", workers=None):
        tokens = np.asarray(tokens)
        mask = np.ones(tokens.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        out = [self.forward(tokens[i:i + batch_size], mask[i:i + batch_size],
                            execution=execution, workers=workers)[0]
               for i in range(0, len(tokens), batch_size)]
        return np.concatenate(out, axis=0)

    def n_params(self):
        return int(np.sum([v.size for v in self.params.values()]))


def encode(tokens, mask, model, params=None, execution="batched", workers=None):
    """embed, tensorize, add PE once, run the encoder stack, matricize, pool, classify.

    ``tokens`` is ``(T',)`` or ``(B, T')``. Returns ``(logits, pooled)``.
    """
    cfg = model.config
    P = model.params if params is None else params
    tokens = np.asarray(tokens)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None]
    if mask is None:
        mask = np.ones(tokens.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if single and mask.ndim == 1:
        mask = mask[None]
    if mask.shape != tokens.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match tokens {tokens.shape}")
    t_len = tokens.shape[1]
    if t_len > cfg.T:
        raise ShapeError(f"sequence length {t_len} exceeds model T={cfg.T}")

    x = nn.embed(tokens, nn.EmbeddingTable(P["embedding"]))
    x = _tensorize(x, cfg.p)
    pe = nn.positional_encoding(model.pe_strategy(P), cfg.T, cfg.d_s, cfg.p)
    if t_len < cfg.T:
        pe = ag.take(pe, slice(0, t_len), 0)
    x = ag.add(x, pe)
    attn_mask = None if mask.all() else key_padding_mask(mask)
    for i in range(cfg.layers):
        x = encoder_layer(x, model.layer(i, P), cfg, attn_mask, execution, workers)
    logits, pooled = nn.classify(_matricize(x), mask, P["classifier.weight"], P["classifier.bias"])
    if single:
        logits = ag.reshape(logits, ag.value(logits).shape[1:])
        pooled = ag.reshape(pooled, ag.value(pooled).shape[1:])
    return logits, pooled
