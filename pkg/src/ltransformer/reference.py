"""Plain matrix Transformer used as an independent oracle.

Nothing here touches the tape or the tensor code paths: heads are looped
explicitly, softmax/LayerNorm/GELU are re-derived locally. The L-model is
checked against these functions slice by slice and, at ``p = 1``, end to end.
"""

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)
_NEG = -1e30


def _softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _act(x, kind):
    if kind == "relu":
        return np.maximum(x, 0.0)
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _layernorm(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def standard_mha(xq, wq, wk, wv, wo, xkv=None, mask=None):
    """Multi-head attention on matrices.

    ``xq``: (Tq, d); ``wq, wk, wv``: lists of per-head (d, d_h) matrices;
    ``wo``: (h * d_h, d); ``mask``: additive (Tq, Tk) or None.
    """
    xkv = xq if xkv is None else xkv
    heads = []
    for Wq, Wk, Wv in zip(wq, wk, wv):
        q, k, v = xq @ Wq, xkv @ Wk, xkv @ Wv
        s = q @ k.T / np.sqrt(Wq.shape[1])
        if mask is not None:
            s = s + mask
        heads.append(_softmax(s) @ v)
    return np.concatenate(heads, axis=1) @ wo


def standard_ffn(x, w1, b1, w2, b2, activation="gelu"):
    return _act(x @ w1 + b1, activation) @ w2 + b2


def standard_encoder_layer(x, attn, ffn, ln1, ln2, eps, activation="gelu", mask=None):
    """Post-norm encoder layer on a (T, d) matrix; ``attn``/``ffn``/``ln*`` are tuples."""
    x1 = _layernorm(x + standard_mha(x, *attn, mask=mask), *ln1, eps)
    return _layernorm(x1 + standard_ffn(x1, *ffn, activation=activation), *ln2, eps)


def sinusoidal_pe(T, d, alpha=1.0):
    """Sinusoidal encoding with 1-based positions and features; odd features use sine."""
    out = np.empty((T, d))
    for t in range(1, T + 1):
        for j in range(1, d + 1):
            arg = t / 10000.0 ** (2 * ((j - 1) // 2) / d) * alpha
            out[t - 1, j - 1] = np.sin(arg) if j % 2 == 1 else np.cos(arg)
    return out


def standard_classifier(tokens, mask, weights, cfg):
    """Logits of a width-``d`` standard encoder classifier for one sequence.

    ``weights`` holds matrix-form parameters: ``embedding``, ``pe`` (T, d),
    ``layers`` (list of dicts with ``wq/wk/wv`` head lists, ``wo``, ``w1``,
    ``b1``, ``w2``, ``b2``, ``g1``, ``be1``, ``g2``, ``be2``), ``W``, ``b``.
    """
    tokens = np.asarray(tokens)
    mask = np.asarray(mask, dtype=bool)
    T = len(tokens)
    x = weights["embedding"][tokens] + weights["pe"][:T]
    attn_mask = None
    if not mask.all():
        attn_mask = np.where(mask, 0.0, _NEG)[None, :].repeat(T, axis=0)
    for lw in weights["layers"]:
        x = standard_encoder_layer(
            x,
            (lw["wq"], lw["wk"], lw["wv"], lw["wo"]),
            (lw["w1"], lw["b1"], lw["w2"], lw["b2"]),
            (lw["g1"], lw["be1"]),
            (lw["g2"], lw["be2"]),
            cfg.ln_eps,
            cfg.activation,
            attn_mask,
        )
    pooled = x[mask].mean(axis=0)
    return pooled @ weights["W"] + weights["b"]


def matrix_weights_from_model(model):
    """Matrix-form weights of a ``p = 1`` model whose transform is ``Z = [1]``."""
    cfg = model.config
    if cfg.p != 1 or cfg.transform_op.Z[0, 0] != 1.0:
        raise ValueError("matrix weights exist only for p = 1 models with Z = [1]")
    P = model.params
    pe = model.pe_strategy()
    if cfg.pe == "learnable":
        pe_mat = np.asarray(pe.learn_table)[:, :, 0]
    else:
        pe_mat = sinusoidal_pe(cfg.T, cfg.d, float(np.asarray(pe.alphas)[0]))
    layers = []
    for i in range(cfg.layers):
        def g(n, i=i):
            return np.asarray(P[f"layers.{i}.{n}"])
        layers.append({
            "wq": [w[:, :, 0] for w in g("attn.wq")],
            "wk": [w[:, :, 0] for w in g("attn.wk")],
            "wv": [w[:, :, 0] for w in g("attn.wv")],
            "wo": g("attn.wo")[:, :, 0],
            "w1": g("ffn.w1")[:, :, 0], "b1": g("ffn.b1")[0, :, 0],
            "w2": g("ffn.w2")[:, :, 0], "b2": g("ffn.b2")[0, :, 0],
            "g1": g("ln1.gamma")[0, :, 0], "be1": g("ln1.beta")[0, :, 0],
            "g2": g("ln2.gamma")[0, :, 0], "be2": g("ln2.beta")[0, :, 0],
        })
    return {"embedding": np.asarray(P["embedding"]), "pe": pe_mat, "layers": layers,
            "W": np.asarray(P["classifier.weight"]), "b": np.asarray(P["classifier.bias"])}
