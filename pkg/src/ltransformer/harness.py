"""Verification and reporting: slice-wise equivalence checks, parameter counts,
the analytic per-layer FLOP model and slice-execution micro-benchmarks."""

import math
import statistics
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import reference as ref
from .encoder import FfnParams, Model, ModelConfig, init_attention, init_ffn, l_mha, tffn
from .gradients import loss_and_grad, make_batch

EQUIV_TOL = 1e-11
REPORT_SCHEMA = "ltransformer.report/1"


def rel_error(got, want, floor=1.0e-300):
    got, want = np.asarray(got), np.asarray(want)
    return float(np.max(np.abs(got - want)) / max(float(np.max(np.abs(want))), floor))


# -- equivalence ------------------------------------------------------------------


@dataclass
class EquivalenceReport:
    """One entry per ``(check, trial)`` with its relative error."""

    entries: list = field(default_factory=list)
    tol: float = EQUIV_TOL

    def add(self, check, trial, err):
        self.entries.append({"check": check, "trial": trial, "rel_error": err, "passed": err <= self.tol})

    @property
    def passed(self):
        return bool(self.entries) and all(e["passed"] for e in self.entries)

    @property
    def max_error(self):
        return max((e["rel_error"] for e in self.entries), default=0.0)

    def worst_by_check(self):
        out = {}
        for e in self.entries:
            out[e["check"]] = max(out.get(e["check"], 0.0), e["rel_error"])
        return out

    def to_dict(self):
        return {"schema": REPORT_SCHEMA, "kind": "equivalence", "tol": self.tol, "passed": self.passed,
                "max_error": self.max_error, "entries": self.entries}


def _slice_heads(w, i):
    return [w[j, :, :, i] for j in range(w.shape[0])]


def _check_attention(cfg, P, x, report, trial):
    L = cfg.transform_op
    y = l_mha(x, P, cfg)
    x_hat, y_hat = x @ L.Z.T, y @ L.Z.T
    slices = []
    for i in range(cfg.p):
        want = ref.standard_mha(x_hat[:, :, i], _slice_heads(P.wq, i), _slice_heads(P.wk, i),
                                _slice_heads(P.wv, i), P.wo[:, :, i])
        slices.append(want)
        report.add(f"mha.slice{i}", trial, rel_error(y_hat[:, :, i], want))
    # global form: assemble standard slice outputs, then map back
    report.add("mha.global", trial, rel_error(y, np.stack(slices, axis=-1) @ L.Z_inv.T))


def _check_ffn(cfg, P, x, report, trial):
    L = cfg.transform_op
    y = tffn(x, P, cfg)
    x_hat, y_hat = x @ L.Z.T, y @ L.Z.T
    for i in range(cfg.p):
        want = ref.standard_ffn(x_hat[:, :, i], P.w1[:, :, i], P.b1[0, :, i], P.w2[:, :, i], P.b2[0, :, i],
                                cfg.activation)
        report.add(f"ffn.slice{i}", trial, rel_error(y_hat[:, :, i], want))


def _check_full_model(cfg, rng, report, trial):
    base = cfg.replace(p=1, transform="identity", seed=int(rng.integers(2**31)))
    model = Model.init(base)
    weights = ref.matrix_weights_from_model(model)
    tokens = rng.integers(0, base.vocab, size=(2, base.T))
    mask = np.ones(tokens.shape, dtype=bool)
    mask[1, base.T // 2 + 1:] = False
    logits = model.forward(tokens, mask)[0]
    want = np.stack([ref.standard_classifier(tokens[b], mask[b], weights, base) for b in range(len(tokens))])
    report.add("model.p1", trial, rel_error(logits, want))


def verify_equivalence(cfg, trials=20, seed=0, transform=None, tol=EQUIV_TOL):
    """Check spectral slice outputs of L-MHA and TFFN against standalone width-``d_s``
    attention/FFN, plus the ``p = 1`` model against the matrix reference.

    ``transform`` overrides ``cfg.transform`` (used to feed deliberately broken
    transforms). Failures become report entries, never exceptions.
    """
    if transform is not None:
        cfg = cfg.replace(transform=transform)
    rng = np.random.default_rng(seed)
    report = EquivalenceReport(tol=tol)
    for trial in range(trials):
        x = rng.standard_normal((cfg.T, cfg.d_s, cfg.p))
        _check_attention(cfg, init_attention(cfg, rng), x, report, trial)
        ffn = init_ffn(cfg, rng)
        ffn = FfnParams(ffn.w1, ffn.w2, 0.1 * rng.standard_normal(ffn.b1.shape),
                        0.1 * rng.standard_normal(ffn.b2.shape))
        _check_ffn(cfg, ffn, x, report, trial)
        _check_full_model(cfg, rng, report, trial)
    return report


# -- parameter counting -------------------------------------------------------------


@dataclass
class ParamReport:
    """Trainable-scalar inventory.

    Per layer: attention ``4 d_s^2 p`` (Q, K, V over ``h`` heads of width
    ``d_h`` plus the output map, no biases); FFN ``2 d_s d_ff p + (d_ff + d_s) p``;
    two LayerNorms ``4 d_s p``. ``encoder`` is the layer stack alone, which is
    what ``ratio`` compares against the ``p = 1`` model of the same width.
    """

    config: dict
    embedding: int
    pe: int
    attention: int
    ffn: int
    layernorm: int
    layers: int
    classifier: int
    encoder: int
    total: int
    baseline_encoder: int
    ratio: float

    @property
    def per_layer(self):
        return self.attention + self.ffn + self.layernorm

    def rows(self):
        return [
            ("embedding", self.embedding),
            ("positional_encoding", self.pe),
            ("encoder.attention", self.attention * self.layers),
            ("encoder.ffn", self.ffn * self.layers),
            ("encoder.layernorm", self.layernorm * self.layers),
            ("classifier", self.classifier),
        ]

    def to_dict(self):
        return {"schema": REPORT_SCHEMA, "kind": "params", "config": self.config,
                "rows": [{"component": c, "count": n} for c, n in self.rows()],
                "per_layer": {"attention": self.attention, "ffn": self.ffn, "layernorm": self.layernorm},
                "layers": self.layers, "encoder": self.encoder, "total": self.total,
                "baseline_encoder": self.baseline_encoder, "ratio": self.ratio}


def _layer_counts(cfg):
    d_s, p, d_ff = cfg.d_s, cfg.p, cfg.d_ff_s
    attention = 3 * cfg.h * d_s * cfg.d_h * p + d_s * d_s * p
    ffn = 2 * d_s * d_ff * p + (d_ff + d_s) * p
    layernorm = 2 * 2 * d_s * p
    return attention, ffn, layernorm


def count_params(cfg):
    attention, ffn, layernorm = _layer_counts(cfg)
    pe = {"learnable": cfg.T * cfg.d_s * cfg.p, "learnable_alpha": cfg.p}.get(cfg.pe, 0)
    embedding = cfg.vocab * cfg.d
    classifier = cfg.d * cfg.num_classes + cfg.num_classes
    encoder = cfg.layers * (attention + ffn + layernorm)
    base = _layer_counts(cfg.replace(p=1, transform="dct"))
    baseline = cfg.layers * sum(base)
    return ParamReport(
        config=cfg.to_dict(), embedding=embedding, pe=pe, attention=attention, ffn=ffn,
        layernorm=layernorm, layers=cfg.layers, classifier=classifier, encoder=encoder,
        total=embedding + pe + encoder + classifier, baseline_encoder=baseline,
        ratio=encoder / baseline if baseline else 1.0,
    )


# -- FLOP model -----------------------------------------------------------------------


def _exact(v):
    v = Fraction(v)
    return int(v) if v.denominator == 1 else float(v)


def log2_exact(p):
    """``log2 p``: an int for powers of two, a float otherwise."""
    return p.bit_length() - 1 if p & (p - 1) == 0 else math.log2(p)


@dataclass
class FlopReport:
    """Per-layer FLOP rows for the standard and the tensor model (log base 2)."""

    T: int
    d: int
    p: int
    rows: list  # (operation, standard, tensor)

    @property
    def standard_total(self):
        return _exact(sum(Fraction(r[1]) for r in self.rows))

    @property
    def tensor_total(self):
        return _exact(sum(Fraction(r[2]) for r in self.rows))

    def row(self, name):
        for r in self.rows:
            if r[0] == name:
                return r
        raise KeyError(name)

    @property
    def projection_ffn_ratio(self):
        names = ("qkv_projections", "output_projection", "ffn")
        std = sum(Fraction(self.row(n)[1]) for n in names)
        ten = sum(Fraction(self.row(n)[2]) for n in names)
        return _exact(ten / std)

    def to_dict(self):
        return {"schema": REPORT_SCHEMA, "kind": "flops", "T": self.T, "d": self.d, "p": self.p,
                "log_base": 2,
                "rows": [{"operation": o, "standard": s, "tensor": t} for o, s, t in self.rows],
                "standard_total": self.standard_total, "tensor_total": self.tensor_total,
                "projection_ffn_ratio": self.projection_ffn_ratio}


def flop_model(cfg=None, T=None, d=None, p=None):
    """Evaluate every per-layer FLOP row; pass a :class:`ModelConfig` or ``T, d, p``."""
    if cfg is not None:
        T = cfg.T if T is None else T
        d, p = cfg.d, cfg.p
    if not all(isinstance(v, (int, np.integer)) and v > 0 for v in (T, d, p)):
        raise ValueError("T, d and p must be positive integers")
    T, d, p = int(T), int(d), int(p)
    tdd = Fraction(T * d * d)
    rows = [
        ("qkv_projections", 3 * tdd, 3 * tdd / p),
        ("attention_scores", T * T * d, T * T * d),
        ("attention_times_v", T * T * d, T * T * d),
        ("output_projection", tdd, tdd / p),
        ("ffn", 8 * tdd, 8 * tdd / p),
        ("transform", 0, Fraction(T * d) * Fraction(log2_exact(p))),
    ]
    return FlopReport(T, d, p, [(n, _exact(s), _exact(t)) for n, s, t in rows])


# -- benchmark ------------------------------------------------------------------------


def bench(cfg, reps=3, batch=8, seed=0):
    """Wall-clock forward+backward per slice-execution mode, with an output cross-check."""
    if reps < 3:
        raise ValueError("reps must be at least 3")
    model = Model.init(cfg)
    rng = np.random.default_rng(seed)
    b = make_batch(rng.integers(0, cfg.vocab, size=(batch, cfg.T)),
                   rng.integers(0, cfg.num_classes, size=batch))
    out = {"schema": REPORT_SCHEMA, "kind": "bench", "config": cfg.to_dict(), "reps": reps, "modes": {}}
    results = {}
    for mode in ("sequential", "batched"):
        samples = []
        for _ in range(reps):
            t0 = time.perf_counter()
            loss, grads = loss_and_grad(model, b, execution=mode)
            samples.append(time.perf_counter() - t0)
        results[mode] = (model.forward(b.tokens, b.mask, execution=mode)[0], loss, grads)
        out["modes"][mode] = {"samples": samples, "median": statistics.median(samples)}
    (ls, _, gs), (lb, _, gb) = results["sequential"], results["batched"]
    out["identical_outputs"] = bool(np.array_equal(ls, lb) and all(np.array_equal(gs[k], gb[k]) for k in gs))
    out["speedup"] = out["modes"]["sequential"]["median"] / out["modes"]["batched"]["median"]
    out["projection_ffn_flop_ratio"] = flop_model(cfg).projection_ffn_ratio
    return out


def default_config():
    return ModelConfig(T=8, d=16, p=4, heads=4)
