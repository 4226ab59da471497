"""Model-level gradients and the central finite-difference checker."""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autograd as ag
from .exceptions import TrainingError

FD_STEP = 1e-5
FD_FLOOR = 1e-12


class Batch(NamedTuple):
    tokens: np.ndarray
    mask: np.ndarray
    labels: np.ndarray


def make_batch(tokens, labels, mask=None):
    tokens = np.asarray(tokens)
    mask = np.ones(tokens.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return Batch(tokens, mask, np.asarray(labels))


def loss_and_grad(model, batch, loss_kind="cross_entropy", reduction="mean", execution="batched"):
    """Return ``(loss, {param name: gradient})`` for one batch."""
    if loss_kind != "cross_entropy":
        raise ValueError(f"unsupported loss {loss_kind!r}")
    if len(batch.tokens) == 0:
        raise ValueError("empty batch")
    tape = ag.Tape()
    tracked = {name: tape.leaf(v, name) for name, v in model.params.items()}
    logits, _ = model.forward(batch.tokens, batch.mask, params=tracked, execution=execution)
    lv = ag.value(logits)
    if not np.all(np.isfinite(lv)):
        bad = np.argwhere(~np.isfinite(lv))[0]
        raise TrainingError(f"non-finite logits in forward pass at batch row {bad[0]}")
    loss = ag.cross_entropy(logits, batch.labels, reduction)
    return float(ag.value(loss)), tape.backward(loss)


def grad(model, batch, loss_kind="cross_entropy", reduction="mean", execution="batched"):
    """Gradients of the classification loss for every trainable parameter."""
    return loss_and_grad(model, batch, loss_kind, reduction, execution)[1]


def batch_loss(model, batch, params=None, reduction="mean"):
    logits, _ = model.forward(batch.tokens, batch.mask, params=params)
    return float(ag.cross_entropy(logits, batch.labels, reduction))


@dataclass
class GradCheckReport:
    """Per-parameter max relative error between analytic and central-difference gradients.

    The error of a parameter is ``max|a - n| / max(max|a|, max|n|, floor)``.
    """

    errors: dict = field(default_factory=dict)
    tol: float = 1e-5

    @property
    def passed(self):
        return all(e <= self.tol for e in self.errors.values())

    @property
    def worst(self):
        return max(self.errors.items(), key=lambda kv: kv[1]) if self.errors else (None, 0.0)

    def lines(self):
        return [f"{'PASS' if e <= self.tol else 'FAIL'} {name}: rel err {e:.3e}"
                for name, e in self.errors.items()]


def relative_error(analytic, numeric, floor=FD_FLOOR):
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_grad(f, x, h=FD_STEP):
    """Central differences of scalar ``f`` with respect to array ``x`` (perturbed in place, restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def finite_difference_check(model, batch, h=FD_STEP, tol=1e-5, names=None, reduction="mean"):
    """Compare analytic gradients with central differences for the named parameters (default: all)."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    analytic = grad(model, batch, reduction=reduction)
    work = {k: v.copy() for k, v in model.params.items()}
    report = GradCheckReport(tol=tol)
    for name in names or list(work):
        num = numeric_grad(lambda: batch_loss(model, batch, work, reduction), work[name], h)
        report.errors[name] = relative_error(analytic[name], num)
    return report
