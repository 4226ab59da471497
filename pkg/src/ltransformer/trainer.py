"""Desk-scale training: AdamW, warmup + cosine schedule, gradient clipping,
synthetic datasets, dataset files and metric reports."""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import TrainingError
from .gradients import Batch, loss_and_grad

NO_DECAY_SUFFIXES = (".b1", ".b2", ".gamma", ".beta", ".bias")


@dataclass
class TrainConfig:
    lr_peak: float = 3e-4
    weight_decay: float = 0.01
    warmup_frac: float = 0.10
    lr_floor: float = 1e-5
    clip_norm: float = 1.0
    epochs: int = 20
    batch: int = 32
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.warmup_frac < 1:
            raise ValueError("warmup_frac must lie strictly between 0 and 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.epochs < 0 or self.batch < 1:
            raise ValueError("epochs must be >= 0 and batch >= 1")
        self.betas = tuple(self.betas)


def decays(name):
    """Weight decay applies to everything except LayerNorm scale/shift and biases."""
    return not name.endswith(NO_DECAY_SUFFIXES)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state, lr, cfg):
    """One AdamW update with decoupled weight decay; returns ``(new_params, new_state)``."""
    b1, b2 = cfg.betas
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        q = p * (1 - lr * cfg.weight_decay) if decays(name) else p
        new_params[name] = q - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(t, m_new, v_new)


def warmup_steps(total_steps, cfg):
    return max(1, math.ceil(cfg.warmup_frac * total_steps))


def lr_schedule(step, total_steps, cfg):
    """Linear warmup to ``lr_peak`` over the first ``warmup_frac`` of steps, then cosine to ``lr_floor``.

    ``lr(0) = lr_peak / W`` and ``lr(W - 1) = lr(W) = lr_peak`` where ``W``
    is :func:`warmup_steps`; the last step ``total_steps - 1`` lands on ``lr_floor``.
    """
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    w = warmup_steps(total_steps, cfg)
    if step < w:
        return cfg.lr_peak * (step + 1) / w
    span = total_steps - 1 - w
    if span <= 0:
        return cfg.lr_peak
    progress = (step - w) / span
    return cfg.lr_floor + (cfg.lr_peak - cfg.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads, max_norm):
    """Scale all gradients by ``max_norm / norm`` when the global L2 norm exceeds ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


# -- datasets -------------------------------------------------------------------


@dataclass
class Dataset:
    sequences: list  # [(token id list, label)]
    vocab: int
    num_classes: int

    def __post_init__(self):
        for i, (ids, label) in enumerate(self.sequences):
            if not 0 <= label < self.num_classes:
                raise ValueError(f"example {i}: label {label} outside [0, {self.num_classes})")
            if any(not 0 <= t < self.vocab for t in ids):
                raise ValueError(f"example {i}: token id outside [0, {self.vocab})")

    def __len__(self):
        return len(self.sequences)

    @property
    def labels(self):
        return np.array([y for _, y in self.sequences], dtype=np.int64)

    def to_arrays(self, T=None):
        """Padded ``(tokens, mask, labels)``; sequences longer than ``T`` are truncated."""
        T = T or max(len(ids) for ids, _ in self.sequences)
        n = len(self.sequences)
        tokens = np.zeros((n, T), dtype=np.int64)
        mask = np.zeros((n, T), dtype=bool)
        for i, (ids, _) in enumerate(self.sequences):
            ids = list(ids)[:T]
            tokens[i, :len(ids)] = ids
            mask[i, :len(ids)] = True
        return tokens, mask, self.labels

    def split(self, frac, seed=0):
        """Seeded shuffle, then ``(first frac, rest)``."""
        order = np.random.default_rng(seed).permutation(len(self.sequences))
        cut = int(round(frac * len(order)))
        pick = lambda idx: Dataset([self.sequences[i] for i in idx], self.vocab, self.num_classes)
        return pick(order[:cut]), pick(order[cut:])


def synth_dataset(kind, n, T, vocab, classes, seed=0, noise=0.0):
    """Deterministic synthetic classification data.

    ``keyword``: token ids ``0 .. classes-1`` are class keywords; each sequence
    is background tokens drawn from the remaining ids with one to three copies
    of its class keyword planted at random positions.

    ``slice-frequency``: a marker token recurs with a class-dependent period
    (``classes + 1`` ids are reserved: the marker and ``classes`` unused ids).
    Both the spacing and the marker count carry the label.

    ``noise`` is the probability of replacing a label with a uniformly drawn one.
    Class counts are balanced to within one.
    """
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    seqs = []
    if kind == "keyword":
        if vocab <= classes:
            raise ValueError("keyword data needs vocab > classes")
        for y in labels:
            ids = rng.integers(classes, vocab, size=T)
            k = rng.integers(1, 4)
            ids[rng.choice(T, size=min(k, T), replace=False)] = y
            seqs.append((ids.tolist(), int(y)))
    elif kind == "slice-frequency":
        marker = 0
        if vocab <= classes + 1:
            raise ValueError("slice-frequency data needs vocab > classes + 1")
        for y in labels:
            ids = rng.integers(classes + 1, vocab, size=T)
            period = int(y) + 2
            phase = rng.integers(period)
            ids[phase::period] = marker
            seqs.append((ids.tolist(), int(y)))
    else:
        raise ValueError(f"unknown synthetic dataset kind {kind!r}")
    if noise > 0:
        flip = rng.random(n) < noise
        seqs = [(ids, int(rng.integers(classes)) if f else y) for (ids, y), f in zip(seqs, flip)]
    return Dataset(seqs, vocab, classes)


def write_dataset(ds, path):
    with open(path, "w") as fh:
        for ids, y in ds.sequences:
            fh.write(f"{y}\t{' '.join(map(str, ids))}\n")


def read_dataset(path, vocab=None, num_classes=None):
    """Read ``label<TAB>id id id ...`` lines; ``vocab``/``num_classes`` default to the observed maxima + 1."""
    seqs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                label, rest = line.split("\t", 1)
                seqs.append(([int(t) for t in rest.split()], int(label)))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'label<TAB>ids'") from None
    if vocab is None:
        vocab = 1 + max(max(ids, default=0) for ids, _ in seqs)
    if num_classes is None:
        num_classes = 1 + max(y for _, y in seqs)
    try:
        return Dataset(seqs, vocab, num_classes)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


# -- training loop ------------------------------------------------------------------


def evaluate(model, dataset, batch_size=256, execution="batched"):
    """Mean cross-entropy and accuracy over a dataset."""
    tokens, mask, labels = dataset.to_arrays(model.config.T)
    logits = model.predict_logits(tokens, mask, batch_size=batch_size, execution=execution)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    return loss, acc


def train(model, dataset, cfg, eval_dataset=None, execution="batched", callback=None):
    """Fixed-epoch AdamW training with no early stopping or checkpoint selection.

    Mutates and returns ``model`` together with the metric history: one
    record per epoch (epoch 0 is the untrained model) holding the mean
    training loss over the epoch's steps and the end-of-epoch accuracy.
    """
    tokens, mask, labels = dataset.to_arrays(model.config.T)
    n = len(labels)
    steps_per_epoch = math.ceil(n / cfg.batch)
    total = steps_per_epoch * cfg.epochs
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()

    def record(epoch, train_loss):
        rec = {"epoch": epoch, "loss": train_loss}
        rec["accuracy"] = evaluate(model, dataset, execution=execution)[1]
        if eval_dataset is not None:
            rec["eval_loss"], rec["eval_accuracy"] = evaluate(model, eval_dataset, execution=execution)
        return rec

    history = [record(0, evaluate(model, dataset, execution=execution)[0])]
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for s in range(steps_per_epoch):
            idx = order[s * cfg.batch:(s + 1) * cfg.batch]
            batch = Batch(tokens[idx], mask[idx], labels[idx])
            loss, grads = loss_and_grad(model, batch, execution=execution)
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}, step {step}: {loss}")
            grads, _ = clip_gradients(grads, cfg.clip_norm)
            model.params, state = adamw_step(model.params, grads, state, lr_schedule(step, total, cfg), cfg)
            losses.append(loss)
            step += 1
        history.append(record(epoch, float(np.mean(losses))))
        if callback is not None:
            callback(history[-1])
    return model, history


def write_history(history, csv_path=None, json_path=None):
    keys = list(history[0]) if history else ["epoch", "loss", "accuracy"]
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for rec in history:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in rec.items()})
    if json_path:
        with open(json_path, "w") as fh:
            json.dump({"schema": "ltransformer.history/1", "history": history}, fh, indent=2)


def train_config_from_dict(data):
    known = set(TrainConfig.__dataclass_fields__)
    return TrainConfig(**{k: v for k, v in data.items() if k in known})

