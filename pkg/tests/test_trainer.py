import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltransformer.encoder import Model, ModelConfig
from ltransformer.exceptions import TrainingError
from ltransformer.trainer import (
    AdamState,
    Dataset,
    TrainConfig,
    adamw_step,
    clip_gradients,
    decays,
    global_norm,
    lr_schedule,
    read_dataset,
    synth_dataset,
    train,
    train_config_from_dict,
    warmup_steps,
    write_dataset,
    write_history,
)


def test_train_config_validation():
    for bad in (dict(warmup_frac=0.0), dict(warmup_frac=1.0), dict(clip_norm=0.0), dict(batch=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    c = train_config_from_dict({"lr_peak": 1e-3, "epochs": 3, "ignored": 1})
    assert c.lr_peak == 1e-3 and c.epochs == 3


def test_decay_scope():
    assert decays("layers.0.attn.wq") and decays("embedding") and decays("pe.table")
    for name in ("layers.0.ffn.b1", "layers.0.ffn.b2", "layers.0.ln1.gamma", "layers.0.ln2.beta",
                 "classifier.bias"):
        assert not decays(name)


def test_adamw_trivial_cases():
    p = {"w": np.array([1.0, -2.0]), "layers.0.ffn.b1": np.array([0.5])}
    zero = {k: np.zeros_like(v) for k, v in p.items()}
    cfg = TrainConfig(weight_decay=0.0)
    new, _ = adamw_step(p, zero, AdamState(), 0.1, cfg)
    for k in p:
        np.testing.assert_array_equal(new[k], p[k])
    cfg = TrainConfig(weight_decay=0.01)
    new, _ = adamw_step(p, zero, AdamState(), 0.1, cfg)
    np.testing.assert_allclose(new["w"], p["w"] * (1 - 0.1 * 0.01), rtol=1e-15)
    np.testing.assert_array_equal(new["layers.0.ffn.b1"], p["layers.0.ffn.b1"])


def test_adamw_first_step_closed_form():
    cfg = TrainConfig(weight_decay=0.0)
    g = np.array([0.3, -2.0, 1e-3])
    new, state = adamw_step({"w": np.zeros(3)}, {"w": g}, AdamState(), 0.01, cfg)
    # bias-corrected first step: m_hat = g, v_hat = g^2
    np.testing.assert_allclose(new["w"], -0.01 * g / (np.abs(g) + cfg.adam_eps), rtol=1e-12)
    assert state.step == 1
    new2, state2 = adamw_step(new, {"w": g}, state, 0.01, cfg)
    np.testing.assert_allclose(new2["w"], 2 * new["w"], rtol=1e-12)


def test_adamw_errors():
    with pytest.raises(TrainingError, match="w"):
        adamw_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, AdamState(), 0.1, TrainConfig())
    with pytest.raises(ValueError):
        adamw_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), 0.1, TrainConfig())


def test_schedule_boundaries():
    cfg = TrainConfig(lr_peak=3e-4, lr_floor=1e-5, warmup_frac=0.1)
    total = 200
    W = warmup_steps(total, cfg)
    assert W == 20
    assert lr_schedule(0, total, cfg) == pytest.approx(3e-4 / W, rel=1e-15)
    assert lr_schedule(W - 1, total, cfg) == pytest.approx(3e-4, rel=1e-15)
    assert lr_schedule(W, total, cfg) == pytest.approx(3e-4, rel=1e-15)
    assert abs(lr_schedule(total - 1, total, cfg) - 1e-5) <= 1e-12
    lrs = [lr_schedule(s, total, cfg) for s in range(total)]
    assert all(a <= b for a, b in zip(lrs[:W - 1], lrs[1:W]))
    assert all(a >= b for a, b in zip(lrs[W:], lrs[W + 1:]))
    with pytest.raises(ValueError):
        lr_schedule(total, total, cfg)
    assert warmup_steps(3, cfg) == 1


def test_clipping_cases():
    g = {"a": np.array([0.3, 0.4])}
    out, n = clip_gradients(g, 1.0)
    assert n == pytest.approx(0.5) and np.array_equal(out["a"], g["a"])
    g = {"a": np.array([1.2, 1.6])}
    out, n = clip_gradients(g, 1.0)
    assert n == pytest.approx(2.0) and abs(global_norm(out) - 1.0) <= 1e-12
    with pytest.raises(ValueError):
        clip_gradients(g, 0.0)


@settings(max_examples=50)
@given(st.integers(0, 2**31), st.floats(0.01, 10.0))
def test_clipping_properties(seed, max_norm):
    r = np.random.default_rng(seed)
    g = {"a": r.standard_normal((3, 4)) * r.uniform(0.01, 10), "b": r.standard_normal(5)}
    out, norm = clip_gradients(g, max_norm)
    assert global_norm(out) <= max_norm * (1 + 1e-12)
    if norm > max_norm:
        u = np.concatenate([v.ravel() for v in g.values()])
        w = np.concatenate([v.ravel() for v in out.values()])
        cos = u @ w / (np.linalg.norm(u) * np.linalg.norm(w))
        assert abs(cos - 1.0) <= 1e-12


@pytest.mark.parametrize("kind", ["keyword", "slice-frequency"])
def test_synthetic_data(kind):
    a = synth_dataset(kind, 101, 12, 20, 3, seed=4)
    b = synth_dataset(kind, 101, 12, 20, 3, seed=4)
    assert a.sequences == b.sequences
    counts = np.bincount(a.labels, minlength=3)
    assert counts.max() - counts.min() <= 1
    assert all(len(ids) == 12 for ids, _ in a.sequences)
    if kind == "keyword":
        for ids, y in a.sequences:
            assert y in ids and all(t == y or t >= 3 for t in ids)
    assert synth_dataset(kind, 101, 12, 20, 3, seed=5).sequences != a.sequences


def test_synthetic_noise_and_errors():
    clean = synth_dataset("keyword", 500, 8, 20, 2, seed=0)
    noisy = synth_dataset("keyword", 500, 8, 20, 2, seed=0, noise=0.5)
    assert 0 < np.sum(clean.labels != noisy.labels) < 250
    with pytest.raises(ValueError):
        synth_dataset("keyword", 10, 8, 2, 2)
    with pytest.raises(ValueError):
        synth_dataset("copy", 10, 8, 20, 2)


def test_dataset_arrays_split_and_validation():
    ds = Dataset([([1, 2, 3], 0), ([4], 1), ([2, 2, 2, 2, 2], 1)], vocab=5, num_classes=2)
    tokens, mask, labels = ds.to_arrays(4)
    np.testing.assert_array_equal(tokens[1], [4, 0, 0, 0])
    np.testing.assert_array_equal(mask.sum(axis=1), [3, 1, 4])
    np.testing.assert_array_equal(labels, [0, 1, 1])
    tr, te = ds.split(2 / 3, seed=0)
    assert len(tr) == 2 and len(te) == 1
    with pytest.raises(ValueError):
        Dataset([([5], 0)], vocab=5, num_classes=2)
    with pytest.raises(ValueError):
        Dataset([([1], 2)], vocab=5, num_classes=2)


def test_dataset_file_roundtrip(tmp_path):
    ds = synth_dataset("keyword", 20, 6, 15, 2, seed=2)
    f = tmp_path / "d.tsv"
    write_dataset(ds, f)
    back = read_dataset(f, vocab=15, num_classes=2)
    assert back.sequences == ds.sequences
    inferred = read_dataset(f)
    assert inferred.num_classes == 2 and inferred.vocab <= 15
    bad = tmp_path / "bad.tsv"
    bad.write_text("1 2 3\n")
    with pytest.raises(ValueError, match="bad.tsv:1"):
        read_dataset(bad)
    bad.write_text("0\t1 99\n")
    with pytest.raises(ValueError):
        read_dataset(bad, vocab=10, num_classes=2)


CFG = ModelConfig(T=8, d=8, p=2, heads=2, vocab=20)


def test_zero_lr_leaves_parameters_unchanged():
    ds = synth_dataset("keyword", 64, 8, 20, 2, seed=1)
    model = Model.init(CFG)
    before = {k: v.copy() for k, v in model.params.items()}
    cfg = TrainConfig(lr_peak=0.0, lr_floor=0.0, weight_decay=0.01, epochs=2, batch=16)
    model, hist = train(model, ds, cfg)
    for k in before:
        np.testing.assert_array_equal(model.params[k], before[k])
    assert hist[-1]["accuracy"] == hist[0]["accuracy"]


def test_training_is_deterministic_and_loss_drops(tmp_path):
    ds = synth_dataset("keyword", 200, 8, 20, 2, seed=1)
    ev = synth_dataset("keyword", 50, 8, 20, 2, seed=2)
    cfg = TrainConfig(lr_peak=3e-3, epochs=3, batch=32, seed=7)
    m1, h1 = train(Model.init(CFG), ds, cfg, eval_dataset=ev)
    m2, h2 = train(Model.init(CFG), ds, cfg, eval_dataset=ev)
    assert h1 == h2
    for k in m1.params:
        assert np.array_equal(m1.params[k], m2.params[k])
    assert h1[1]["loss"] < h1[0]["loss"]
    assert [r["epoch"] for r in h1] == [0, 1, 2, 3]
    assert {"eval_loss", "eval_accuracy"} <= set(h1[0])
    write_history(h1, tmp_path / "h.csv", tmp_path / "h.json")
    doc = json.loads((tmp_path / "h.json").read_text())
    assert doc["history"] == h1
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,accuracy,eval_loss,eval_accuracy" and len(lines) == 5
    assert float(lines[1].split(",")[1]) == h1[0]["loss"]


def test_separable_keyword_task_is_learned():
    ds = synth_dataset("keyword", 400, 8, 20, 2, seed=1)
    cfg = ModelConfig(T=8, d=8, p=1, heads=2, vocab=20)
    _, hist = train(Model.init(cfg), ds, TrainConfig(lr_peak=3e-3, epochs=10, batch=32))
    assert hist[-1]["accuracy"] == 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_callback_and_divergence():
    ds = synth_dataset("keyword", 32, 8, 20, 2, seed=1)
    seen = []
    train(Model.init(CFG), ds, TrainConfig(epochs=2, batch=16), callback=seen.append)
    assert [r["epoch"] for r in seen] == [1, 2]
    model = Model.init(CFG)
    model.params["classifier.weight"][:] = np.inf
    with pytest.raises(TrainingError):
        train(model, ds, TrainConfig(epochs=1, batch=16))
    assert math.isfinite(TrainConfig().lr_peak)
