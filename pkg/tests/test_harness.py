import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ltransformer.encoder import Model, ModelConfig
from ltransformer.harness import bench, count_params, flop_model, log2_exact, verify_equivalence
from ltransformer.ltransform import dct_matrix


def corrupted_dct(p, factor=1.01):
    op = dct_matrix(p)
    object.__setattr__(op, "Z_inv", op.Z_inv * factor)
    return op


def test_equivalence_p1_and_p4():
    rep = verify_equivalence(ModelConfig(T=8, d=16, p=1), trials=3)
    assert rep.passed
    rep = verify_equivalence(ModelConfig(T=8, d=16, p=4), trials=20)
    assert rep.passed and rep.max_error <= 1e-12
    checks = rep.worst_by_check()
    assert {"mha.global", "model.p1"} <= set(checks)
    assert {f"mha.slice{i}" for i in range(4)} <= set(checks)
    assert {f"ffn.slice{i}" for i in range(4)} <= set(checks)
    assert len(rep.entries) == 20 * (4 + 1 + 4 + 1)


@pytest.mark.parametrize("factor", [1.01, 1 + 1e-9])
def test_equivalence_negative_control(factor):
    rep = verify_equivalence(ModelConfig(T=8, d=16, p=4), trials=3, transform=corrupted_dct(4, factor))
    assert not rep.passed
    assert not any(e["passed"] for e in rep.entries if e["check"].startswith("mha.slice"))
    d = rep.to_dict()
    assert d["passed"] is False and d["kind"] == "equivalence"


def test_param_counts_match_initialized_model():
    for kw in (dict(p=1), dict(p=2), dict(p=4, pe="learnable"), dict(p=4, pe="learnable_alpha", layers=3)):
        cfg = ModelConfig(T=8, d=16, heads=4, num_classes=3, **kw)
        rep = count_params(cfg)
        assert rep.total == Model.init(cfg).n_params()
        assert rep.total == sum(n for _, n in rep.rows())
        assert rep.encoder == rep.layers * rep.per_layer


def test_param_ratio_targets():
    r128 = count_params(ModelConfig(T=128, d=128, p=4, heads=4, layers=4)).ratio
    r256 = count_params(ModelConfig(T=128, d=256, p=4, heads=4, layers=4)).ratio
    assert abs(r128 - 0.256) <= 0.003
    assert abs(r256 - 0.253) <= 0.003
    base = ModelConfig(T=128, d=128, p=4, heads=4, layers=4)
    assert count_params(base.replace(pe="learnable")).total - count_params(base).total == 16384


@pytest.mark.parametrize("d", [64, 128, 256])
@pytest.mark.parametrize("p", [2, 4])
def test_param_ratio_bounds(d, p):
    r = count_params(ModelConfig(T=16, d=d, p=p, heads=4)).ratio
    assert 1 / p <= r <= 1 / p + 0.01
    assert count_params(ModelConfig(T=16, d=d, p=1, heads=4)).ratio == 1.0


def test_flop_model_values():
    std = flop_model(T=128, d=128, p=1)
    assert std.standard_total == 29_360_128 == std.tensor_total
    ten = flop_model(T=128, d=128, p=4)
    assert ten.tensor_total == 10_518_528
    assert isinstance(ten.tensor_total, int)
    assert ten.projection_ffn_ratio == 0.25
    assert flop_model(ModelConfig(T=32, d=16, p=4)).T == 32
    assert flop_model(ModelConfig(T=32, d=16, p=4), T=64).T == 64
    with pytest.raises(ValueError):
        flop_model(T=0, d=4, p=2)


@given(st.integers(1, 512), st.integers(1, 64).map(lambda k: 8 * k), st.sampled_from([1, 2, 4, 8]))
def test_flop_model_formulas(T, d, p):
    rep = flop_model(T=T, d=d, p=p)
    assert rep.standard_total == 12 * T * d * d + 2 * T * T * d
    assert rep.tensor_total == 12 * T * d * d // p + 2 * T * T * d + T * d * log2_exact(p)
    for name in ("attention_scores", "attention_times_v"):
        _, s, t = rep.row(name)
        assert s == t
    for name in ("qkv_projections", "output_projection", "ffn"):
        _, s, t = rep.row(name)
        assert t * p == s
    assert sum(r[2] for r in rep.rows) == rep.tensor_total


def test_flop_model_non_power_of_two():
    rep = flop_model(T=4, d=6, p=3)
    assert rep.row("transform")[2] == pytest.approx(24 * np.log2(3), rel=1e-15)
    assert log2_exact(8) == 3 and isinstance(log2_exact(8), int)


def test_bench_structure():
    rep = bench(ModelConfig(T=8, d=16, p=4), reps=3)
    for mode in ("sequential", "batched"):
        assert len(rep["modes"][mode]["samples"]) == 3
        assert rep["modes"][mode]["median"] == sorted(rep["modes"][mode]["samples"])[1]
    assert rep["identical_outputs"] is True
    assert rep["projection_ffn_flop_ratio"] == 0.25
    with pytest.raises(ValueError):
        bench(ModelConfig(T=8, d=16, p=4), reps=2)
