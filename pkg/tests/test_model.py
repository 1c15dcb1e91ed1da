import itertools

import numpy as np
import pytest

from redimnet import tensor as T
from redimnet.blocks import BLOCK1D_KINDS, BLOCK2D_KINDS
from redimnet.config import load
from redimnet.errors import ConfigError, InputError
from redimnet.model import (ModelConfig, StageConfig, analytic_params, build, count_macs, count_params,
                            format_stage_table, measure_macs, stage_shapes, with_stages)
from redimnet.nn import Linear


def tiny(**kw):
    base = dict(c=2, embedding_dim=16, reduce=8, heads=2, pool_hidden=8)
    base.update(kw)
    return ModelConfig(**base)


def test_default_schedule_shapes():
    rows = stage_shapes(ModelConfig(c=16))
    assert [r.sf for r in rows] == [1, 2, 2, 2, 1]
    assert [r.out_shape[:2] for r in rows] == [(16, 72), (32, 36), (64, 18), (128, 9), (128, 9)]
    assert {r.volume for r in rows} == {16 * 72 * 132}
    assert rows[2].in_shape == (32, 36, 132) and rows[2].out_shape == (64, 18, 132)
    assert rows[2].symbolic() == ("(C*2, F/2, T)", "2", "C*4", "(C*4, F/4, T)", "C*F*T")


def test_single_stage_in_equals_out():
    row, = stage_shapes(ModelConfig(c=4, stages=(StageConfig(1, 1),)))
    assert row.in_shape == row.out_shape


def test_volume_violation_names_stage():
    stages = (StageConfig(1, 1), StageConfig(1, 2))
    with pytest.raises(ConfigError, match="stage 1"):
        build(tiny(stages=stages))


def test_indivisible_frequency_rejected():
    stages = tuple(StageConfig(2, 2 ** (i + 1)) for i in range(4))
    with pytest.raises(ConfigError, match="stage 3.*divisible"):
        ModelConfig.from_dict({"c": 2, "heads": 2, "stages": [vars(s) for s in stages]})


def test_malformed_stage_entry_is_config_error():
    with pytest.raises(ConfigError, match="stage 0"):
        ModelConfig.from_dict({"stages": [{"sf": 1, "mult": 1, "depth": 2}]})
    with pytest.raises(ConfigError, match="stage 1"):
        ModelConfig.from_dict({"stages": [{"sf": 1}, {"sf": "x"}]})


def test_stage_table_text():
    text = format_stage_table(ModelConfig())
    assert "(C*8, F/8, T)" in text
    assert text.count("C*F*T") == 5


def test_forward_shapes_and_time(rng):
    m = build(tiny())
    feats = rng.standard_normal((3, 72, 132)).astype(np.float32)
    acc = m.frame_features(feats)
    assert acc.shape == (3, 2 * 72, 132)
    emb = m(feats)
    assert emb.shape == (3, 16)
    assert np.all(np.isfinite(emb.data))
    assert emb.data.std(axis=0).min() > 0


def test_default_embedding_dim():
    m = build(ModelConfig(c=2, heads=2, pool_hidden=8))
    assert m(np.zeros((2, 72, 20), dtype=np.float32)).shape == (2, 192)


def test_forward_rejects_wrong_rows():
    with pytest.raises(InputError):
        build(tiny()).embed(np.zeros((1, 40, 10)))


def test_identity_stages_pass_stem_through(rng):
    stages = tuple(StageConfig(1, 1, 2, "convnext2d", "skip") for _ in range(3))
    m = build(tiny(stages=stages)).eval()
    feats = rng.standard_normal((2, 72, 11)).astype(np.float32)
    with T.no_grad():
        stem = T.gelu(m.stem_bn(m.stem(T.reshape(T.Tensor(feats), (2, 1, 72, 11))))).data
        acc = m.frame_features(feats).data
    # plain running sum: each identity stage adds the accumulator to itself
    np.testing.assert_array_equal(acc, 8 * stem.reshape(2, 144, 11))
    assert np.all(np.isfinite(m.embed(feats)))


def test_eval_embeddings_are_bit_identical(rng):
    feats = rng.standard_normal((2, 72, 40)).astype(np.float32)
    a = build(tiny(seed=5)).embed(feats)
    b = build(tiny(seed=5)).embed(feats)
    assert a.tobytes() == b.tobytes()
    assert build(tiny(seed=6)).embed(feats).tobytes() != a.tobytes()


def test_variable_length_inputs(rng):
    m = build(tiny())
    for t in (132, 265):
        assert m.embed(rng.standard_normal((1, 72, t))).shape == (1, 16)


def test_param_count_linear():
    assert count_params(Linear(16, 8)) == 136


def test_embedding_dim_delta_is_head_delta():
    a, b = tiny(embedding_dim=16), tiny(embedding_dim=32)
    width = a.width
    delta = (2 * width * 32 + 2 * 32) - (2 * width * 16 + 2 * 16)
    assert count_params(build(b)) - count_params(build(a)) == delta
    assert analytic_params(b) - analytic_params(a) == delta


@pytest.mark.parametrize("kind2d,kind1d", list(itertools.product(BLOCK2D_KINDS, BLOCK1D_KINDS)))
def test_accounting_matches_built_model(kind2d, kind1d):
    cfg = with_stages(ModelConfig(c=2, embedding_dim=24, reduce=8, heads=2, pool_hidden=16), kind2d=kind2d,
                      kind1d=kind1d)
    m = build(cfg)
    assert analytic_params(cfg) == count_params(m)
    assert count_macs(cfg) == measure_macs(m)


def test_mac_count_scales_with_duration():
    cfg = tiny()
    assert count_macs(cfg, 4.0) > count_macs(cfg, 2.0)
    assert count_macs(cfg, 2.0) == measure_macs(build(cfg), 2.0)


def test_shipped_configs_validate():
    for name in ("b0_candidate", "b2_candidate", "default", "toy"):
        cfg = load(name).model
        assert analytic_params(cfg) > 0
        assert stage_shapes(cfg)[-1].volume == cfg.width * 132


def test_toy_config_is_about_100k_params():
    n = analytic_params(load("toy").model)
    assert 80_000 <= n <= 120_000
