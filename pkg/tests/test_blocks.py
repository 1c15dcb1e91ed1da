import numpy as np
import pytest

from redimnet import tensor as T
from redimnet.blocks import (BLOCK1D_KINDS, BLOCK2D_KINDS, AttentiveStatsPool, Block1d, Block2d, ConvNeXt1d, FwSE,
                             MultiHeadAttention, TransformerEncoder, to_1d, to_2d)
from redimnet.errors import ConfigError
from redimnet.tensor import Tensor


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


# -- reshape operators --------------------------------------------------------

def test_fold_rule():
    x = np.arange(24.0).reshape(1, 2, 3, 4)
    y = to_1d(t64(x)).data
    assert y.shape == (1, 6, 4)
    assert np.array_equal(y[0, 5], x[0, 1, 2])


def test_unfold_inverts_fold(rng):
    x = rng.standard_normal((2, 3, 5, 7))
    assert np.array_equal(to_2d(to_1d(t64(x)), 3, 5).data, x)


def test_stage_shapes_share_width(rng):
    c = 3
    a = to_1d(t64(rng.standard_normal((1, c, 72, 4))))
    b = to_1d(t64(rng.standard_normal((1, 2 * c, 36, 4))))
    assert a.shape[1] == b.shape[1] == 72 * c


def test_unfold_width_check():
    x = t64(np.zeros((1, 864, 2)))
    assert to_2d(x, 24, 36).shape == (1, 24, 36, 2)
    with pytest.raises(ConfigError, match="840"):
        to_2d(x, 24, 35)


def test_reinterpretation_is_relabeling_not_transpose(rng):
    x = rng.standard_normal((1, 4, 72, 3))
    y = to_2d(to_1d(t64(x)), 8, 36).data
    assert np.array_equal(y, x.reshape(1, 8, 36, 3))
    # channel 1 of the new map is the upper half of channel 0's frequency axis
    assert np.array_equal(y[0, 1], x[0, 0, 36:])


# -- 2D blocks ----------------------------------------------------------------

@pytest.mark.parametrize("kind", BLOCK2D_KINDS)
def test_block2d_identity_at_init(kind, rng):
    b = Block2d(4, 4, 8, 1, 2, kind, rng=rng)
    x = np.abs(rng.standard_normal((2, 4, 8, 5))).astype(np.float32)  # post-sum ReLU needs x >= 0
    for mode in (True, False):
        b.train(mode)
        assert np.array_equal(b(Tensor(x)).data, x)


def test_convnext2d_identity_for_signed_inputs(rng):
    b = Block2d(4, 4, 8, 1, 1, "convnext2d", rng=rng)
    x = rng.standard_normal((2, 4, 8, 5)).astype(np.float32)
    assert np.array_equal(b(Tensor(x)).data, x)


@pytest.mark.parametrize("kind", BLOCK2D_KINDS)
def test_stage3_downsampling_shape(kind, rng):
    c, f, t = 4, 72, 132
    b = Block2d(2 * c, 4 * c, f // 2, 2, 1, kind, rng=rng)
    y = b(Tensor(rng.standard_normal((1, 2 * c, f // 2, t)).astype(np.float32)))
    assert y.shape == (1, 4 * c, f // 4, t)
    assert y.shape[1] * y.shape[2] == 2 * c * (f // 2)


def test_block2d_rejects_bad_stride_and_kind():
    with pytest.raises(ConfigError, match="divisible"):
        Block2d(4, 8, 9, 2, 1, "convnext2d")
    with pytest.raises(ConfigError, match="kind"):
        Block2d(4, 4, 8, 1, 1, "res2net")


def test_block2d_rejects_wrong_input_shape(rng):
    b = Block2d(4, 4, 8, 1, 1, "convnext2d", rng=rng)
    with pytest.raises(ConfigError):
        b(Tensor(np.zeros((1, 4, 6, 3), dtype=np.float32)))


def test_fwse_zero_excitation_halves(rng):
    se = FwSE(8, rng=rng)
    se.fc2.weight.data[:] = 0
    se.fc2.bias.data[:] = 0
    x = rng.standard_normal((2, 3, 8, 5)).astype(np.float32)
    np.testing.assert_array_equal(se(Tensor(x)).data, x / 2)


def test_fwse_saturated_gates_are_identity(rng):
    se = FwSE(8, rng=rng)
    se.fc2.bias.data[:] = 30.0
    x = rng.standard_normal((2, 3, 8, 5))
    y = se(t64(x)).data
    assert np.abs(y - x).max() < 1e-3
    g = se.gates(t64(x)).data
    assert np.all((g > 0) & (g <= 1))


@pytest.mark.parametrize("shape", [(1, 1, 4, 1), (2, 3, 8, 7), (1, 5, 12, 2)])
def test_fwse_keeps_shape(shape, rng):
    se = FwSE(shape[2], rng=rng)
    assert se(t64(rng.standard_normal(shape))).shape == shape


# -- 1D blocks ----------------------------------------------------------------

def test_skip_is_bit_exact(rng):
    x = rng.standard_normal((2, 16, 9)).astype(np.float32)
    y = Block1d(16, "skip")(Tensor(x))
    assert np.array_equal(y.data, x)


@pytest.mark.parametrize("kind", BLOCK1D_KINDS)
def test_block1d_identity_at_init(kind, rng):
    b = Block1d(32, kind, 8, heads=2, rng=rng)
    x = rng.standard_normal((2, 32, 7)).astype(np.float32)
    assert np.array_equal(b(Tensor(x)).data, x)


@pytest.mark.parametrize("kind", BLOCK1D_KINDS)
def test_block1d_keeps_width_and_time(kind, rng):
    from redimnet.gradcheck import randomize_parameters
    b = Block1d(32, kind, 8, heads=2, rng=rng)
    randomize_parameters(b, rng)
    for t in (1, 4, 13):
        assert b(t64(rng.standard_normal((2, 32, t)))).shape == (2, 32, t)


def test_conv1d_mha_runs_conv_then_attention(rng):
    b = Block1d(32, "conv1d+mha", 8, heads=2, rng=rng)
    assert [type(p) for p in b.temporal] == [ConvNeXt1d, TransformerEncoder]


def test_fc_kind_has_no_temporal_context(rng):
    from redimnet.gradcheck import randomize_parameters
    b = Block1d(16, "fc", 4, rng=rng)
    randomize_parameters(b, rng)
    b.eval()
    b.norm.running_var[:] = 1.0
    x = rng.standard_normal((1, 16, 6))
    x2 = x.copy()
    x2[..., 3] += 1.0
    d = np.abs(b(t64(x)).data - b(t64(x2)).data).max(axis=1)[0]
    assert np.all(d[[0, 1, 2, 4, 5]] == 0) and d[3] > 0


def test_block1d_errors():
    with pytest.raises(ConfigError, match="kind"):
        Block1d(16, "lstm")
    with pytest.raises(ConfigError, match="width"):
        Block1d(16, "fc", 4)(t64(np.zeros((1, 8, 3))))


# -- attention ----------------------------------------------------------------

def _random_mha(rng, dim=8, heads=2):
    from redimnet.gradcheck import randomize_parameters
    m = MultiHeadAttention(dim, heads, rng=rng)
    randomize_parameters(m, rng)
    return m


def test_single_frame_attention_is_one(rng):
    m = _random_mha(rng)
    m(t64(rng.standard_normal((2, 1, 8))))
    assert m.last_attention.shape == (2, 2, 1, 1)
    assert np.all(m.last_attention == 1.0)


def test_attention_rows_sum_to_one(rng):
    m = _random_mha(rng)
    m(Tensor(rng.standard_normal((3, 11, 8)).astype(np.float32)))
    assert np.abs(m.last_attention.sum(axis=-1) - 1).max() < 1e-6


def test_encoder_is_permutation_equivariant(rng):
    from redimnet.gradcheck import randomize_parameters
    enc = TransformerEncoder(8, 2, rng=rng)
    randomize_parameters(enc, rng)
    x = rng.standard_normal((2, 8, 9))
    perm = rng.permutation(9)
    y = enc(t64(x)).data
    yp = enc(t64(x[..., perm])).data
    np.testing.assert_allclose(yp, y[..., perm], rtol=1e-12, atol=1e-12)


def test_heads_must_divide_width():
    with pytest.raises(ConfigError, match="heads"):
        MultiHeadAttention(10, 4)


# -- pooling ------------------------------------------------------------------

def _pool(rng, d=6):
    from redimnet.gradcheck import randomize_parameters
    p = AttentiveStatsPool(d, hidden=5, rng=rng)
    randomize_parameters(p, rng)
    return p


def test_pool_constant_over_time(rng):
    p = _pool(rng)
    frame = rng.standard_normal((2, 6, 1))
    out = p(t64(np.repeat(frame, 10, axis=2))).data
    np.testing.assert_allclose(out[:, :6], frame[..., 0], rtol=1e-12, atol=1e-12)
    assert np.all(out[:, 6:] <= np.sqrt(1e-7) + 1e-15)


def test_pool_weights_sum_to_one(rng):
    p = _pool(rng)
    out = p(Tensor(rng.standard_normal((4, 6, 17)).astype(np.float32)))
    assert out.shape == (4, 12)
    assert np.abs(p.last_weights.sum(axis=1) - 1).max() < 1e-6
    assert np.all(out.data[:, 6:] >= 0) and np.all(np.isfinite(out.data))


def test_pool_single_frame(rng):
    p = _pool(rng)
    h = rng.standard_normal((3, 6, 1))
    out = p(t64(h)).data
    assert np.all(p.last_weights == 1.0)
    np.testing.assert_array_equal(out[:, :6], h[..., 0])
    np.testing.assert_allclose(out[:, 6:], np.sqrt(1e-7), rtol=1e-12)


def test_pool_matches_direct_formula(rng):
    p = _pool(rng, d=4)
    h = rng.standard_normal((1, 4, 5))
    out = p(t64(h)).data[0]
    x = h[0]
    g = np.concatenate([x, np.repeat(x.mean(1, keepdims=True), 5, 1), np.repeat(x.std(1, keepdims=True), 5, 1)])
    e = p.score.weight.data[0, :, 0] @ np.tanh(p.attn.weight.data[:, :, 0] @ g + p.attn.bias.data[:, None])
    a = np.exp(e - e.max())
    a /= a.sum()
    mu = x @ a
    sd = np.sqrt(np.maximum(x ** 2 @ a - mu ** 2, 1e-7))
    np.testing.assert_allclose(out, np.concatenate([mu, sd]), rtol=1e-10)
