import math

import numpy as np
import pytest

from redimnet.errors import ConfigError, InputError
from redimnet.losses import (ClassifierHead, LossConfig, aam_from_cosine, aam_loss, margin_schedule, sf2_from_cosine,
                             sf2_warp)
from redimnet.tensor import Tensor

import gradcases


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def cross_entropy(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(labels)), labels].mean()


# -- AAM ----------------------------------------------------------------------

def test_aam_hand_example():
    loss = aam_from_cosine(t64([[1.0, 0.0]]), np.array([0]), s=2.0, m=0.0).data
    assert abs(loss - 0.126928) < 1e-6
    assert abs(loss - (-math.log(math.e ** 2 / (math.e ** 2 + 1)))) < 1e-15


def test_aam_margin_increases_loss():
    cos = t64([[1.0, 0.0], [0.3, 0.1]])
    base = aam_from_cosine(cos, np.array([0, 0]), s=2.0, m=0.0).data
    assert aam_from_cosine(cos, np.array([0, 0]), s=2.0, m=0.2).data > base


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("s", [1.0, 32.0])
def test_aam_zero_margin_is_cross_entropy(seed, s):
    r = np.random.default_rng(seed)
    head = ClassifierHead(10, 24, LossConfig(scale=s), seed=seed)
    emb = t64(r.standard_normal((64, 24)))
    labels = r.integers(0, 10, 64)
    got = aam_loss(emb, labels, head, m=0.0).data
    e = emb.data / np.linalg.norm(emb.data, axis=1, keepdims=True)
    w = head.weight.data / np.linalg.norm(head.weight.data, axis=1, keepdims=True)
    assert abs(got - cross_entropy(s * e @ w.T, labels)) < 1e-6


def test_aam_fallback_past_pi():
    # theta_y close to pi: cos(theta + m) would wrap back up, the fallback keeps decreasing
    cos = t64([[-0.99, 0.0]])
    m = 0.3
    loss = aam_from_cosine(cos, np.array([0]), s=1.0, m=m).data
    target = -0.99 - m * math.sin(m)
    assert abs(loss - cross_entropy(np.array([[target, 0.0]]), np.array([0]))) < 1e-12


def test_aam_target_logit_is_monotone_in_cos():
    grid = np.linspace(-1.0, 1.0, 401)
    vals = [aam_from_cosine(t64([[c, 0.0]]), np.array([0]), s=4.0, m=0.5).data for c in grid]
    assert np.all(np.diff(vals) < 0)


def test_aam_subcenter_takes_max():
    cfg = LossConfig(kind="aam_sc", subcenters=3)
    head = ClassifierHead(2, 4, cfg)
    assert head.weight.shape == (6, 4)
    head.weight.data[:] = 0.0
    head.weight.data[2] = [1, 0, 0, 0]        # class 0, sub-center 2
    head.weight.data[1] = [-1, 0, 0, 0]       # class 0, sub-center 1
    head.weight.data[0] = [0, 1, 0, 0]
    head.weight.data[3:] = [[0, 0, 1, 0], [0, 0, 0, 1], [0, -1, 0, 0]]
    cos = head.cosine(t64([[1.0, 0.0, 0.0, 0.0]])).data
    np.testing.assert_allclose(cos, [[1.0, 0.0]], atol=1e-12)


def test_aam_subcenter_gradients():
    assert max(gradcases.aam_sc_error(seed) for seed in range(5)) < 1e-5
    head, emb, labels = gradcases.loss_case("aam_sc", 3)
    head.zero_grad()
    head(emb, labels, margin=0.2).backward()
    used = np.zeros(head.weight.shape[0], dtype=bool)
    e = emb.data / np.linalg.norm(emb.data, axis=1, keepdims=True)
    w = head.weight.data / np.linalg.norm(head.weight.data, axis=1, keepdims=True)
    c = (e @ w.T).reshape(len(e), head.n_classes, head.k)
    for i in range(len(e)):
        for j in range(head.n_classes):
            used[j * head.k + c[i, j].argmax()] = True
    assert np.all(head.weight.grad[~used] == 0.0)
    assert np.all(np.abs(head.weight.grad[used]).sum(axis=1) > 0)


@pytest.mark.parametrize("kind", gradcases.LOSSES)
def test_loss_gradients(kind):
    assert max(gradcases.loss_error(kind, seed) for seed in range(5)) < 1e-5


def test_label_range_checked():
    head = ClassifierHead(3, 4)
    with pytest.raises(InputError, match="out of range"):
        head(t64(np.ones((2, 4))), np.array([0, 3]))
    with pytest.raises(InputError):
        head(t64(np.ones((2, 4))), np.array([0.0, 1.0]))


def test_config_validation():
    for bad in (dict(kind="triplet"), dict(scale=0), dict(lam=1.0), dict(t=0.5), dict(subcenters=0)):
        with pytest.raises(ConfigError):
            LossConfig(**bad)
    with pytest.raises(ConfigError):
        ClassifierHead(1, 4)
    with pytest.raises(ConfigError):
        aam_from_cosine(t64([[0.5, 0.1]]), np.array([0]), 32.0, 1.6)
    assert LossConfig.from_dict({"kind": "sf2_c", "lambda": 0.6}).lam == 0.6
    with pytest.raises(ConfigError, match="unknown"):
        LossConfig.from_dict({"gamma": 1})


def test_losses_permutation_equivariant(rng):
    for kind in ("aam", "sf2_c"):
        head = ClassifierHead(6, 8, LossConfig(kind=kind), seed=1)
        emb = t64(rng.standard_normal((5, 8)))
        labels = rng.integers(0, 6, 5)
        base = head(emb, labels, margin=0.2).data
        perm = rng.permutation(6)
        head.weight.data = head.weight.data[perm]
        inv = np.argsort(perm)
        assert abs(head(emb, inv[labels], margin=0.2).data - base) < 1e-12


# -- SF2 ----------------------------------------------------------------------

@pytest.mark.parametrize("t", [1.0, 2.0, 3.0, 7.5])
def test_sf2_warp_endpoints(t):
    assert sf2_warp(-1.0, t) == -1.0
    assert sf2_warp(1.0, t) == 1.0


def test_sf2_negative_term_hand_example():
    r, lam = 32.0, 0.7
    cos = t64([[1.0, -1.0]])
    full = sf2_from_cosine(cos, np.array([0]), t64([0.0]), "A", r=r, m=0.0, lam=lam, t=3.0).data
    pos = (lam / r) * math.log1p(math.exp(-r))
    neg = ((1 - lam) / r) * math.log1p(math.exp(-r))
    assert abs(full - (pos + neg)) < 1e-15
    only_neg = sf2_from_cosine(t64([[0.0, -1.0]]), np.array([0]), t64([0.0]), "A", r, 0.0, lam, 3.0).data
    assert abs(only_neg - ((lam / r) * math.log(2) + neg)) < 1e-15


@pytest.mark.parametrize("kind", ["A", "C"])
def test_sf2_monotone(kind):
    grid = np.linspace(-0.95, 0.95, 39)
    b = t64([0.1])
    pos = [sf2_from_cosine(t64([[c, 0.2]]), np.array([0]), b, kind, 32.0, 0.2, 0.7, 3.0).data for c in grid]
    neg = [sf2_from_cosine(t64([[0.2, c]]), np.array([0]), b, kind, 32.0, 0.2, 0.7, 3.0).data for c in grid]
    assert np.all(np.diff(pos) < 0)
    assert np.all(np.diff(neg) > 0)


def test_sf2_rejects_unknown_type():
    with pytest.raises(ConfigError):
        sf2_from_cosine(t64([[0.1, 0.2]]), np.array([0]), t64([0.0]), "B", 32.0, 0.2, 0.7, 3.0)


def test_sf2_bias_is_learnable():
    head = ClassifierHead(3, 4, LossConfig(kind="sf2_c"))
    assert head.bias.data.tolist() == [0.0]
    head(t64(np.eye(4)[:2]), np.array([0, 1])).backward()
    assert head.bias.grad is not None and head.bias.grad[0] != 0


# -- margin schedule ----------------------------------------------------------

def test_margin_schedule_values():
    assert margin_schedule(10) == 0.0
    assert margin_schedule(100) == 0.2
    assert margin_schedule(40) == 0.2
    assert margin_schedule(3, "lm") == margin_schedule(300, "lm") == 0.5
    assert abs(margin_schedule(30) - 0.01517) < 5e-6
    assert margin_schedule(30) == 0.2 * math.expm1(2.5) / math.expm1(5.0)


def test_margin_schedule_continuous_and_monotone():
    assert abs(margin_schedule(20 - 1e-12) - margin_schedule(20)) < 1e-12
    assert abs(margin_schedule(40 - 1e-12) - margin_schedule(40)) < 1e-12
    vals = [margin_schedule(e) for e in np.linspace(0, 60, 6001)]
    assert np.all(np.diff(vals) >= 0)


def test_margin_schedule_errors():
    with pytest.raises(ConfigError):
        margin_schedule(-1)
    with pytest.raises(ConfigError):
        margin_schedule(1, "finetune")
