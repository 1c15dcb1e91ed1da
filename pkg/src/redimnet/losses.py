"""Margin-based classification losses on speaker embeddings.

Both families work on cosine similarities between L2-normalized embeddings
and L2-normalized class weight rows.  With sub-centers the weight holds ``K``
rows per class and a class's cosine is the max over its sub-centers.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, InputError
from .nn import Module, Parameter
from .tensor import Tensor

LOSS_KINDS = ("aam", "aam_sc", "sf2_a", "sf2_c")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "aam"
    scale: float = 32.0       # AAM s; SF2 r
    margin: float = 0.2       # SF2 margin; AAM margin comes from the schedule
    subcenters: int = 3       # only used by aam_sc
    lam: float = 0.7          # SF2 positive/negative balance
    t: float = 3.0            # SF2-C warping exponent

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind '{self.kind}'; expected one of {LOSS_KINDS}")
        if self.scale <= 0:
            raise ConfigError("loss.scale must be positive")
        if not 0.0 < self.lam < 1.0:
            raise ConfigError("loss.lambda must lie in (0, 1)")
        if self.t < 1:
            raise ConfigError("loss.t must be >= 1")
        if self.subcenters < 1:
            raise ConfigError("loss.subcenters must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"unknown loss keys: {unknown}")
        return cls(**d)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = T.sqrt(T.sum(x * x, axis=axis, keepdims=True) + eps)
    return x / norm


class ClassifierHead(Module):
    """Class weight matrix ``(n_classes * K, D)`` plus the SF2 bias ``b``."""

    def __init__(self, n_classes: int, embedding_dim: int, cfg: LossConfig = LossConfig(), seed: int = 0):
        super().__init__()
        if n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {n_classes}")
        self.cfg = cfg
        self.n_classes = n_classes
        self.k = cfg.subcenters if cfg.kind == "aam_sc" else 1
        rng = np.random.default_rng(seed)
        bound = math.sqrt(6.0 / (n_classes * self.k + embedding_dim))
        self.weight = Parameter(rng.uniform(-bound, bound, (n_classes * self.k, embedding_dim)))
        if cfg.kind.startswith("sf2"):
            self.bias = Parameter(np.zeros(1))

    def cosine(self, emb: Tensor) -> Tensor:
        """Class cosines ``(N, n_classes)`` (max over sub-centers)."""
        cos = T.linear(l2_normalize(emb), l2_normalize(self.weight))
        if self.k > 1:
            n = cos.shape[0]
            cos = T.max_(T.reshape(cos, (n, self.n_classes, self.k)), axis=2)
        return cos

    def forward(self, emb: Tensor, labels, margin: float | None = None) -> Tensor:
        labels = _check_labels(labels, self.n_classes)
        cos = self.cosine(emb)
        if self.cfg.kind in ("aam", "aam_sc"):
            return aam_from_cosine(cos, labels, self.cfg.scale, self.cfg.margin if margin is None else margin)
        kind = "A" if self.cfg.kind == "sf2_a" else "C"
        return sf2_from_cosine(cos, labels, self.bias, kind, self.cfg.scale,
                               self.cfg.margin if margin is None else margin, self.cfg.lam, self.cfg.t)


def _check_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise InputError("labels must be a 1-D integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"label out of range [0, {n_classes}): min {labels.min()}, max {labels.max()}")
    return labels


def aam_from_cosine(cos: Tensor, labels, s: float, m: float) -> Tensor:
    """Additive angular margin softmax given class cosines ``(N, n_classes)``.

    The target logit becomes ``cos(theta_y + m)``.  Where ``theta_y + m >= pi``
    the monotone fallback ``cos(theta_y) - m sin(m)`` is used instead.
    """
    if not 0.0 <= m < math.pi / 2:
        raise ConfigError(f"AAM margin must lie in [0, pi/2), got {m}")
    labels = _check_labels(labels, cos.shape[1])
    n, c = cos.shape
    onehot = np.zeros((n, c), dtype=bool)
    onehot[np.arange(n), labels] = True
    if m == 0.0:
        logits = cos
    else:
        cos_c = cos.data.clip(-1.0, 1.0)
        # sqrt(1 - cos^2) with its gradient kept finite at |cos| = 1
        sin = T.sqrt(T.maximum(1.0 - cos * cos, 1e-12))
        phi = cos * math.cos(m) - sin * math.sin(m)
        fallback = cos - m * math.sin(m)
        phi = T.where(cos_c > math.cos(math.pi - m), phi, fallback)
        logits = T.where(onehot, phi, cos)
    logp = T.log_softmax(logits * s, axis=1)
    picked = T.sum(logp * onehot, axis=1)
    return -T.mean(picked)


def aam_loss(emb: Tensor, labels, head: ClassifierHead, s: float | None = None, m: float | None = None) -> Tensor:
    cos = head.cosine(emb)
    return aam_from_cosine(cos, labels, head.cfg.scale if s is None else s, head.cfg.margin if m is None else m)


def sf2_warp(z, t: float):
    """Similarity warping of SF2-C: ``2 * ((z + 1) / 2) ** t - 1``."""
    if isinstance(z, Tensor):
        return T.power((z + 1.0) * 0.5, t) * 2.0 - 1.0
    return 2.0 * ((np.asarray(z) + 1.0) / 2.0) ** t - 1.0


def sf2_from_cosine(cos: Tensor, labels, bias: Tensor, kind: str, r: float, m: float, lam: float,
                    t: float) -> Tensor:
    """SphereFace2 as independent binary terms per class, averaged over the batch."""
    if kind not in ("A", "C"):
        raise ConfigError(f"SF2 type must be 'A' or 'C', got {kind!r}")
    if r <= 0 or not 0 < lam < 1 or t < 1:
        raise ConfigError("SF2 needs r > 0, lambda in (0, 1) and t >= 1")
    labels = _check_labels(labels, cos.shape[1])
    n, c = cos.shape
    onehot = np.zeros((n, c), dtype=cos.dtype)
    onehot[np.arange(n), labels] = 1.0
    if kind == "C":
        g = sf2_warp(_clip_unit(cos), t)
    else:
        g = cos
    b = T.reshape(bias, (1, 1))
    pos = T.softplus(-((g - m) * r + b)) * (lam / r)
    neg = T.softplus((g + m) * r + b) * ((1.0 - lam) / r)
    per = T.sum(pos * onehot + neg * (1.0 - onehot), axis=1)
    return T.mean(per)


def _clip_unit(x: Tensor) -> Tensor:
    # cosines can exceed [-1, 1] by rounding; keep (z + 1) / 2 non-negative for the power
    return T.maximum(x, -1.0)


def sf2_loss(emb: Tensor, labels, head: ClassifierHead, kind: str = "C") -> Tensor:
    cfg = head.cfg
    return sf2_from_cosine(head.cosine(emb), labels, head.bias, kind, cfg.scale, cfg.margin, cfg.lam, cfg.t)


def margin_schedule(epoch: float, stage: str = "pretrain", hold: int = 20, ramp: int = 20,
                    final: float = 0.2, lm_margin: float = 0.5, sharpness: float = 5.0) -> float:
    """AAM margin for an epoch.

    pretrain: 0 for ``hold`` epochs, then an exponential rise to ``final`` over
    ``ramp`` epochs, then constant.  lm: constant ``lm_margin``.
    """
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    if stage == "lm":
        return lm_margin
    if stage != "pretrain":
        raise ConfigError(f"unknown stage '{stage}'")
    if epoch < hold:
        return 0.0
    if epoch >= hold + ramp:
        return final
    u = (epoch - hold) / ramp
    return final * math.expm1(sharpness * u) / math.expm1(sharpness)
