"""Reshape operators, 2D/1D blocks and attentive statistics pooling.

2D maps are ``(N, C, F, T)``; 1D maps are ``(N, D, T)`` with ``D = C * F``.
Every residual branch ends in a zero-initialized layer so a freshly built
block is the identity map (up to the post-sum ReLU of the ResNet variants).
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import BatchNorm, Conv1d, Conv2d, LayerNorm, Linear, Module, ModuleList, Parameter
from .tensor import Tensor

BLOCK2D_KINDS = ("convnext2d", "resnet_basic2d", "fwse_resnet2d")
BLOCK1D_KINDS = ("skip", "fc", "conv1d", "mha", "conv1d+mha")


def to_1d(x: Tensor) -> Tensor:
    """Fold ``(N, C, F, T)`` into ``(N, C*F, T)``; channel ``c``, bin ``f`` -> row ``c*F + f``."""
    n, c, f, t = x.shape
    return T.reshape(x, (n, c * f, t))


def to_2d(x: Tensor, channels: int, freq: int) -> Tensor:
    n, d, t = x.shape
    if channels * freq != d:
        raise ConfigError(f"cannot unfold width {d} into (C={channels}, F={freq}): C*F = {channels * freq}")
    return T.reshape(x, (n, channels, freq, t))


# -- 2D sub-blocks ------------------------------------------------------------

class ConvNeXt2d(Module):
    """Depthwise 3x3 -> channel LayerNorm -> 1x1 expand -> GELU -> 1x1 project, plus skip."""

    def __init__(self, channels, expansion=4, rng=None):
        super().__init__()
        self.dw = Conv2d(channels, channels, 3, padding=1, groups=channels, rng=rng)
        self.norm = LayerNorm(channels, axis=1)
        self.pw1 = Conv2d(channels, expansion * channels, 1, rng=rng)
        self.pw2 = Conv2d(expansion * channels, channels, 1, rng=rng, zero_init=True)

    def forward(self, x):
        y = self.pw2(T.gelu(self.pw1(self.norm(self.dw(x)))))
        return x + y


class FwSE(Module):
    """Frequency-wise squeeze-excitation: one sigmoid gate per frequency bin."""

    def __init__(self, freq, reduction=4, rng=None):
        super().__init__()
        hidden = max(1, freq // reduction)
        self.fc1 = Linear(freq, hidden, rng=rng)
        self.fc2 = Linear(hidden, freq, rng=rng)

    def gates(self, x: Tensor) -> Tensor:
        z = T.mean(x, axis=(1, 3))  # (N, F)
        return T.sigmoid(self.fc2(T.relu(self.fc1(z))))

    def forward(self, x):
        n, _, f, _ = x.shape
        return x * T.reshape(self.gates(x), (n, 1, f, 1))


class ResBasic2d(Module):
    """conv3x3-BN-ReLU-conv3x3-BN (optionally fwSE) + skip, ReLU after the sum."""

    def __init__(self, channels, freq=None, fwse=False, se_reduction=4, rng=None):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, padding=1, bias=False, rng=rng)
        self.bn1 = BatchNorm(channels)
        self.conv2 = Conv2d(channels, channels, 3, padding=1, bias=False, rng=rng)
        self.bn2 = BatchNorm(channels, zero_init=True)
        self.se = FwSE(freq, se_reduction, rng=rng) if fwse else None

    def forward(self, x):
        y = self.bn2(self.conv2(T.relu(self.bn1(self.conv1(x)))))
        if self.se is not None:
            y = self.se(y)
        return T.relu(x + y)


class Block2d(Module):
    """Optional strided downsampling head followed by ``n`` residual sub-blocks.

    The head is a 3x3 convolution with stride ``(S_f, 1)`` plus batch norm and
    is present whenever the stage changes frequency or channel extent.  The
    time axis is never strided.
    """

    def __init__(self, cin, cout, fin, sf, n, kind, expansion=4, se_reduction=4, rng=None):
        super().__init__()
        if kind not in BLOCK2D_KINDS:
            raise ConfigError(f"unknown 2D block kind '{kind}'; expected one of {BLOCK2D_KINDS}")
        if sf < 1 or fin % sf:
            raise ConfigError(f"frequency extent {fin} is not divisible by stride {sf}")
        self.cin, self.cout, self.fin, self.sf, self.kind = cin, cout, fin, sf, kind
        self.fout = fin // sf
        if sf > 1 or cin != cout:
            self.head = Conv2d(cin, cout, 3, stride=(sf, 1), padding=1, bias=False, rng=rng)
            self.head_bn = BatchNorm(cout)
        else:
            self.head = None
        blocks = []
        for _ in range(n):
            if kind == "convnext2d":
                blocks.append(ConvNeXt2d(cout, expansion, rng=rng))
            else:
                blocks.append(ResBasic2d(cout, self.fout, fwse=kind == "fwse_resnet2d",
                                         se_reduction=se_reduction, rng=rng))
        self.blocks = ModuleList(blocks)

    def forward(self, x):
        if x.shape[1] != self.cin or x.shape[2] != self.fin:
            raise ConfigError(f"2D block expects (C={self.cin}, F={self.fin}), got {x.shape[1:3]}")
        if self.head is not None:
            x = self.head_bn(self.head(x))
        for b in self.blocks:
            x = b(x)
        return x


# -- 1D temporal components ---------------------------------------------------

class ConvNeXt1d(Module):
    def __init__(self, channels, kernel=7, expansion=4, rng=None):
        super().__init__()
        if kernel % 2 == 0:
            raise ConfigError(f"1D ConvNeXt kernel must be odd to keep T, got {kernel}")
        self.dw = Conv1d(channels, channels, kernel, padding=kernel // 2, groups=channels, rng=rng)
        self.norm = LayerNorm(channels, axis=1)
        self.pw1 = Conv1d(channels, expansion * channels, 1, rng=rng)
        self.pw2 = Conv1d(expansion * channels, channels, 1, rng=rng, zero_init=True)

    def forward(self, x):
        return x + self.pw2(T.gelu(self.pw1(self.norm(self.dw(x)))))


class FrameFC(Module):
    """Per-frame fully connected layer with no temporal context."""

    def __init__(self, channels, rng=None):
        super().__init__()
        self.fc = Conv1d(channels, channels, 1, rng=rng)

    def forward(self, x):
        return T.gelu(self.fc(x))


class MultiHeadAttention(Module):
    def __init__(self, dim, heads, rng=None):
        super().__init__()
        if heads < 1 or dim % heads:
            raise ConfigError(f"attention width {dim} is not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q = Linear(dim, dim, rng=rng)
        self.k = Linear(dim, dim, bias=False, rng=rng)  # a key bias shifts every score in a row equally
        self.v = Linear(dim, dim, rng=rng)
        self.out = Linear(dim, dim, rng=rng, zero_init=True)
        self.last_attention: np.ndarray | None = None

    def forward(self, x):
        """``x``: ``(N, T, dim)`` -> ``(N, T, dim)``."""
        n, t, d = x.shape
        h, dh = self.heads, self.dim // self.heads
        q, k, v = (T.permute(T.reshape(proj(x), (n, t, h, dh)), (0, 2, 1, 3)) for proj in (self.q, self.k, self.v))
        scores = T.matmul(q, T.permute(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        att = T.softmax(scores, axis=-1)
        self.last_attention = att.data
        ctx = T.matmul(att, v)  # (N, h, T, dh)
        ctx = T.reshape(T.permute(ctx, (0, 2, 1, 3)), (n, t, d))
        return self.out(ctx)


class TransformerEncoder(Module):
    """Pre-norm self-attention and feed-forward over time, each with a residual."""

    def __init__(self, dim, heads, ffn_mult=2, rng=None):
        super().__init__()
        self.norm1 = LayerNorm(dim, axis=-1)
        self.attn = MultiHeadAttention(dim, heads, rng=rng)
        self.norm2 = LayerNorm(dim, axis=-1)
        self.ff1 = Linear(dim, ffn_mult * dim, rng=rng)
        self.ff2 = Linear(ffn_mult * dim, dim, rng=rng, zero_init=True)

    def forward(self, x):
        """``x``: ``(N, dim, T)``."""
        h = T.permute(x, (0, 2, 1))
        h = h + self.attn(self.norm1(h))
        h = h + self.ff2(T.gelu(self.ff1(self.norm2(h))))
        return T.permute(h, (0, 2, 1))


class Block1d(Module):
    """``y = x + Expand(Temporal(Norm(Reduce(x))))`` over a fixed width ``D``."""

    def __init__(self, width, kind, reduced=None, heads=4, kernel=7, expansion=4, ffn_mult=2, rng=None):
        super().__init__()
        if kind not in BLOCK1D_KINDS:
            raise ConfigError(f"unknown 1D block kind '{kind}'; expected one of {BLOCK1D_KINDS}")
        self.width, self.kind = width, kind
        if kind == "skip":
            return
        reduced = reduced or max(1, width // 8)
        self.reduced = reduced
        self.reduce = Conv1d(width, reduced, 1, bias=False, rng=rng)  # bias is cancelled by the norm
        self.norm = BatchNorm(reduced)
        parts = []
        if kind == "fc":
            parts.append(FrameFC(reduced, rng=rng))
        if kind in ("conv1d", "conv1d+mha"):
            parts.append(ConvNeXt1d(reduced, kernel, expansion, rng=rng))
        if kind in ("mha", "conv1d+mha"):
            parts.append(TransformerEncoder(reduced, heads, ffn_mult, rng=rng))
        self.temporal = ModuleList(parts)
        self.expand = Conv1d(reduced, width, 1, rng=rng, zero_init=True)

    def forward(self, x):
        if x.shape[1] != self.width:
            raise ConfigError(f"1D block expects width {self.width}, got {x.shape[1]}")
        if self.kind == "skip":
            return x
        h = self.norm(self.reduce(x))
        for p in self.temporal:
            h = p(h)
        return x + self.expand(h)


# -- pooling ------------------------------------------------------------------

class AttentiveStatsPool(Module):
    """Attention-weighted mean and std over time with global context.

    Each frame is scored from ``[h_t; mean(h); std(h)]`` through a tanh layer of
    width ``hidden`` and a scalar projection; scores are softmaxed over time.
    """

    def __init__(self, width, hidden=128, eps=1e-7, rng=None):
        super().__init__()
        self.width, self.eps = width, eps
        self.attn = Conv1d(3 * width, hidden, 1, rng=rng)
        self.score = Conv1d(hidden, 1, 1, bias=False, rng=rng)  # softmax ignores a shared offset
        self.last_weights: np.ndarray | None = None

    def _std(self, x, w):
        mu = T.sum(x * w, axis=2, keepdims=True)
        var = T.sum(x * x * w, axis=2, keepdims=True) - mu * mu
        return mu, T.sqrt(T.maximum(var, self.eps))

    def forward(self, h):
        n, d, t = h.shape
        uniform = np.full((1, 1, t), 1.0 / t, dtype=h.dtype)
        gmu, gsd = self._std(h, uniform)
        ones = np.ones((1, 1, t), dtype=h.dtype)
        ctx = T.concat([h, gmu * ones, gsd * ones], axis=1)
        e = self.score(T.tanh(self.attn(ctx)))  # (N, 1, T)
        alpha = T.softmax(e, axis=2)
        self.last_weights = alpha.data[:, 0, :]
        mu, sd = self._std(h, alpha)
        return T.concat([T.reshape(mu, (n, d)), T.reshape(sd, (n, d))], axis=1)
