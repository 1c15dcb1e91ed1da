"""ReDimNet assembly: stem, volume-preserving stages, pooling and embedding head.

A stage reads the running 1D accumulator, unfolds it to the stage's 2D shape,
runs the 2D block, folds the result back, runs the 1D block and adds that to
the accumulator.  Channel growth and frequency stride are tied so every 2D map
has the same ``C * F`` and the fold is a pure reinterpretation of memory.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .blocks import (BLOCK1D_KINDS, BLOCK2D_KINDS, AttentiveStatsPool, Block1d, Block2d, to_1d, to_2d)
from .errors import ConfigError, InputError
from .features import FeatureConfig, n_frames
from .nn import BatchNorm, Conv2d, Linear, Module, ModuleList, count_params as _count_params


@dataclass(frozen=True)
class StageConfig:
    sf: int = 1
    mult: int = 1
    n2d: int = 1
    kind2d: str = "resnet_basic2d"
    kind1d: str = "conv1d+mha"


DEFAULT_STAGES = (
    StageConfig(1, 1), StageConfig(2, 2), StageConfig(2, 4), StageConfig(2, 8), StageConfig(1, 8),
)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``mult`` in each stage is the cumulative channel multiplier relative to
    ``c``; it must equal the product of all frequency strides so far.
    """
    c: int = 16
    f: int = 72
    embedding_dim: int = 192
    stages: tuple[StageConfig, ...] = DEFAULT_STAGES
    reduce: int = 8          # 1D bottleneck width is (c * f) // reduce
    heads: int = 4
    kernel1d: int = 7
    expansion: int = 4       # ConvNeXt hidden expansion (1D and 2D)
    ffn_mult: int = 2        # transformer feed-forward expansion
    se_reduction: int = 4    # fwSE hidden = f_i // se_reduction
    pool_hidden: int = 128
    pool_eps: float = 1e-7
    seed: int = 0

    @property
    def width(self) -> int:
        return self.c * self.f

    @property
    def reduced(self) -> int:
        return max(1, self.width // self.reduce)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown model keys: {unknown}")
        stages = []
        for i, s in enumerate(d.pop("stages", [asdict(s) for s in DEFAULT_STAGES])):
            if not isinstance(s, dict):
                raise ConfigError(f"stage {i}: expected a mapping, got {s!r}")
            bad = sorted(set(s) - set(StageConfig.__dataclass_fields__))
            if bad:
                raise ConfigError(f"stage {i}: unknown keys {bad}")
            try:
                stages.append(StageConfig(**{k: (v if k.startswith("kind") else int(v)) for k, v in s.items()}))
            except (TypeError, ValueError) as e:
                raise ConfigError(f"stage {i}: {e}") from None
        try:
            cfg = cls(stages=tuple(stages), **d)
        except TypeError as e:
            raise ConfigError(str(e)) from None
        validate(cfg)
        return cfg


def validate(cfg: ModelConfig) -> None:
    """Raise :class:`ConfigError` naming the first stage that breaks the volume constraint."""
    for name in ("c", "f", "embedding_dim", "reduce", "heads", "kernel1d", "expansion", "ffn_mult",
                 "se_reduction", "pool_hidden"):
        if int(getattr(cfg, name)) < 1:
            raise ConfigError(f"model.{name} must be a positive integer")
    if not cfg.stages:
        raise ConfigError("model needs at least one stage")
    stride = 1
    for i, s in enumerate(cfg.stages):
        if s.kind2d not in BLOCK2D_KINDS:
            raise ConfigError(f"stage {i}: unknown kind2d '{s.kind2d}'; expected one of {BLOCK2D_KINDS}")
        if s.kind1d not in BLOCK1D_KINDS:
            raise ConfigError(f"stage {i}: unknown kind1d '{s.kind1d}'; expected one of {BLOCK1D_KINDS}")
        if s.sf < 1 or s.mult < 1 or s.n2d < 0:
            raise ConfigError(f"stage {i}: sf and mult must be >= 1 and n2d >= 0")
        stride *= s.sf
        if cfg.f % stride:
            raise ConfigError(f"stage {i}: F={cfg.f} is not divisible by cumulative frequency stride {stride}")
        if s.mult != stride:
            raise ConfigError(
                f"stage {i}: channel multiplier {s.mult} != cumulative frequency stride {stride}; "
                f"volume C*F would change")
        if s.kind1d in ("mha", "conv1d+mha") and cfg.reduced % cfg.heads:
            raise ConfigError(f"stage {i}: 1D width {cfg.reduced} not divisible by {cfg.heads} heads")
        if s.kind1d in ("conv1d", "conv1d+mha") and cfg.kernel1d % 2 == 0:
            raise ConfigError(f"stage {i}: kernel1d must be odd")


@dataclass(frozen=True)
class StageShapeRow:
    index: int
    in_shape: tuple[int, int, int]
    sf: int
    channels: int
    out_shape: tuple[int, int, int]
    volume: int
    in_mult: int = 1
    in_div: int = 1
    out_mult: int = 1
    out_div: int = 1

    def symbolic(self) -> tuple[str, str, str, str, str]:
        def shape(m, d):
            c = "C" if m == 1 else f"C*{m}"
            f = "F" if d == 1 else f"F/{d}"
            return f"({c}, {f}, T)"
        ch = "C" if self.out_mult == 1 else f"C*{self.out_mult}"
        return (shape(self.in_mult, self.in_div), str(self.sf), ch, shape(self.out_mult, self.out_div), "C*F*T")


def stage_shapes(cfg: ModelConfig, t: int | None = None) -> list[StageShapeRow]:
    """Per-stage in/out 2D shapes, one row per stage, 1-based index."""
    validate(cfg)
    t = n_frames(32000) if t is None else t
    rows = []
    c, f, m, d = cfg.c, cfg.f, 1, 1
    for i, s in enumerate(cfg.stages, start=1):
        co, fo = cfg.c * s.mult, f // s.sf
        rows.append(StageShapeRow(i, (c, f, t), s.sf, co, (co, fo, t), co * fo * t,
                                  m, d, s.mult, d * s.sf))
        c, f, m, d = co, fo, s.mult, d * s.sf
    return rows


def format_stage_table(cfg: ModelConfig, t: int | None = None) -> str:
    rows = stage_shapes(cfg, t)
    lines = [f"{'Block #':>7} | {'In shape':<16} | {'S_f':>3} | {'Channels':<8} | {'Out shape':<16} | Volume",
             "-" * 78]
    for r in rows:
        ins, sf, ch, outs, vol = r.symbolic()
        lines.append(f"{r.index:>7} | {ins:<16} | {sf:>3} | {ch:<8} | {outs:<16} | {vol} = {r.volume}")
    return "\n".join(lines)


class ReDimNet(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        validate(cfg)
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        c, f = cfg.c, cfg.f
        self.stem = Conv2d(1, c, 3, padding=1, bias=False, rng=rng)
        self.stem_bn = BatchNorm(c)
        stages2d, stages1d = [], []
        cin, fin = c, f
        for s in cfg.stages:
            cout = c * s.mult
            stages2d.append(Block2d(cin, cout, fin, s.sf, s.n2d, s.kind2d, cfg.expansion, cfg.se_reduction, rng=rng))
            stages1d.append(Block1d(cfg.width, s.kind1d, cfg.reduced, cfg.heads, cfg.kernel1d, cfg.expansion,
                                    cfg.ffn_mult, rng=rng))
            cin, fin = cout, fin // s.sf
        self.stages2d = ModuleList(stages2d)
        self.stages1d = ModuleList(stages1d)
        self.pool = AttentiveStatsPool(cfg.width, cfg.pool_hidden, cfg.pool_eps, rng=rng)
        self.head = Linear(2 * cfg.width, cfg.embedding_dim, bias=False, rng=rng)  # followed by batch norm
        self.head_bn = BatchNorm(cfg.embedding_dim)

    def frame_features(self, feats) -> T.Tensor:
        """Run stem and stages; returns the 1D accumulator ``(N, C*F, T)``."""
        if not isinstance(feats, T.Tensor):
            feats = T.Tensor(np.asarray(feats), dtype=self.stem.weight.dtype)
        if feats.ndim != 3 or feats.shape[1] != self.cfg.f:
            raise InputError(f"expected features (N, {self.cfg.f}, T), got {feats.shape}")
        n, f, t = feats.shape
        x = T.gelu(self.stem_bn(self.stem(T.reshape(feats, (n, 1, f, t)))))
        acc = to_1d(x)
        for b2, b1 in zip(self.stages2d, self.stages1d):
            y = b2(to_2d(acc, b2.cin, b2.fin))
            z = b1(to_1d(y))
            if z.shape != acc.shape:
                raise ConfigError(f"stage output {z.shape} does not match accumulator {acc.shape}")
            acc = acc + z
        return acc

    def forward(self, feats) -> T.Tensor:
        acc = self.frame_features(feats)
        return self.head_bn(self.head(self.pool(acc)))

    def embed(self, feats) -> np.ndarray:
        """Eval-mode embeddings without building a graph."""
        was = self.training
        self.eval()
        try:
            with T.no_grad():
                return self.forward(feats).data.copy()
        finally:
            self.train(was)


def build(cfg: ModelConfig) -> ReDimNet:
    return ReDimNet(cfg)


def count_params(model: Module) -> int:
    return _count_params(model)


# -- closed-form accounting ---------------------------------------------------

def _stage_dims(cfg: ModelConfig):
    cin, fin = cfg.c, cfg.f
    for s in cfg.stages:
        cout, fout = cfg.c * s.mult, fin // s.sf
        yield s, cin, fin, cout, fout
        cin, fin = cout, fout


def _block1d_terms(cfg: ModelConfig, kind: str, t: int) -> tuple[int, int]:
    """(params, macs) of one 1D block."""
    if kind == "skip":
        return 0, 0
    d, r, k, e, m = cfg.width, cfg.reduced, cfg.kernel1d, cfg.expansion, cfg.ffn_mult
    params = d * r + 2 * r + (r * d + d)
    macs = 2 * d * r * t
    if kind == "fc":
        params += r * r + r
        macs += r * r * t
    if kind in ("conv1d", "conv1d+mha"):
        params += (k * r + r) + 2 * r + (e * r * r + e * r) + (e * r * r + r)
        macs += k * r * t + 2 * e * r * r * t
    if kind in ("mha", "conv1d+mha"):
        params += 2 * r + (3 * r * r + 2 * r) + (r * r + r) + 2 * r + (m * r * r + m * r) + (m * r * r + r)
        macs += 3 * r * r * t + 2 * t * t * r + r * r * t + 2 * m * r * r * t
    return params, macs


def _block2d_terms(cfg: ModelConfig, s: StageConfig, cin, fin, cout, fout, t: int) -> tuple[int, int]:
    params = macs = 0
    if s.sf > 1 or cin != cout:
        params += 9 * cin * cout + 2 * cout
        macs += 9 * cin * cout * fout * t
    c, f, e = cout, fout, cfg.expansion
    for _ in range(s.n2d):
        if s.kind2d == "convnext2d":
            params += (9 * c + c) + 2 * c + (e * c * c + e * c) + (e * c * c + c)
            macs += 9 * c * f * t + 2 * e * c * c * f * t
        else:
            params += 18 * c * c + 4 * c
            macs += 18 * c * c * f * t
            if s.kind2d == "fwse_resnet2d":
                h = max(1, f // cfg.se_reduction)
                params += (f * h + h) + (h * f + f)
                macs += 2 * f * h
    return params, macs


def analytic_params(cfg: ModelConfig) -> int:
    """Parameter count from the configuration alone (no model is built)."""
    validate(cfg)
    d, a, emb = cfg.width, cfg.pool_hidden, cfg.embedding_dim
    total = 9 * cfg.c + 2 * cfg.c
    for s, cin, fin, cout, fout in _stage_dims(cfg):
        total += _block2d_terms(cfg, s, cin, fin, cout, fout, 1)[0]
        total += _block1d_terms(cfg, s.kind1d, 1)[0]
    total += (3 * d * a + a) + a
    total += 2 * d * emb + 2 * emb
    return total


def count_macs(cfg: ModelConfig | ReDimNet, input_seconds: float = 2.0) -> int:
    """Multiply-accumulates of one utterance of ``input_seconds``, from the configuration.

    Convolutions, linear layers and the two attention matmuls are counted;
    normalization, activations, softmax and the pooling statistics are not.
    """
    if isinstance(cfg, ReDimNet):
        cfg = cfg.cfg
    validate(cfg)
    t = n_frames(int(round(input_seconds * FeatureConfig().sample_rate)))
    d, a, emb = cfg.width, cfg.pool_hidden, cfg.embedding_dim
    total = 9 * cfg.c * cfg.f * t
    for s, cin, fin, cout, fout in _stage_dims(cfg):
        total += _block2d_terms(cfg, s, cin, fin, cout, fout, t)[1]
        total += _block1d_terms(cfg, s.kind1d, t)[1]
    total += 3 * d * a * t + a * t
    total += 2 * d * emb
    return total


def measure_macs(model: ReDimNet, input_seconds: float = 2.0) -> int:
    """Instrumented count: run one forward pass and tally the ops as they execute."""
    t = n_frames(int(round(input_seconds * FeatureConfig().sample_rate)))
    feats = np.zeros((1, model.cfg.f, t), dtype=model.stem.weight.dtype)
    was = model.training
    model.eval()
    try:
        with T.no_grad(), T.count_macs() as counter:
            model.forward(feats)
    finally:
        model.train(was)
    return counter.total


def with_stages(cfg: ModelConfig, **overrides) -> ModelConfig:
    """Copy of ``cfg`` with every stage updated by ``overrides`` (e.g. ``kind1d="mha"``)."""
    return replace(cfg, stages=tuple(replace(s, **overrides) for s in cfg.stages))
