"""Two-stage training: margin pretraining on short crops, then large-margin finetuning.

Randomness is drawn from one seed split into independent streams for the
classifier init, crop/batch sampling and augmentation, so a run is a pure
function of its inputs.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .augment import NOISE_KINDS, NoiseBank, RirBank, augment, speed_perturb
from .errors import ConfigError, NumericError
from .features import SAMPLE_RATE, FeatureConfig, batch_features
from .losses import ClassifierHead, LossConfig, margin_schedule
from .model import ReDimNet
from .toy import ToyCorpus

log = logging.getLogger(__name__)

STAGES = ("pretrain", "lm")
AUG_KINDS = ("noise", "music", "babble", "reverb")


class TrainingDiverged(NumericError):
    """Raised when the loss becomes NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "pretrain"
    crop_seconds: float | None = None        # None: 2.0 for pretrain, 6.0 for lm
    epochs: int = 60
    batch_size: int = 32
    lr_max: float = 1e-1
    lr_min: float = 1e-5
    warmup_epochs: float = 6.0
    momentum: float = 0.9
    weight_decay: float = 2e-5
    speed_perturb: bool = True               # forced off in the lm stage
    aug_prob: dict = field(default_factory=lambda: {"noise": 0.2, "music": 0.2, "babble": 0.2, "reverb": 0.2})
    snr_range: dict = field(default_factory=lambda: {"noise": (0.0, 15.0), "music": (5.0, 15.0),
                                                     "babble": (13.0, 20.0)})
    margin_hold: int = 20
    margin_ramp: int = 20
    margin_final: float = 0.2
    lm_margin: float = 0.5
    checkpoint_every: int = 0                # epochs; 0 disables periodic checkpoints
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"train.stage must be one of {STAGES}, got '{self.stage}'")
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"train.warmup_epochs={self.warmup_epochs} must be in [0, epochs={self.epochs})")
        if self.crop_seconds is not None and self.crop_seconds <= 0:
            raise ConfigError("train.crop_seconds must be positive")
        if self.batch_size < 2:
            raise ConfigError("train.batch_size must be >= 2 (batch norm needs a batch)")
        if not (0 < self.lr_min <= self.lr_max or self.lr_min == self.lr_max == 0):
            raise ConfigError("need 0 < lr_min <= lr_max, or both zero to freeze the weights")
        bad = sorted(set(self.aug_prob) - set(AUG_KINDS))
        if bad:
            raise ConfigError(f"unknown augmentation kinds {bad}")
        for k, p in self.aug_prob.items():
            if not 0 <= p <= 1:
                raise ConfigError(f"aug_prob[{k}]={p} is not a probability")
        for k, (lo, hi) in self.snr_range.items():
            if lo > hi:
                raise ConfigError(f"snr_range[{k}] has lo > hi")

    @property
    def crop(self) -> float:
        if self.crop_seconds is not None:
            return self.crop_seconds
        return 2.0 if self.stage == "pretrain" else 6.0

    @property
    def use_speed(self) -> bool:
        return self.speed_perturb and self.stage == "pretrain"

    def margin(self, epoch: float) -> float:
        return margin_schedule(epoch, self.stage, self.margin_hold, self.margin_ramp, self.margin_final,
                               self.lm_margin)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_range"] = {k: list(v) for k, v in self.snr_range.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown train keys: {unknown}")
        if "snr_range" in d:
            d["snr_range"] = {k: tuple(float(x) for x in v) for k, v in d["snr_range"].items()}
        if "aug_prob" in d:
            d["aug_prob"] = {k: float(v) for k, v in d["aug_prob"].items()}
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def without_augmentation(self) -> "TrainConfig":
        return replace(self, aug_prob={k: 0.0 for k in AUG_KINDS}, speed_perturb=False)


# -- optimizer and schedule ---------------------------------------------------

class SGD:
    """SGD with Nesterov momentum and decoupled-from-loss L2 weight decay."""

    def __init__(self, params: Sequence[T.Tensor], momentum: float = 0.9, weight_decay: float = 2e-5):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        sgd_nesterov_step([p.data for p in self.params], grads, self.velocity, lr, self.momentum,
                          self.weight_decay)


def sgd_nesterov_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], velocity: Sequence[np.ndarray],
                      lr: float, momentum: float = 0.9, weight_decay: float = 2e-5) -> None:
    """In place: ``g = grad + wd*p; v = mu*v + g; p -= lr*(g + mu*v)``."""
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise AssertionError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        g = g + weight_decay * p
        v *= momentum
        v += g
        p -= (lr * (g + momentum * v)).astype(p.dtype, copy=False)


def lr_schedule(epoch: float, cfg: TrainConfig) -> float:
    """Linear warmup from lr_min to lr_max, then geometric decay to lr_min at the last epoch."""
    e, w, E = float(epoch), float(cfg.warmup_epochs), float(cfg.epochs)
    if not 0 <= e <= E:
        raise ConfigError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    if cfg.lr_max == 0:
        return 0.0
    if e < w:
        return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * e / w
    return cfg.lr_max * (cfg.lr_min / cfg.lr_max) ** ((e - w) / (E - w))


# -- data ---------------------------------------------------------------------

def random_crop(wave: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if wave.size >= n:
        start = int(rng.integers(0, wave.size - n + 1))
        return wave[start:start + n]
    return np.resize(wave, n)   # short utterances wrap around


@dataclass
class BatchSampler:
    """Deterministic crop/augment pipeline for one run."""

    cfg: TrainConfig
    n_speakers: int
    crop_rng: np.random.Generator
    aug_rng: np.random.Generator
    noise: NoiseBank | None = None
    rirs: RirBank | None = None

    def prepare(self, wave: np.ndarray, label: int) -> tuple[np.ndarray, int]:
        if self.cfg.use_speed:
            factor = (1.0, 0.9, 1.1)[int(self.aug_rng.integers(3))]
            if factor != 1.0:
                wave, off = speed_perturb(wave, factor, self.n_speakers)
                label += off
        wave = random_crop(wave, int(round(self.cfg.crop * SAMPLE_RATE)), self.crop_rng)
        for kind in AUG_KINDS:
            p = self.cfg.aug_prob.get(kind, 0.0)
            if p <= 0 or self.aug_rng.random() >= p:
                continue
            if kind == "reverb":
                wave = augment(wave, self.noise, self.rirs, kind, rng=self.aug_rng)
            else:
                lo, hi = self.cfg.snr_range[kind]
                wave = augment(wave, self.noise, self.rirs, kind, float(self.aug_rng.uniform(lo, hi)), self.aug_rng)
        return wave, label


@dataclass
class TrainResult:
    model: ReDimNet
    head: ClassifierHead
    log: list[dict]
    epochs: list[dict]


def n_classes(n_speakers: int, cfg: TrainConfig) -> int:
    return n_speakers * (3 if cfg.use_speed else 1)


def _write_record(fh, rec: dict) -> None:
    if fh is not None:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()


def train(model: ReDimNet, corpus: ToyCorpus, cfg: TrainConfig, loss_cfg: LossConfig = LossConfig(),
          head: ClassifierHead | None = None, feature_cfg: FeatureConfig = FeatureConfig(),
          noise: NoiseBank | None = None, rirs: RirBank | None = None, log_path=None,
          checkpoint_fn: Callable[[int, ReDimNet, ClassifierHead], None] | None = None,
          epoch_fn: Callable[[dict], None] | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs over ``corpus``; each epoch visits every utterance once.

    ``head`` may be passed in to continue from an earlier stage; otherwise it
    is initialized from the run's init stream.  Steps and epoch summaries are
    appended to ``log_path`` as JSON lines.
    """
    classes = n_classes(corpus.n_speakers, cfg)
    labels = np.asarray(corpus.labels)
    if labels.min() < 0 or labels.max() >= corpus.n_speakers:
        raise ConfigError(f"corpus labels must lie in [0, {corpus.n_speakers})")
    init_seq, crop_seq, aug_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    if head is None:
        head = ClassifierHead(classes, model.cfg.embedding_dim, loss_cfg,
                              seed=int(init_seq.generate_state(1)[0]))
        head.to(model.stem.weight.dtype)
    elif head.n_classes < classes:
        raise ConfigError(f"classifier has {head.n_classes} classes, run needs {classes}")
    if any(cfg.aug_prob.get(k, 0) > 0 for k in NOISE_KINDS) and noise is None:
        noise = NoiseBank()
    if cfg.aug_prob.get("reverb", 0) > 0 and rirs is None:
        rirs = RirBank()
    sampler = BatchSampler(cfg, corpus.n_speakers, np.random.default_rng(crop_seq), np.random.default_rng(aug_seq),
                           noise, rirs)
    params = model.parameters() + head.parameters()
    opt = SGD(params, cfg.momentum, cfg.weight_decay)
    dtype = model.stem.weight.dtype
    n_utts = len(labels)
    steps = max(1, n_utts // cfg.batch_size)
    records, summaries = [], []
    fh = open(log_path, "w") if log_path is not None else None
    model.train()
    head.train()
    try:
        for epoch in range(cfg.epochs):
            margin = cfg.margin(epoch)
            order = sampler.crop_rng.permutation(n_utts)
            losses = []
            for step in range(steps):
                lr = lr_schedule(epoch + step / steps, cfg)
                idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
                batch = [sampler.prepare(corpus.waves[i], int(labels[i])) for i in idx]
                feats = batch_features([w for w, _ in batch], feature_cfg, dtype=dtype)
                y = np.array([l for _, l in batch], dtype=np.int64)
                loss = head(model(feats), y, margin)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, batch {step}, lr {lr:.6g}")
                for p in params:
                    p.grad = None
                loss.backward()
                opt.step(lr)
                rec = {"epoch": epoch, "step": epoch * steps + step, "loss": value, "lr": lr, "margin": margin}
                records.append(rec)
                _write_record(fh, rec)
                losses.append(value)
            summary = {"epoch": epoch, "loss": float(np.mean(losses)), "lr": lr_schedule(epoch, cfg),
                       "margin": margin}
            summaries.append(summary)
            _write_record(fh, {"summary": True, **summary})
            log.info("epoch %d loss %.4f lr %.3g margin %.3f", epoch, summary["loss"], summary["lr"], margin)
            if epoch_fn is not None:
                epoch_fn(summary)
            if checkpoint_fn is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                checkpoint_fn(epoch + 1, model, head)
    finally:
        if fh is not None:
            fh.close()
    model.eval()
    return TrainResult(model, head, records, summaries)


def smoothed(values: Sequence[float], window: int = 10) -> np.ndarray:
    """Trailing moving average (valid part only)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        return np.array([v.mean()]) if v.size else v
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window
