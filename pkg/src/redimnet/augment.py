"""Waveform augmentation: speed perturbation, additive noise and reverberation.

Noise and impulse responses come from a :class:`NoiseBank` / :class:`RirBank`,
either synthesized on the fly or read from directories of WAV files.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import ConfigError
from .features import SAMPLE_RATE, read_wav

SPEED_FACTORS = (0.9, 1.1)
NOISE_KINDS = ("noise", "music", "babble")


def speed_perturb(wave, factor: float, n_speakers: int) -> tuple[np.ndarray, int]:
    """Resample by ``factor`` with linear interpolation.

    Returns the new wave (length ``round(L / factor)``) and the label offset
    that maps the perturbed speaker to a new class: ``n_speakers`` for 0.9,
    ``2 * n_speakers`` for 1.1.
    """
    if factor not in SPEED_FACTORS:
        raise ConfigError(f"speed factor must be one of {SPEED_FACTORS}, got {factor}")
    wave = np.asarray(wave, dtype=np.float64)
    n_out = int(round(wave.size / factor))
    pos = np.arange(n_out) * factor
    out = np.interp(pos, np.arange(wave.size), wave)
    offset = n_speakers if factor == 0.9 else 2 * n_speakers
    return out, offset


def snr_scale(sig, noise, snr_db: float) -> float:
    """Gain applied to ``noise`` so that signal/noise power equals ``snr_db``."""
    ps = float(np.mean(np.square(sig)))
    pn = float(np.mean(np.square(noise)))
    if pn == 0.0 or np.isinf(snr_db):
        return 0.0
    return float(np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0))))


def _fit_length(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if x.size >= n:
        start = int(rng.integers(0, x.size - n + 1))
        return x[start:start + n]
    reps = int(np.ceil(n / x.size))
    return np.tile(x, reps)[:n]


def add_noise(wave, noise, snr_db: float, rng: np.random.Generator | None = None) -> np.ndarray:
    wave = np.asarray(wave, dtype=np.float64)
    if np.isinf(snr_db):
        return wave.copy()
    rng = rng if rng is not None else np.random.default_rng(0)
    noise = _fit_length(np.asarray(noise, dtype=np.float64), wave.size, rng)
    return wave + snr_scale(wave, noise, snr_db) * noise


def reverberate(wave, rir) -> np.ndarray:
    """Convolve with ``rir`` (scaled to unit peak) and restore the input energy."""
    wave = np.asarray(wave, dtype=np.float64)
    rir = np.asarray(rir, dtype=np.float64)
    peak = np.max(np.abs(rir))
    if peak == 0:
        raise ConfigError("impulse response is all zeros")
    rir = rir / peak
    out = sps.fftconvolve(wave, rir)[:wave.size] if rir.size > 1 else wave * rir[0]
    e_in, e_out = float(np.sum(wave ** 2)), float(np.sum(out ** 2))
    if e_out > 0:
        out = out * np.sqrt(e_in / e_out)
    return out


# -- sources ------------------------------------------------------------------

def _colored_noise(n, rng, exponent):
    spec = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.arange(n // 2 + 1, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spec / f ** (exponent / 2.0), n)


def _music(n, rng):
    t = np.arange(n) / SAMPLE_RATE
    out = np.zeros(n)
    note_len = int(rng.uniform(0.15, 0.5) * SAMPLE_RATE)
    for start in range(0, n, note_len):
        seg = slice(start, min(n, start + note_len))
        base = 110.0 * 2 ** (rng.integers(0, 36) / 12)
        for h in range(1, 6):
            out[seg] += np.sin(2 * np.pi * base * h * t[seg] + rng.uniform(0, 2 * np.pi)) / h
    return out


def _babble(n, rng):
    from .toy import synth_voice, random_signature
    out = np.zeros(n)
    for _ in range(int(rng.integers(3, 7))):
        out += synth_voice(random_signature(rng), n, rng)
    return out


class NoiseBank:
    """Noise clips by kind, synthesized or loaded from ``<root>/<kind>/*.wav``."""

    def __init__(self, clips: dict[str, list[np.ndarray]] | None = None, synthetic: bool = True):
        self.clips = {k: list(v) for k, v in (clips or {}).items()}
        self.synthetic = synthetic

    @classmethod
    def from_dir(cls, root) -> "NoiseBank":
        root = Path(root)
        clips = {}
        for kind in NOISE_KINDS:
            files = sorted((root / kind).glob("*.wav")) if (root / kind).is_dir() else []
            if files:
                clips[kind] = [read_wav(f) for f in files]
        if not clips:
            raise ConfigError(f"{root}: no WAV files under any of {NOISE_KINDS}")
        return cls(clips, synthetic=False)

    def sample(self, kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
        if kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind '{kind}'")
        clips = self.clips.get(kind)
        if clips:
            return _fit_length(clips[int(rng.integers(len(clips)))], n, rng)
        if not self.synthetic:
            raise ConfigError(f"no '{kind}' clips available")
        if kind == "noise":
            return _colored_noise(n, rng, rng.uniform(0.0, 2.0))
        if kind == "music":
            return _music(n, rng)
        return _babble(n, rng)


class RirBank:
    """Room impulse responses, synthesized (decaying noise) or loaded from WAVs."""

    def __init__(self, rirs: list[np.ndarray] | None = None, synthetic: bool = True):
        self.rirs = list(rirs or [])
        self.synthetic = synthetic

    @classmethod
    def from_dir(cls, root) -> "RirBank":
        files = sorted(Path(root).glob("*.wav"))
        if not files:
            raise ConfigError(f"{root}: no impulse-response WAV files")
        return cls([read_wav(f) for f in files], synthetic=False)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.rirs:
            return self.rirs[int(rng.integers(len(self.rirs)))]
        if not self.synthetic:
            raise ConfigError("no impulse responses available")
        rt60 = rng.uniform(0.2, 0.8)
        n = int(0.5 * SAMPLE_RATE)
        t = np.arange(n) / SAMPLE_RATE
        rir = rng.standard_normal(n) * np.exp(-6.9 * t / rt60)
        rir[0] = np.abs(rir).max() * 1.5
        return rir


def augment(wave, noise_source: NoiseBank | None, rir_source: RirBank | None, kind: str, snr_db: float = np.inf,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply one augmentation ``kind`` in {noise, music, babble, reverb}."""
    rng = rng if rng is not None else np.random.default_rng(0)
    wave = np.asarray(wave, dtype=np.float64)
    if kind == "reverb":
        if rir_source is None:
            raise ConfigError("reverb augmentation needs an impulse-response source")
        return reverberate(wave, rir_source.sample(rng))
    if kind not in NOISE_KINDS:
        raise ConfigError(f"unknown augmentation '{kind}'")
    if noise_source is None:
        raise ConfigError(f"'{kind}' augmentation needs a noise source")
    if np.isinf(snr_db):
        return wave.copy()
    return add_noise(wave, noise_source.sample(kind, wave.size, rng), snr_db, rng)
