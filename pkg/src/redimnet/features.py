"""Log mel filter-bank features for 16 kHz mono speech.

Framing is done without centering (edge frames are snipped), each frame gets
a Hann window and is zero-padded to the FFT size.  Energies are floored before
the log and every mel row is mean-normalized over the utterance.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ConfigError, InputError

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class FeatureConfig:
    n_mels: int = 72
    frame_len: int = 400
    hop: int = 240
    n_fft: int = 512
    fmin: float = 20.0
    fmax: float = 7600.0
    log_floor: float = 1e-10
    mean_norm: bool = True
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ConfigError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigError(f"need 0 <= fmin < fmax <= {self.sample_rate / 2}, got {self.fmin}, {self.fmax}")
        if self.n_fft < self.frame_len:
            raise ConfigError(f"n_fft={self.n_fft} is smaller than frame_len={self.frame_len}")
        if self.n_mels < 1 or self.hop < 1 or self.frame_len < 1:
            raise ConfigError("n_mels, hop and frame_len must be positive")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def n_frames(n_samples: int, cfg: FeatureConfig = FeatureConfig()) -> int:
    if n_samples < cfg.frame_len:
        return 0
    return (n_samples - cfg.frame_len) // cfg.hop + 1


def _check_wave(wave, cfg: FeatureConfig) -> np.ndarray:
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise InputError(f"expected a mono 1-D waveform, got shape {wave.shape}")
    if wave.size < cfg.frame_len:
        raise InputError(f"waveform has {wave.size} samples; at least {cfg.frame_len} are required")
    if not np.all(np.isfinite(wave)):
        raise InputError("waveform contains non-finite samples")
    return wave


def stft_power(wave, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Power spectrogram of shape ``(n_fft // 2 + 1, T)``."""
    wave = _check_wave(wave, cfg)
    t = n_frames(wave.size, cfg)
    frames = np.lib.stride_tricks.sliding_window_view(wave, cfg.frame_len)[::cfg.hop][:t]
    window = np.hanning(cfg.frame_len + 1)[:-1]  # periodic Hann
    spec = np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_matrix(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Triangular filters, shape ``(n_mels, n_fft // 2 + 1)``.

    Filter ``k`` rises linearly from edge ``k`` to its center ``k + 1`` and falls to
    edge ``k + 2``, with ``n_mels + 2`` edges equally spaced in mel between
    ``fmin`` and ``fmax``.
    """
    n_bins = cfg.n_fft // 2 + 1
    freqs = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (center - lo)
    down = (hi - freqs[None, :]) / (hi - center)
    fb = np.maximum(0.0, np.minimum(up, down))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        k = int(empty[0])
        raise ConfigError(
            f"mel filter {k} ({edges[k]:.1f}-{edges[k + 2]:.1f} Hz) covers no FFT bin; "
            f"reduce n_mels or increase n_fft")
    return fb


def extract_features(wave, cfg: FeatureConfig = FeatureConfig(), dtype=np.float32) -> np.ndarray:
    """Log mel energies ``(n_mels, T)``, mean-normalized per row when configured."""
    power = stft_power(wave, cfg)
    mel = mel_matrix(cfg) @ power
    feats = np.log(np.maximum(mel, cfg.log_floor))
    if cfg.mean_norm:
        feats = feats - feats.mean(axis=1, keepdims=True)
    return feats.astype(dtype)


def batch_features(waves, cfg: FeatureConfig = FeatureConfig(), dtype=np.float32) -> np.ndarray:
    """Stack features of equal-length waves into ``(N, n_mels, T)``."""
    return np.stack([extract_features(w, cfg, dtype) for w in waves])


def read_wav(path) -> np.ndarray:
    """Read a 16 kHz mono PCM16 or float32 WAV into float64 samples in [-1, 1]."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as e:
        raise InputError(f"{path}: cannot read WAV ({e})") from e
    if rate != SAMPLE_RATE:
        raise InputError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} (no resampling is done)")
    if data.ndim != 1:
        raise InputError(f"{path}: {data.shape[1]} channels, expected mono")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.float32:
        return data.astype(np.float64)
    raise InputError(f"{path}: sample format {data.dtype} unsupported; use 16-bit PCM or 32-bit float")


def write_wav(path, wave, pcm16: bool = True) -> None:
    wave = np.asarray(wave, dtype=np.float64)
    if pcm16:
        data = np.clip(np.round(wave * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = wave.astype(np.float32)
    wavfile.write(Path(path), SAMPLE_RATE, data)
