"""Synthetic speaker corpus for desk-scale training checks.

Each speaker is a harmonic source with a fixed f0, spectral tilt, per-harmonic
amplitude profile and three formant-like resonances.  Utterances vary the
pitch contour, syllable envelope and harmonic phases, then add white noise
20 dB below the voiced signal.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .features import SAMPLE_RATE

F0_RANGE = (90.0, 260.0)
NOISE_DB = -20.0
_MAX_FREQ = 7600.0
_TABLE = 4096


@dataclass(frozen=True)
class SpeakerSignature:
    f0: float
    tilt: float
    formants: tuple[float, float, float]
    bandwidths: tuple[float, float, float]
    gains: tuple[float, float, float]
    profile: np.ndarray = field(repr=False)  # per-harmonic multiplicative gain

    def harmonic_amplitudes(self, f0: float | None = None) -> np.ndarray:
        f0 = self.f0 if f0 is None else f0
        k = np.arange(1, self.profile.size + 1)
        freqs = k * f0
        env = np.ones_like(freqs)
        for fc, bw, g in zip(self.formants, self.bandwidths, self.gains):
            env = env + g * np.exp(-0.5 * ((freqs - fc) / bw) ** 2)
        amp = k ** (-self.tilt) * env * self.profile
        return np.where(freqs < _MAX_FREQ, amp, 0.0)


def random_signature(rng: np.random.Generator, f0: float | None = None) -> SpeakerSignature:
    f0 = float(rng.uniform(*F0_RANGE)) if f0 is None else float(f0)
    n_harm = int(_MAX_FREQ // F0_RANGE[0])
    return SpeakerSignature(
        f0=f0,
        tilt=float(rng.uniform(0.5, 1.5)),
        formants=(float(rng.uniform(300, 900)), float(rng.uniform(900, 2500)), float(rng.uniform(2000, 3500))),
        bandwidths=tuple(float(b) for b in rng.uniform(80, 250, 3)),
        gains=tuple(float(g) for g in rng.uniform(2.0, 8.0, 3)),
        profile=np.exp(0.4 * rng.standard_normal(n_harm)),
    )


def synth_voice(sig: SpeakerSignature, n: int, rng: np.random.Generator) -> np.ndarray:
    """One utterance of ``n`` samples, normalized to unit RMS before noise."""
    t = np.arange(n) / SAMPLE_RATE
    # slow intonation around the speaker's f0
    rate = rng.uniform(0.5, 2.0)
    depth = rng.uniform(0.01, 0.04)
    f0_t = sig.f0 * (1.0 + rng.normal(0.0, 0.01)) * (1.0 + depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    cycles = np.cumsum(f0_t) / SAMPLE_RATE
    amps = sig.harmonic_amplitudes()
    jitter = rng.uniform(0, 2 * np.pi, amps.size)
    # one period as a wavetable (sum of a_k sin(2 pi k x + phi_k)), read at the running phase
    spec = np.zeros(_TABLE // 2 + 1, dtype=np.complex128)
    spec[1:amps.size + 1] = 0.5 * _TABLE * amps * np.exp(1j * (jitter - np.pi / 2))
    table = np.fft.irfft(spec, _TABLE)
    table = np.append(table, table[0])
    out = np.interp(np.mod(cycles, 1.0) * _TABLE, np.arange(_TABLE + 1), table)
    # syllable-rate envelope
    syl = rng.uniform(3.0, 5.0)
    env = 0.3 + 0.7 * np.abs(np.sin(np.pi * syl * t + rng.uniform(0, np.pi)))
    out *= env
    return out / np.sqrt(np.mean(out ** 2))


@dataclass
class ToyCorpus:
    """Train and held-out waves with speaker labels in ``[0, n_speakers)``."""

    n_speakers: int
    utts: int
    signatures: list[SpeakerSignature]
    waves: np.ndarray            # (n_speakers * utts, samples)
    labels: np.ndarray
    heldout_waves: np.ndarray
    heldout_labels: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def ids(self) -> list[str]:
        return [f"spk{l:03d}-utt{i % self.utts:03d}" for i, l in enumerate(self.labels)]

    @property
    def heldout_ids(self) -> list[str]:
        per = len(self.heldout_labels) // self.n_speakers if self.n_speakers else 0
        return [f"spk{l:03d}-held{i % max(per, 1):03d}" for i, l in enumerate(self.heldout_labels)]


def make_toy_corpus(n_speakers: int = 20, utts: int = 10, seconds: float = 3.0, seed: int = 0,
                    heldout: int = 4, f0s=None) -> ToyCorpus:
    """Deterministic synthetic corpus; ``f0s`` pins each speaker's f0."""
    if n_speakers < 2:
        raise ConfigError(f"need at least 2 speakers, got {n_speakers}")
    if utts < 1 or heldout < 0 or seconds <= 0:
        raise ConfigError("utts must be >= 1, heldout >= 0 and seconds > 0")
    if f0s is not None and len(f0s) != n_speakers:
        raise ConfigError(f"f0s has {len(f0s)} entries for {n_speakers} speakers")
    n = int(round(seconds * SAMPLE_RATE))
    spk_rng, utt_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    sigs = [random_signature(spk_rng, None if f0s is None else f0s[i]) for i in range(n_speakers)]
    noise_gain = 10.0 ** (NOISE_DB / 20.0)

    def render(count):
        waves, labels = [], []
        for s, sig in enumerate(sigs):
            for _ in range(count):
                w = synth_voice(sig, n, utt_rng)
                w = w + noise_gain * utt_rng.standard_normal(n)
                waves.append(0.1 * w)
                labels.append(s)
        return np.asarray(waves, dtype=np.float64).reshape(len(labels), n), np.asarray(labels, dtype=np.int64)

    waves, labels = render(utts)
    hw, hl = render(heldout)
    return ToyCorpus(n_speakers, utts, sigs, waves, labels, hw, hl)
