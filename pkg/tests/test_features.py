import numpy as np
import pytest

from redimnet.errors import ConfigError, InputError
from redimnet.features import (FeatureConfig, extract_features, hz_to_mel, mel_matrix, mel_to_hz, n_frames,
                               read_wav, stft_power, write_wav)

SR = 16000


def tone(freq, seconds=1.0, amp=1.0):
    t = np.arange(int(seconds * SR)) / SR
    return amp * np.cos(2 * np.pi * freq * t)


def test_frame_count_two_seconds():
    assert n_frames(32000) == 132
    assert stft_power(np.zeros(32000)).shape == (257, 132)


@pytest.mark.parametrize("length", [400, 401, 639, 640, 16000, 32001])
def test_frame_count_formula(length):
    assert stft_power(np.zeros(length)).shape[1] == (length - 400) // 240 + 1


def test_silence_has_zero_power():
    assert not stft_power(np.zeros(1000)).any()


def test_tone_peaks_at_bin_32():
    power = stft_power(tone(1000.0))
    assert round(1000 * 512 / SR) == 32
    assert np.all(power.argmax(axis=0) == 32)


def test_power_matches_direct_dft(rng):
    wave = rng.standard_normal(1000)
    power = stft_power(wave)
    n = np.arange(400)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * n / 400)
    k = np.arange(257)[:, None]
    basis = np.exp(-2j * np.pi * k * n[None, :] / 512)
    for t in range(power.shape[1]):
        frame = wave[240 * t:240 * t + 400] * window
        ref = np.abs(basis @ frame) ** 2
        np.testing.assert_allclose(power[:, t], ref, rtol=1e-9, atol=1e-9)


def test_too_short_names_minimum():
    with pytest.raises(InputError, match="400"):
        stft_power(np.zeros(399))


def test_rejects_stereo_and_nonfinite():
    with pytest.raises(InputError):
        stft_power(np.zeros((2, 1000)))
    bad = np.zeros(1000)
    bad[3] = np.nan
    with pytest.raises(InputError):
        extract_features(bad)


def test_mel_scale_value():
    assert abs(hz_to_mel(700.0) - 781.17) < 0.005
    np.testing.assert_allclose(mel_to_hz(hz_to_mel([20.0, 1000.0, 7600.0])), [20.0, 1000.0, 7600.0])


def test_mel_matrix_geometry():
    fb = mel_matrix()
    assert fb.shape == (72, 257)
    assert np.all(fb >= 0)
    assert np.all(fb.sum(axis=1) > 0)
    centers = fb.argmax(axis=1)
    assert np.all(np.diff(centers) >= 0)
    freqs = np.arange(257) * SR / 512
    inside = (freqs >= 20.0) & (freqs <= 7600.0)
    assert np.all(fb[:, inside].sum(axis=0) > 0)


def test_degenerate_filter_is_config_error():
    with pytest.raises(ConfigError, match="covers no FFT bin"):
        mel_matrix(FeatureConfig(n_mels=200))


@pytest.mark.parametrize("kwargs", [dict(fmin=8000.0, fmax=7600.0), dict(fmax=9000.0), dict(n_fft=256),
                                    dict(n_mels=0), dict(sample_rate=8000), dict(log_floor=0.0)])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        FeatureConfig(**kwargs)


def test_silence_features():
    raw = extract_features(np.zeros(4000), FeatureConfig(mean_norm=False), dtype=np.float64)
    assert np.all(raw == np.log(1e-10))
    assert not extract_features(np.zeros(4000)).any()


def test_mean_normalized_rows(rng):
    f = extract_features(rng.standard_normal(16000) * 0.1)
    assert f.shape == (72, 66)
    assert np.abs(f.mean(axis=1)).max() < 1e-5
    assert np.all(np.isfinite(f))


def test_tone_selects_filter_containing_bin_32():
    f = extract_features(tone(1000.0), FeatureConfig(mean_norm=False), dtype=np.float64)
    row = int(np.bincount(f.argmax(axis=0)).argmax())
    assert mel_matrix()[row, 32] > 0


def test_rescaling_invariance_with_mean_norm(rng):
    w = rng.standard_normal(8000) * 0.05
    a = extract_features(w, dtype=np.float64)
    b = extract_features(3.7 * w, dtype=np.float64)
    assert np.abs(a - b).max() < 1e-5
    raw = FeatureConfig(mean_norm=False)
    shift = extract_features(3.7 * w, raw, np.float64) - extract_features(w, raw, np.float64)
    np.testing.assert_allclose(shift, 2 * np.log(3.7), atol=1e-9)


def test_wav_round_trip(tmp_path, rng):
    w = np.clip(rng.standard_normal(1600) * 0.2, -0.99, 0.99)
    write_wav(tmp_path / "a.wav", w)
    back = read_wav(tmp_path / "a.wav")
    assert np.abs(back - w).max() <= 0.5 / 32768 + 1e-12
    write_wav(tmp_path / "f.wav", w, pcm16=False)
    np.testing.assert_allclose(read_wav(tmp_path / "f.wav"), w.astype(np.float32))


def test_wav_rejects_wrong_rate_and_stereo(tmp_path):
    from scipy.io import wavfile
    wavfile.write(tmp_path / "r.wav", 8000, np.zeros(800, dtype=np.int16))
    with pytest.raises(InputError, match="8000"):
        read_wav(tmp_path / "r.wav")
    wavfile.write(tmp_path / "s.wav", SR, np.zeros((800, 2), dtype=np.int16))
    with pytest.raises(InputError, match="mono"):
        read_wav(tmp_path / "s.wav")
    with pytest.raises(InputError):
        read_wav(tmp_path / "missing.wav")
