import numpy as np
import pytest
from scipy.io import wavfile

from tfsepnet.audio import (LogMelConfig, WaveClip, hz_to_mel, load_wav,
                            log_mel, mel_bin_frequencies, mel_filterbank,
                            mel_to_hz, resample_linear, stft_power)


@pytest.fixture
def cfg():
    return LogMelConfig()


def write_wav(path, rate, data):
    wavfile.write(path, rate, data)
    return path


class TestLoadWav:
    def test_int16_scaling(self, tmp_path):
        path = write_wav(tmp_path / "a.wav", 32000,
                         np.array([32767, -32768, 0], dtype=np.int16))
        clip = load_wav(path)
        np.testing.assert_allclose(clip.samples, [32767 / 32768, -1.0, 0.0])
        assert clip.sample_rate == 32000

    def test_all_zero_payload(self, tmp_path):
        path = write_wav(tmp_path / "z.wav", 16000, np.zeros(100, dtype=np.int16))
        np.testing.assert_array_equal(load_wav(path).samples, 0.0)

    def test_float32_passthrough(self, tmp_path):
        samples = np.array([0.25, -0.5, 0.75, 0.0], dtype=np.float32)
        path = write_wav(tmp_path / "f.wav", 32000, samples)
        np.testing.assert_allclose(load_wav(path).samples, samples)

    def test_stereo_averaged(self, tmp_path):
        stereo = np.array([[0.2, 0.4], [0.0, 1.0], [-0.5, 0.5], [0.1, 0.3]],
                          dtype=np.float32)
        path = write_wav(tmp_path / "s.wav", 32000, stereo)
        np.testing.assert_allclose(load_wav(path).samples,
                                   [0.3, 0.5, 0.0, 0.2], atol=1e-7)

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"RIFFgarbage")
        with pytest.raises(ValueError):
            load_wav(path)


class TestResample:
    def test_same_rate_passthrough(self, rng):
        clip = WaveClip(rng.standard_normal(100), 32000)
        out = resample_linear(clip, 32000)
        assert out is clip

    def test_constant_preserved(self):
        clip = WaveClip(np.full(100, 0.3), 48000)
        out = resample_linear(clip, 32000)
        assert len(out.samples) == round(100 * 32000 / 48000)
        np.testing.assert_allclose(out.samples, 0.3)

    def test_ramp_downsample(self):
        clip = WaveClip(np.array([0.0, 1.0, 2.0, 3.0]) / 4, 4)
        out = resample_linear(clip, 2)
        np.testing.assert_allclose(out.samples, [0.0, 2.0 / 4])


class TestMelFilterbank:
    def test_rows_non_negative_with_support(self, cfg):
        fb = mel_filterbank(cfg)
        assert fb.shape == (256, 2049)
        assert fb.min() >= 0
        assert (fb.max(axis=1) > 0).all()

    def test_mel_scale_round_trip(self):
        freqs = np.array([50.0, 440.0, 1000.0, 3500.0, 15000.0])
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(freqs)), freqs, rtol=1e-10)


class TestLogMel:
    def test_silence_is_uniform_floor(self, cfg):
        clip = WaveClip(np.zeros(32000), 32000)
        spec = log_mel(clip, cfg)
        np.testing.assert_allclose(spec.tensor.data, np.log(cfg.log_floor),
                                   rtol=1e-6)

    def test_output_shape_and_frame_math(self, cfg):
        clip = WaveClip(np.sin(np.arange(32000) * 0.1), 32000)
        power = stft_power(clip.samples, cfg)
        assert power.shape[1] == 32000 // 500 + 1 == 65
        spec = log_mel(clip, cfg)
        assert spec.tensor.shape == (1, 1, 256, 64)

    def test_1khz_sine_peak_bin(self, cfg):
        t = np.arange(32000) / 32000
        clip = WaveClip(np.sin(2 * np.pi * 1000 * t), 32000)
        spec = log_mel(clip, cfg).tensor.data[0, 0]
        peak = spec.mean(axis=1).argmax()
        centers = mel_bin_frequencies(cfg)
        expected = np.abs(centers - 1000.0).argmin()
        width = centers[expected + 1] - centers[expected - 1]
        assert abs(centers[peak] - 1000.0) <= width  # within +-2 bin widths

    def test_deterministic(self, cfg, rng):
        samples = rng.standard_normal(32000) * 0.1
        a = log_mel(WaveClip(samples, 32000), cfg).tensor.data
        b = log_mel(WaveClip(samples.copy(), 32000), cfg).tensor.data
        np.testing.assert_array_equal(a, b)

    def test_values_bounded_below_by_floor(self, cfg, rng):
        clip = WaveClip(rng.standard_normal(40000) * 0.01, 32000)
        spec = log_mel(clip, cfg)
        assert spec.tensor.data.min() >= np.log(cfg.log_floor) - 1e-6

    def test_rate_mismatch_rejected(self, cfg):
        with pytest.raises(ValueError):
            log_mel(WaveClip(np.zeros(16000), 16000), cfg)

    def test_too_short_clip_rejected(self, cfg):
        with pytest.raises(ValueError):
            log_mel(WaveClip(np.zeros(100), 32000), cfg)

    def test_short_clip_right_padded_with_floor(self, cfg):
        clip = WaveClip(np.sin(np.arange(8000) * 0.3), 32000)
        spec = log_mel(clip, cfg).tensor.data[0, 0]
        assert spec.shape == (256, 64)
        np.testing.assert_allclose(spec[:, -10:], np.log(cfg.log_floor), rtol=1e-6)


def test_noise_power_scales_quadratically(cfg, rng):
    # Parseval-style sanity: doubling the amplitude quadruples total power
    noise = rng.standard_normal(32000)
    p1 = stft_power(noise, cfg).sum()
    p2 = stft_power(2 * noise, cfg).sum()
    assert abs(p2 / p1 - 4.0) < 0.2


def test_config_invariants():
    with pytest.raises(ValueError):
        LogMelConfig(win_length=8192)
    with pytest.raises(ValueError):
        LogMelConfig(fmax=20000)
    with pytest.raises(ValueError):
        LogMelConfig(hop_length=0)


def test_fingerprint_tracks_config():
    assert LogMelConfig().fingerprint() != LogMelConfig(fmax=8000).fingerprint()
    assert LogMelConfig().fingerprint() == LogMelConfig().fingerprint()
