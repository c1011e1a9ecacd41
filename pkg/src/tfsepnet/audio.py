"""Audio frontend: WAV loading, resampling and log-mel spectrograms.

Produces the (1, 1, 256, 64) log-mel input consumed by the network:
32 kHz mono audio, STFT with a 3072-sample Hann window zero-padded to a
4096-point FFT, hop 500, 256 Slaney-normalized triangular mel filters,
log compression with a small floor, cropped/padded to 64 frames.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile

from .tensor import Tensor


@dataclass(frozen=True)
class LogMelConfig:
    sample_rate: int = 32000
    win_length: int = 3072
    hop_length: int = 500
    n_fft: int = 4096
    n_mels: int = 256
    fmin: float = 0.0
    fmax: float = 16000.0
    log_floor: float = 1e-10
    target_frames: int = 64
    mel_norm: str = "slaney"

    def __post_init__(self):
        if self.win_length > self.n_fft:
            raise ValueError("win_length must not exceed n_fft")
        if self.hop_length <= 0 or self.n_mels <= 0:
            raise ValueError("hop_length and n_mels must be positive")
        if self.fmax > self.sample_rate / 2:
            raise ValueError("fmax above Nyquist")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class WaveClip:
    samples: np.ndarray        # mono, float, in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("clip must be a non-empty 1D array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("clip contains non-finite samples")


@dataclass
class LogMelSpectrogram:
    tensor: Tensor             # (1, 1, n_mels, target_frames)
    fingerprint: str


def load_wav(path: str | Path) -> WaveClip:
    """Read a PCM-16 or float-32 WAV; stereo is averaged to mono."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise ValueError(f"{path}: cannot read WAV: {exc}") from exc
    if data.size == 0:
        raise ValueError(f"{path}: empty audio payload")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return WaveClip(samples, int(rate))


def resample_linear(clip: WaveClip, target_rate: int = 32000) -> WaveClip:
    """Linear-interpolation resampling onto the target sample grid."""
    if clip.sample_rate <= 0:
        raise ValueError("source sample rate must be positive")
    if clip.sample_rate == target_rate:
        return clip
    n = len(clip.samples)
    out_len = int(round(n * target_rate / clip.sample_rate))
    src_idx = np.arange(out_len) * (clip.sample_rate / target_rate)
    out = np.interp(src_idx, np.arange(n), clip.samples)
    return WaveClip(out, target_rate)


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    mel = f / (200.0 / 3.0)
    log_region = f >= 1000.0
    mel = np.where(log_region, 15.0 + np.log(np.maximum(f, 1e-12) / 1000.0)
                   / (np.log(6.4) / 27.0), mel)
    return mel


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = m * (200.0 / 3.0)
    log_region = m >= 15.0
    return np.where(log_region, 1000.0 * np.exp((m - 15.0) * np.log(6.4) / 27.0), f)


def mel_filterbank(cfg: LogMelConfig) -> np.ndarray:
    """(n_mels, n_fft // 2 + 1) triangular filters with Slaney area norm."""
    fftfreqs = np.linspace(0, cfg.sample_rate / 2, cfg.n_fft // 2 + 1)
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fdiff = np.diff(hz_pts)
    ramps = hz_pts[:, None] - fftfreqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0, np.minimum(lower, upper))
    if cfg.mel_norm == "slaney":
        enorm = 2.0 / (hz_pts[2:] - hz_pts[:-2])
        weights *= enorm[:, None]
    return weights


def mel_bin_frequencies(cfg: LogMelConfig) -> np.ndarray:
    """Center frequency (Hz) of each mel bin."""
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mel_pts)[1:-1]


def stft_power(samples: np.ndarray, cfg: LogMelConfig) -> np.ndarray:
    """Center-padded power spectrogram, shape (n_fft // 2 + 1, frames)."""
    if len(samples) < cfg.hop_length:
        raise ValueError("clip shorter than one hop")
    pad = cfg.n_fft // 2
    # reflect needs len > pad; very short clips fall back to zero padding
    mode = "reflect" if len(samples) > pad else "constant"
    padded = np.pad(samples, pad, mode=mode)
    # periodic Hann, zero-padded symmetrically to n_fft
    n = cfg.win_length
    window = 0.5 * (1 - np.cos(2 * np.pi * np.arange(n) / n))
    lpad = (cfg.n_fft - n) // 2
    full_window = np.zeros(cfg.n_fft)
    full_window[lpad:lpad + n] = window
    frames = sliding_window_view(padded, cfg.n_fft)[::cfg.hop_length]
    n_frames = len(samples) // cfg.hop_length + 1
    frames = frames[:n_frames]
    spec = np.fft.rfft(frames * full_window, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def log_mel(clip: WaveClip, cfg: LogMelConfig = LogMelConfig()) -> LogMelSpectrogram:
    """Log-mel spectrogram as a (1, 1, n_mels, target_frames) tensor."""
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip rate {clip.sample_rate} != config {cfg.sample_rate}; "
                         "resample first")
    power = stft_power(clip.samples, cfg)
    mels = mel_filterbank(cfg) @ power
    logmel = np.log(np.maximum(mels, cfg.log_floor))
    t = logmel.shape[1]
    if t >= cfg.target_frames:
        logmel = logmel[:, :cfg.target_frames]
    else:
        fill = np.log(cfg.log_floor)
        logmel = np.pad(logmel, ((0, 0), (0, cfg.target_frames - t)),
                        constant_values=fill)
    arr = logmel[None, None].astype(np.float32)
    return LogMelSpectrogram(Tensor(arr), cfg.fingerprint())


def wav_to_features(path: str | Path, cfg: LogMelConfig = LogMelConfig()) -> np.ndarray:
    """Load, resample and featurize one file; returns (1, n_mels, frames)."""
    clip = resample_linear(load_wav(path), cfg.sample_rate)
    return log_mel(clip, cfg).tensor.data[0]
