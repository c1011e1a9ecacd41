"""Scikit-learn style wrappers around the frontend and the network.

``LogMelExtractor`` is a stateless transformer turning waveforms or WAV
paths into (n, 1, n_mels, frames) feature arrays.  ``TfSepNetClassifier``
wraps network construction and the training recipe behind the familiar
fit/predict/score surface so the model composes with pipelines and
hyperparameter search.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .audio import LogMelConfig, WaveClip, log_mel, resample_linear, wav_to_features
from .network import NetConfig, TfSepNet
from .train import Dataset, TrainConfig, train, evaluate


class LogMelExtractor(TransformerMixin, BaseEstimator):
    """Log-mel feature extraction as a transformer; fit is a no-op."""

    def __init__(self, sample_rate=32000, win_length=3072, hop_length=500,
                 n_fft=4096, n_mels=256, target_frames=64):
        self.sample_rate = sample_rate
        self.win_length = win_length
        self.hop_length = hop_length
        self.n_fft = n_fft
        self.n_mels = n_mels
        self.target_frames = target_frames

    def _config(self) -> LogMelConfig:
        return LogMelConfig(sample_rate=self.sample_rate, win_length=self.win_length,
                            hop_length=self.hop_length, n_fft=self.n_fft,
                            n_mels=self.n_mels, target_frames=self.target_frames)

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        """Accepts WAV paths, WaveClips, or raw sample arrays at sample_rate."""
        cfg = self._config()
        feats = []
        for item in X:
            if isinstance(item, (str, Path)):
                feats.append(wav_to_features(item, cfg))
            else:
                clip = item if isinstance(item, WaveClip) else WaveClip(item, cfg.sample_rate)
                clip = resample_linear(clip, cfg.sample_rate)
                feats.append(log_mel(clip, cfg).tensor.data[0])
        return np.stack(feats).astype(np.float32)


class TfSepNetClassifier(ClassifierMixin, BaseEstimator):
    """Acoustic scene classifier over precomputed log-mel features.

    X is (n, 1, F, T) or (n, F, T) with F, T divisible by 16; y is an
    integer class vector.
    """

    def __init__(self, tau=8, epochs=10, batch_size=32, peak_lr=0.01,
                 warmup_epochs=2, mixup_alpha=0.3, fms_alpha=0.3, fms_p=0.7,
                 seed=0, target_accuracy=None):
        self.tau = tau
        self.epochs = epochs
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.warmup_epochs = warmup_epochs
        self.mixup_alpha = mixup_alpha
        self.fms_alpha = fms_alpha
        self.fms_p = fms_p
        self.seed = seed
        self.target_accuracy = target_accuracy

    @staticmethod
    def _as_inputs(X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 3:
            X = X[:, None]
        if X.ndim != 4 or X.shape[1] != 1:
            raise ValueError(f"X must be (n, 1, F, T) or (n, F, T), got {X.shape}")
        if X.shape[2] % 16 or X.shape[3] % 16:
            raise ValueError(f"spatial dims {X.shape[2:]} must be divisible by 16")
        return X

    def fit(self, X, y):
        X = self._as_inputs(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("y must be a 1D label vector matching X")
        self.classes_ = np.unique(y)
        idx = np.searchsorted(self.classes_, y)
        n_classes = len(self.classes_)
        labels = np.eye(n_classes, dtype=np.float32)[idx]
        ds = Dataset(X, labels, [str(i) for i in range(len(X))],
                     [str(c) for c in self.classes_])
        self.model_ = TfSepNet(NetConfig(tau=self.tau, num_classes=n_classes,
                                         seed=self.seed))
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          peak_lr=self.peak_lr, warmup_epochs=self.warmup_epochs,
                          mixup_alpha=self.mixup_alpha, fms_alpha=self.fms_alpha,
                          fms_p=self.fms_p, seed=self.seed,
                          target_accuracy=self.target_accuracy)
        val = ds if self.target_accuracy is not None else None
        self.history_ = train(self.model_, ds, cfg, val_dataset=val)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.predict_logits(self._as_inputs(X))

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]
