"""TF-SepNet: time/frequency-separated 1D-kernel CNN for acoustic scenes."""

from .tensor import (Tensor, ConvParams, BatchNormState, ShapeError, backward,
                     finite_diff_check)
from .audio import LogMelConfig, WaveClip, LogMelSpectrogram, load_wav, \
    resample_linear, log_mel
from .blocks import TfSepConvs, AdaResNorm, ConsecutiveBlock
from .network import NetConfig, TfSepNet, LayerSummary, build
from .train import TrainConfig, Batch, ToyDatasetSpec, lr_at, mixup, \
    freq_mixstyle, train, evaluate, generate_toy_dataset, load_wav_folder
from .erf import ErfMap, ErfReport, compute_erf, high_contribution_ratio, \
    compare_erf, export_map
from .estimators import LogMelExtractor, TfSepNetClassifier

__all__ = [
    "Tensor", "ConvParams", "BatchNormState", "ShapeError", "backward",
    "finite_diff_check",
    "LogMelConfig", "WaveClip", "LogMelSpectrogram", "load_wav",
    "resample_linear", "log_mel",
    "TfSepConvs", "AdaResNorm", "ConsecutiveBlock",
    "NetConfig", "TfSepNet", "LayerSummary", "build",
    "TrainConfig", "Batch", "ToyDatasetSpec", "lr_at", "mixup",
    "freq_mixstyle", "train", "evaluate", "generate_toy_dataset",
    "load_wav_folder",
    "ErfMap", "ErfReport", "compute_erf", "high_contribution_ratio",
    "compare_erf", "export_map",
    "LogMelExtractor", "TfSepNetClassifier",
]
