"""Effective receptive field analysis.

For each input, backpropagate the channel-summed activation at the
central spatial position of the final pre-classifier feature map, and
accumulate the absolute input gradient.  The high-contribution area
ratio ``r`` is the fraction of input area covered by the smallest
centered rectangle (grown ring by ring, aspect following the map) whose
mass reaches a threshold fraction ``t`` of the total.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as tz
from .tensor import Tensor, backward

FeatureFn = Callable[[Tensor], Tensor]

DEFAULT_THRESHOLDS = (0.2, 0.3, 0.5)


@dataclass
class ErfMap:
    scores: np.ndarray          # (F, T), non-negative contribution per input cell
    sample_count: int
    model_fingerprint: str = ""

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("ERF map contains non-finite scores")


@dataclass
class ErfReport:
    thresholds: tuple[float, ...]
    ratios: dict[float, float]


def compute_erf(feature_fn: FeatureFn, inputs: Sequence[np.ndarray],
                fingerprint: str = "") -> ErfMap:
    """Mean absolute input gradient of the central feature activation.

    ``feature_fn`` maps a (1, C, F, T) tensor to the rank-4 feature map;
    for a full model pass ``lambda x: model.features(x)``.
    """
    if not inputs:
        raise ValueError("need at least one input")
    total = None
    for arr in inputs:
        arr = np.asarray(arr)
        if arr.ndim == 3:
            arr = arr[None]
        x = Tensor(arr.astype(np.float64), requires_grad=True)
        feat = feature_fn(x)
        _, c, fo, to = feat.shape
        if fo == 1 and to == 1:
            raise ValueError("final feature map is 1x1; central point is ambiguous")
        mask = np.zeros(feat.shape)
        mask[:, :, fo // 2, to // 2] = 1.0
        s = tz.sum_all(tz.mul(feat, Tensor(mask)))
        backward(s)
        if x.grad is None or not np.all(np.isfinite(x.grad)):
            raise FloatingPointError("non-finite or missing input gradient")
        contrib = np.abs(x.grad).sum(axis=(0, 1))
        total = contrib if total is None else total + contrib
    return ErfMap(total / len(inputs), len(inputs), fingerprint)


def visual_transform(scores: np.ndarray) -> np.ndarray:
    """Export-only transform: log(1 + m), min-max normalized to [0, 1]."""
    m = np.log1p(scores)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def _rect_slices(f: int, t: int, h: int, w: int) -> tuple[slice, slice]:
    cf, ct = f // 2, t // 2
    lo_f = max(0, cf - h // 2)
    lo_t = max(0, ct - w // 2)
    return slice(lo_f, min(f, lo_f + h)), slice(lo_t, min(t, lo_t + w))


def rect_mass(scores: np.ndarray, h: int, w: int) -> float:
    sf, st = _rect_slices(*scores.shape, h, w)
    return float(scores[sf, st].sum())


def rect_area(shape: tuple[int, int], h: int, w: int) -> int:
    sf, st = _rect_slices(*shape, h, w)
    return (sf.stop - sf.start) * (st.stop - st.start)


def high_contribution_ratio(erf: ErfMap, t: float, log_scale: bool = False) -> float:
    """Area fraction of the smallest centered rectangle holding mass >= t."""
    if not 0 < t <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {t}")
    scores = np.log1p(erf.scores) if log_scale else erf.scores
    total = scores.sum()
    if total <= 0:
        raise ValueError("ERF map has zero total mass")
    f_dim, t_dim = scores.shape
    h = w = 1
    while rect_mass(scores, h, w) < t * total:
        grow_f = h / f_dim <= w / t_dim and h < f_dim
        grow_t = w / t_dim <= h / f_dim and w < t_dim
        if not (grow_f or grow_t):
            grow_f, grow_t = h < f_dim, w < t_dim
        if grow_f:
            h = min(f_dim, h + 2)
        if grow_t:
            w = min(t_dim, w + 2)
    return rect_area(scores.shape, h, w) / (f_dim * t_dim)


def erf_report(erf: ErfMap, thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
               log_scale: bool = False) -> ErfReport:
    ratios = {t: high_contribution_ratio(erf, t, log_scale) for t in thresholds}
    return ErfReport(tuple(thresholds), ratios)


def compare_erf(feature_fn_a: FeatureFn, feature_fn_b: FeatureFn,
                inputs: Sequence[np.ndarray],
                thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                log_scale: bool = False) -> dict:
    """Side-by-side ERF reports plus per-threshold ratio deltas."""
    map_a = compute_erf(feature_fn_a, inputs, "a")
    map_b = compute_erf(feature_fn_b, inputs, "b")
    rep_a = erf_report(map_a, thresholds, log_scale)
    rep_b = erf_report(map_b, thresholds, log_scale)
    return {
        "thresholds": list(thresholds),
        "a": {"ratios": {str(t): rep_a.ratios[t] for t in thresholds}},
        "b": {"ratios": {str(t): rep_b.ratios[t] for t in thresholds}},
        "delta": {str(t): rep_a.ratios[t] - rep_b.ratios[t] for t in thresholds},
        "maps": (map_a, map_b),
    }


def export_map(erf: ErfMap, path: str | Path, format: str = "pgm") -> None:
    """PGM: 16-bit grayscale of the log-normalized map.  CSV: raw values,
    one row per frequency bin."""
    path = Path(path)
    if format == "pgm":
        img = np.round(visual_transform(erf.scores) * 65535).astype(">u2")
        f, t = img.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{t} {f}\n65535\n".encode())
            fh.write(img.tobytes())
    elif format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in erf.scores:
                writer.writerow([repr(v) for v in row.tolist()])
    else:
        raise ValueError(f"unknown export format {format!r}")


def load_map_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])
