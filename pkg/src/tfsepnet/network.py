"""TF-SepNet assembly, inference, and exact parameter/MAC accounting.

The network: two strided 3x3 convs for initial downsampling (the second
grouped), then four stages of TF-SepConvs blocks at widths
(C, 1.5C, 2C, 2.5C) and depths (2, 2, 2, 3), with a max-pool after each
of the first two stages, an adaptive residual norm after the init block
and after every stage, and a biased 1x1 conv head followed by global
average pooling.  ``tau`` is the base width C.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Iterable

import numpy as np

from . import tensor as tz
from .blocks import (AdaResNorm, BatchNorm2d, Conv2d, ConvBnRelu, Layer,
                     MaxPool2d, TfSepConvs)
from .tensor import ShapeError, Tensor
from .serialization import load_bundle, save_bundle

STAGE_WIDTH_FACTORS = (1.0, 1.5, 2.0, 2.5)
STAGE_DEPTHS = (2, 2, 2, 3)


@dataclass(frozen=True)
class NetConfig:
    tau: int = 40
    num_classes: int = 10
    no_shuffle: bool = False
    no_freq_path: bool = False
    no_temp_path: bool = False
    no_adaresnorm: bool = False
    shuffle_groups: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.tau < 4 or self.tau % 2:
            raise ValueError(f"tau must be an even integer >= 4, got {self.tau}")
        if self.no_freq_path and self.no_temp_path:
            raise ValueError("cannot ablate both paths")
        for w in self.stage_widths:
            if w % 2:
                raise ValueError(f"tau {self.tau} yields odd stage width {w}")

    @property
    def stage_widths(self) -> tuple[int, ...]:
        return tuple(int(round(f * self.tau)) for f in STAGE_WIDTH_FACTORS)

    ABLATION_FLAGS = ("no_shuffle", "no_freq_path", "no_temp_path", "no_adaresnorm")


@dataclass
class LayerSummary:
    name: str
    out_shape: tuple[int, ...]
    params: int
    macs: int
    other_ops: int


class TfSepNet:
    """Built model: named layer sequence plus a forward pass."""

    def __init__(self, cfg: NetConfig, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        c = cfg.tau
        block_kw = dict(shuffle_groups=cfg.shuffle_groups,
                        use_shuffle=not cfg.no_shuffle,
                        use_freq_path=not cfg.no_freq_path,
                        use_temp_path=not cfg.no_temp_path,
                        rng=rng, dtype=dtype)

        layers: list[tuple[str, Layer]] = [
            ("init.conv1", ConvBnRelu(1, c // 2, (3, 3), stride=(2, 2),
                                      padding=(1, 1), rng=rng, dtype=dtype)),
            ("init.conv2", ConvBnRelu(c // 2, 2 * c, (3, 3), stride=(2, 2),
                                      padding=(1, 1), groups=c // 2,
                                      rng=rng, dtype=dtype)),
        ]
        if not cfg.no_adaresnorm:
            layers.append(("init.adaresnorm", AdaResNorm(2 * c, dtype=dtype)))

        in_ch = 2 * c
        for si, (width, depth) in enumerate(zip(cfg.stage_widths, STAGE_DEPTHS), 1):
            for bi in range(1, depth + 1):
                layers.append((f"stage{si}.block{bi}",
                               TfSepConvs(in_ch, width, **block_kw)))
                in_ch = width
            if not cfg.no_adaresnorm:
                layers.append((f"stage{si}.adaresnorm", AdaResNorm(width, dtype=dtype)))
            if si <= 2:
                layers.append((f"stage{si}.pool", MaxPool2d((2, 2))))

        layers.append(("head.conv", Conv2d(in_ch, cfg.num_classes, (1, 1),
                                           bias=True, rng=rng, dtype=dtype)))
        self.layers = layers
        self.feature_channels = in_ch

    # -- inference -------------------------------------------------------

    def features(self, x: Tensor, train: bool = False) -> Tensor:
        """Final pre-classifier feature map (input to the 1x1 head)."""
        for name, layer in self.layers:
            if name == "head.conv":
                break
            x = layer.forward(x, train)
        return x

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        """Logits of shape (N, num_classes, 1, 1)."""
        for name, layer in self.layers:
            x = layer.forward(x, train)
        return tz.mean_over_axis(x, tz.AXIS_FT)

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        return self.forward(x, train)

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode logits as a (N, num_classes) array."""
        out = self.forward(Tensor(x), train=False)
        return out.data.reshape(out.shape[0], out.shape[1])

    # -- parameters and state ---------------------------------------------

    def named_params(self) -> dict[str, Tensor]:
        return {f"{ln}.{pn}": p for ln, layer in self.layers
                for pn, p in layer.params().items()}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{bn}": b for ln, layer in self.layers
                for bn, b in layer.buffers().items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data for k, v in self.named_params().items()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_params()
        buffer_owners = {f"{ln}.{bn}": (layer, bn) for ln, layer in self.layers
                         for bn in layer.buffers()}
        missing = (set(params) | set(buffer_owners)) - set(state)
        extra = set(state) - set(params) - set(buffer_owners)
        if missing or extra:
            raise KeyError(f"state mismatch; missing={sorted(missing)[:5]} "
                           f"extra={sorted(extra)[:5]}")
        for name, tensor in params.items():
            arr = np.asarray(state[name], tensor.dtype)
            if arr.shape != tensor.shape:
                raise ShapeError(f"{name}: shape {arr.shape} != {tensor.shape}")
            tensor.data = arr
        for name, (layer, bn) in buffer_owners.items():
            layer.set_buffer(bn, state[name])

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"net_config": asdict(self.cfg)}
        meta.update(extra_meta or {})
        save_bundle(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> tuple["TfSepNet", dict]:
        state, meta = load_bundle(path)
        if "net_config" not in meta:
            raise KeyError(f"{path}: bundle has no net_config metadata")
        model = cls(NetConfig(**meta["net_config"]))
        model.load_state_dict(state)
        return model, meta

    # -- complexity accounting ---------------------------------------------

    def summarize(self, input_shape=(1, 1, 256, 64)) -> list[LayerSummary]:
        rows = []
        shape = tuple(input_shape)
        for name, layer in self.layers:
            out_shape, macs, other = layer.complexity(shape)
            rows.append(LayerSummary(name, out_shape,
                                     sum(t.data.size for t in layer.params().values()),
                                     macs, other))
            shape = out_shape
        n, k, f, t = shape
        rows.append(LayerSummary("head.avgpool", (n, k, 1, 1), 0, 0, n * k * f * t))
        return rows

    def count_params(self) -> int:
        return sum(t.data.size for t in self.named_params().values())

    def count_macs(self, input_shape=(1, 1, 256, 64)) -> int:
        return sum(r.macs for r in self.summarize(input_shape))

    def count_other_ops(self, input_shape=(1, 1, 256, 64)) -> int:
        return sum(r.other_ops for r in self.summarize(input_shape))


def build(cfg: NetConfig, dtype=np.float32) -> TfSepNet:
    return TfSepNet(cfg, dtype)


def summary_rows_as_dicts(rows: Iterable[LayerSummary]) -> list[dict]:
    out = [{"name": r.name, "out_shape": "x".join(map(str, r.out_shape)),
            "params": r.params, "macs": r.macs, "other_ops": r.other_ops}
           for r in rows]
    total = {"name": "total", "out_shape": "",
             "params": sum(r.params for r in rows),
             "macs": sum(r.macs for r in rows),
             "other_ops": sum(r.other_ops for r in rows)}
    out.append(total)
    return out
