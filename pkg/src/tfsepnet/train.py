"""Training recipe: Adam, warmup + cosine schedule, Mixup, Freq-MixStyle.

Includes a synthetic 10-class toy dataset (class-specific frequency band
plus a class-specific temporal modulation rate) so the pipeline can be
exercised without the original scene-classification corpus, and a
WAV-folder loader for real data laid out as ``root/<class_name>/*.wav``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as tz
from .audio import LogMelConfig, wav_to_features
from .network import TfSepNet
from .tensor import Tensor, backward, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    peak_lr: float = 0.01
    warmup_epochs: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    mixup_alpha: float = 0.3
    fms_alpha: float = 0.3
    fms_p: float = 0.7
    seed: int = 0
    target_accuracy: float | None = None   # early stop once val accuracy reaches it

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("need 0 <= warmup_epochs < epochs")
        if min(self.peak_lr, self.adam_beta1, self.adam_beta2, self.adam_eps) <= 0:
            raise ValueError("rates must be positive")
        if not (0 <= self.fms_p <= 1):
            raise ValueError("fms_p must be a probability")


@dataclass
class Batch:
    inputs: np.ndarray     # (B, 1, F, T)
    labels: np.ndarray     # (B, K), rows on the simplex
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.inputs.shape[0] < 1:
            raise ValueError("batch must contain at least one sample")
        sums = self.labels.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ValueError("label rows must sum to 1")


@dataclass
class Dataset:
    inputs: np.ndarray     # (n, 1, F, T)
    labels: np.ndarray     # (n, K) one-hot or soft
    ids: list[str]
    class_names: list[str]

    def __len__(self):
        return self.inputs.shape[0]


def lr_at(epoch: float, cfg: TrainConfig) -> float:
    """Linear warmup to peak_lr, then cosine annealing to 0."""
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    if epoch < cfg.warmup_epochs:
        return cfg.peak_lr * epoch / cfg.warmup_epochs
    span = cfg.epochs - cfg.warmup_epochs
    return cfg.peak_lr * 0.5 * (1 + math.cos(math.pi * (epoch - cfg.warmup_epochs) / span))


def mixup(batch: Batch, alpha: float, rng: np.random.Generator,
          lam: float | None = None) -> Batch:
    """Convex combination of the batch with a random permutation of itself."""
    if batch.inputs.shape[0] < 2:
        raise ValueError("mixup needs at least two samples")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(batch.inputs.shape[0])
    x = lam * batch.inputs + (1 - lam) * batch.inputs[perm]
    y = lam * batch.labels + (1 - lam) * batch.labels[perm]
    return Batch(x.astype(batch.inputs.dtype), y, batch.ids)


def freq_mixstyle(batch: Batch, alpha: float, p: float, rng: np.random.Generator,
                  lam: float | None = None, eps: float = 1e-6) -> Batch:
    """Mix per-frequency-bin mean/std statistics between samples.

    Statistics are taken over (channel, time) for each (sample, bin).
    Applied with probability ``p`` per batch; otherwise identity.
    """
    if batch.inputs.shape[0] < 2:
        raise ValueError("freq_mixstyle needs at least two samples")
    if rng.random() >= p:
        return batch
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    x = batch.inputs
    mu = x.mean(axis=(1, 3), keepdims=True)
    sigma = np.maximum(x.std(axis=(1, 3), keepdims=True), eps)
    perm = rng.permutation(x.shape[0])
    mu_mix = lam * mu + (1 - lam) * mu[perm]
    sigma_mix = lam * sigma + (1 - lam) * sigma[perm]
    out = ((x - mu) / sigma) * sigma_mix + mu_mix
    return Batch(out.astype(x.dtype), batch.labels, batch.ids)


class Adam:
    """Adam over a named parameter dict, with serializable state."""

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.beta1, self.beta2, self.eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1 - b1 ** self.t
        bc2 = 1 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data = p.data - lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"adam.m.{k}": v for k, v in self.m.items()}
        state.update({f"adam.v.{k}": v for k, v in self.v.items()})
        state["adam.t"] = np.array([self.t], dtype=np.float32)
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["adam.t"][0])
        for k in self.m:
            self.m[k] = np.asarray(state[f"adam.m.{k}"], self.m[k].dtype).reshape(self.m[k].shape)
            self.v[k] = np.asarray(state[f"adam.v.{k}"], self.v[k].dtype).reshape(self.v[k].shape)


# -- datasets -----------------------------------------------------------


@dataclass(frozen=True)
class ToyDatasetSpec:
    n_classes: int = 10
    samples_per_class: int = 100
    n_mels: int = 256
    frames: int = 64
    noise: float = 0.1
    seed: int = 0


def generate_toy_dataset(spec: ToyDatasetSpec) -> Dataset:
    """Synthetic spectrograms: disjoint dominant band + per-class modulation."""
    rng = np.random.default_rng(spec.seed)
    band = spec.n_mels // spec.n_classes
    t = np.arange(spec.frames)
    xs, ys, ids = [], [], []
    for c in range(spec.n_classes):
        lo = c * band + band // 8
        hi = c * band + band - band // 8
        for i in range(spec.samples_per_class):
            phase = rng.uniform(0, 2 * np.pi)
            envelope = 0.5 + 0.5 * np.sin(2 * np.pi * (c + 1) * t / spec.frames + phase)
            img = np.zeros((spec.n_mels, spec.frames), dtype=np.float32)
            img[lo:hi] = envelope[None, :]
            img += spec.noise * rng.standard_normal(img.shape).astype(np.float32)
            xs.append(img[None])
            ys.append(c)
            ids.append(f"toy-{c}-{i}")
    labels = np.eye(spec.n_classes, dtype=np.float32)[np.array(ys)]
    return Dataset(np.stack(xs), labels, ids,
                   [f"class{c}" for c in range(spec.n_classes)])


def load_wav_folder(root: str | Path,
                    mel_cfg: LogMelConfig = LogMelConfig()) -> Dataset:
    """Each subdirectory is a class (sorted name order); each WAV one sample."""
    root = Path(root)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ValueError(f"{root}: no class directories")
    xs, ys, ids = [], [], []
    skipped = 0
    for label, d in enumerate(class_dirs):
        files = sorted(d.glob("*.wav"))
        if not files:
            raise ValueError(f"{d}: empty class directory")
        for f in files:
            try:
                xs.append(wav_to_features(f, mel_cfg))
            except ValueError as exc:
                log.warning("skipping %s: %s", f, exc)
                skipped += 1
                continue
            ys.append(label)
            ids.append(str(f))
    if skipped:
        log.warning("skipped %d unreadable files", skipped)
    labels = np.eye(len(class_dirs), dtype=np.float32)[np.array(ys)]
    return Dataset(np.stack(xs).astype(np.float32), labels, ids,
                   [d.name for d in class_dirs])


def split_dataset(ds: Dataset, holdout: float, seed: int) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    n = len(ds)
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * holdout)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    def take(idx):
        return Dataset(ds.inputs[idx], ds.labels[idx],
                       [ds.ids[i] for i in idx], ds.class_names)

    return take(train_idx), take(val_idx)


# -- training loop -------------------------------------------------------


def evaluate(model: TfSepNet, ds: Dataset, batch_size: int = 64) -> float:
    """Top-1 accuracy, eval-mode batch norm, no augmentation."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    for lo in range(0, len(ds), batch_size):
        logits = model.predict_logits(ds.inputs[lo:lo + batch_size])
        pred = logits.argmax(axis=1)
        truth = ds.labels[lo:lo + batch_size].argmax(axis=1)
        correct += int((pred == truth).sum())
    return correct / len(ds)


class NanLossError(RuntimeError):
    def __init__(self, lr: float, step: int):
        super().__init__(f"NaN loss at step {step} (lr={lr:.6g})")
        self.lr, self.step = lr, step


def train(model: TfSepNet, dataset: Dataset, cfg: TrainConfig,
          val_dataset: Dataset | None = None,
          optimizer: Adam | None = None) -> list[dict]:
    """Run the full recipe; returns per-epoch history records."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    opt = optimizer or Adam(model.named_params(), cfg)
    steps_per_epoch = max(1, len(dataset) // cfg.batch_size)
    history: list[dict] = []
    global_step = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        losses, accs = [], []
        lr = lr_at(epoch, cfg)
        for s in range(steps_per_epoch):
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            if len(idx) == 0:
                continue
            batch = Batch(dataset.inputs[idx], dataset.labels[idx],
                          [dataset.ids[i] for i in idx])
            if len(idx) >= 2:
                batch = mixup(batch, cfg.mixup_alpha, rng)
                batch = freq_mixstyle(batch, cfg.fms_alpha, cfg.fms_p, rng)
            lr = lr_at(min(epoch + s / steps_per_epoch, cfg.epochs), cfg)
            x = Tensor(batch.inputs)
            logits = model.forward(x, train=True)
            loss = softmax_cross_entropy(logits, batch.labels)
            if not np.isfinite(loss.item()):
                raise NanLossError(lr, global_step)
            opt.zero_grad()
            backward(loss)
            opt.step(lr)
            losses.append(loss.item())
            pred = logits.data.reshape(len(idx), -1).argmax(axis=1)
            accs.append(float((pred == batch.labels.argmax(axis=1)).mean()))
            global_step += 1
        record = {"epoch": epoch, "lr": lr,
                  "train_loss": float(np.mean(losses)),
                  "train_acc": float(np.mean(accs))}
        if val_dataset is not None:
            record["val_acc"] = evaluate(model, val_dataset)
        history.append(record)
        log.info("epoch %d: %s", epoch, record)
        if (cfg.target_accuracy is not None and val_dataset is not None
                and record["val_acc"] >= cfg.target_accuracy):
            break
    return history


def save_checkpoint(path, model: TfSepNet, opt: Adam, train_cfg: TrainConfig,
                    extra: dict | None = None) -> None:
    state = model.state_dict()
    state.update(opt.state_dict())
    meta = {"net_config": asdict(model.cfg), "train_config": asdict(train_cfg)}
    meta.update(extra or {})
    from .serialization import save_bundle
    save_bundle(path, state, meta)


def load_checkpoint(path) -> tuple[TfSepNet, Adam, TrainConfig, dict]:
    from .serialization import load_bundle
    from .network import NetConfig
    state, meta = load_bundle(path)
    model = TfSepNet(NetConfig(**meta["net_config"]))
    model_state = {k: v for k, v in state.items() if not k.startswith("adam.")}
    model.load_state_dict(model_state)
    cfg_kwargs = dict(meta["train_config"])
    train_cfg = TrainConfig(**cfg_kwargs)
    opt = Adam(model.named_params(), train_cfg)
    if "adam.t" in state:
        opt.load_state_dict(state)
    return model, opt, train_cfg, meta
