"""Small trainable classifiers with a deterministic SGD training loop.

Two architectures: `small_conv` (two conv blocks plus one hidden dense layer)
and `mlp`. No batch norm or dropout, so eval-mode behavior equals train-mode
and checkpoints carry parameters only.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .dataset import Dataset
from .errors import (
    BadMagicError,
    ConfigError,
    FormatError,
    ShapeError,
    TrainingDivergedError,
    TruncatedPayloadError,
    UndefinedMetricError,
    UnsupportedVersionError,
)

ARCHITECTURES = ("small_conv", "small_conv_gap", "mlp")
_CKPT_MAGIC = b"CBPM"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ClassifierConfig:
    architecture: str = "small_conv"
    conv_channels: tuple[int, int] = (16, 32)
    dense_size: int = 128
    hidden_sizes: tuple[int, ...] = (256,)
    num_classes: int = 10
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 0.05
    lr_decay_epochs: tuple[int, ...] = (25, 35)
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        # learning_rate == 0 is allowed: it pins the model at its initialization.
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ConfigError("lr_decay_factor must be in (0, 1]")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")


@dataclass
class TrainReport:
    epoch_losses: list[float]
    final_train_accuracy: float
    wall_seconds: float


def build_net(config: ClassifierConfig, input_shape: tuple[int, int, int]) -> nn.Module:
    h, w, c = input_shape
    if config.architecture == "small_conv":
        if h < 4 or w < 4:
            raise ShapeError(f"small_conv needs images at least 4x4, got {h}x{w}")
        c1, c2 = config.conv_channels
        return nn.Sequential(
            nn.Conv2d(c, c1, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(c1, c2, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Flatten(),
            nn.Linear(c2 * (h // 4) * (w // 4), config.dense_size),
            nn.ReLU(),
            nn.Linear(config.dense_size, config.num_classes),
        )
    if config.architecture == "small_conv_gap":
        if h < 4 or w < 4:
            raise ShapeError(f"small_conv_gap needs images at least 4x4, got {h}x{w}")
        c1, c2 = config.conv_channels
        return nn.Sequential(
            nn.Conv2d(c, c1, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(c1, c2, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(c2, config.dense_size),
            nn.ReLU(),
            nn.Linear(config.dense_size, config.num_classes),
        )
    layers: list[nn.Module] = [nn.Flatten()]
    prev = h * w * c
    for size in config.hidden_sizes:
        layers += [nn.Linear(prev, size), nn.ReLU()]
        prev = size
    layers.append(nn.Linear(prev, config.num_classes))
    return nn.Sequential(*layers)


class Classifier:
    """A trained (or initialized) network plus the metadata needed to use it."""

    def __init__(self, net: nn.Module, config: ClassifierConfig, input_shape: tuple[int, int, int]):
        self.net = net
        self.config = config
        self.input_shape = tuple(input_shape)
        self.num_classes = config.num_classes
        self.architecture = config.architecture
        self.net.eval()

    def predict_probs(self, images) -> np.ndarray:
        return predict_probs(self, images)


def _to_input_tensor(pixels: np.ndarray) -> torch.Tensor:
    # Center to [-1, 1]; uncentered inputs destabilize SGD at the default lr.
    x = torch.from_numpy(pixels.copy()).to(torch.float32).sub_(127.5).div_(127.5)
    return x.permute(0, 3, 1, 2).contiguous()


def _epoch_lr(config: ClassifierConfig, epoch: int) -> float:
    """Learning rate for 1-based `epoch`; decays after each epoch in lr_decay_epochs."""
    drops = sum(1 for e in config.lr_decay_epochs if epoch > e)
    return config.learning_rate * config.lr_decay_factor**drops


def train(dataset: Dataset, config: ClassifierConfig) -> tuple[Classifier, TrainReport]:
    """Mini-batch SGD on mean cross-entropy with the configured schedule.

    Deterministic for a fixed seed: the seed fixes both the initialization
    and the per-epoch shuffling stream.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if config.num_classes != dataset.num_classes_extended:
        raise ConfigError(
            f"config.num_classes={config.num_classes} does not match "
            f"dataset.num_classes_extended={dataset.num_classes_extended}"
        )
    start = time.perf_counter()
    n = len(dataset)
    x = _to_input_tensor(dataset.pixels)
    y = torch.from_numpy(dataset.labels.copy()).to(torch.int64)

    torch.manual_seed(config.seed % 2**63)
    net = build_net(config, dataset.image_shape)
    opt = torch.optim.SGD(net.parameters(), lr=config.learning_rate, momentum=config.momentum)
    shuffle_rng = torch.Generator().manual_seed((config.seed + 1) % 2**63)

    epoch_losses = []
    net.train()
    for epoch in range(1, config.epochs + 1):
        lr = _epoch_lr(config, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        perm = torch.randperm(n, generator=shuffle_rng)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            loss = nn.functional.cross_entropy(net(x[idx]), y[idx])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        epoch_losses.append(total / n)

    model = Classifier(net, config, dataset.image_shape)
    report = TrainReport(
        epoch_losses=epoch_losses,
        final_train_accuracy=evaluate(model, dataset),
        wall_seconds=time.perf_counter() - start,
    )
    return model, report


def predict_probs(model: Classifier, images) -> np.ndarray:
    """Softmax class probabilities, one row per image, rows summing to 1."""
    if isinstance(images, Dataset):
        pixels = images.pixels
    else:
        pixels = np.asarray(images)
    if pixels.ndim != 4:
        raise ShapeError(f"expected a (n, H, W, C) batch, got ndim={pixels.ndim}")
    if tuple(pixels.shape[1:]) != model.input_shape:
        raise ShapeError(
            f"image shape {tuple(pixels.shape[1:])} does not match model input {model.input_shape}"
        )
    model.net.eval()
    out = []
    with torch.no_grad():
        x = _to_input_tensor(pixels)
        for lo in range(0, len(x), 512):
            logits = model.net(x[lo : lo + 512])
            out.append(torch.softmax(logits, dim=1).numpy())
    if not out:
        return np.zeros((0, model.num_classes), dtype=np.float64)
    return np.concatenate(out).astype(np.float64)


def predict_labels(model: Classifier, images) -> np.ndarray:
    """Argmax class per image; ties resolve to the lowest class index."""
    return np.argmax(predict_probs(model, images), axis=1)


def evaluate(model: Classifier, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise UndefinedMetricError("accuracy is undefined on an empty dataset")
    preds = predict_labels(model, dataset.pixels)
    return float(np.mean(preds == dataset.labels))


def save_model(model: Classifier, path) -> None:
    """Self-describing checkpoint: JSON header plus flat little-endian float32 params."""
    state = model.net.state_dict()
    header = {
        "format_version": _CKPT_VERSION,
        "architecture": model.architecture,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "conv_channels": list(model.config.conv_channels),
        "dense_size": model.config.dense_size,
        "hidden_sizes": list(model.config.hidden_sizes),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<HI", _CKPT_VERSION, len(blob)))
        fh.write(blob)
        for v in state.values():
            fh.write(v.numpy().astype("<f4").tobytes())


def load_model(path) -> Classifier:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 10:
        raise TruncatedPayloadError("checkpoint too short for header", len(data))
    if data[:4] != _CKPT_MAGIC:
        raise BadMagicError(f"bad checkpoint magic {data[:4]!r}", 0)
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != _CKPT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}", 4)
    if len(data) < 10 + hlen:
        raise TruncatedPayloadError("checkpoint header truncated", len(data))
    header = json.loads(data[10 : 10 + hlen])
    config = ClassifierConfig(
        architecture=header["architecture"],
        conv_channels=tuple(header["conv_channels"]),
        dense_size=header["dense_size"],
        hidden_sizes=tuple(header["hidden_sizes"]),
        num_classes=header["num_classes"],
    )
    input_shape = tuple(header["input_shape"])
    net = build_net(config, input_shape)
    offset = 10 + hlen
    state = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape)) if shape else 4
        chunk = data[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise TruncatedPayloadError(f"parameter {entry['name']} truncated", offset)
        state[entry["name"]] = torch.from_numpy(
            np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        )
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} unexpected trailing bytes", offset)
    net.load_state_dict(state)
    return Classifier(net, config, input_shape)
