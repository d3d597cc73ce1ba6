"""Image/label data model, synthetic generator, and binary dataset I/O.

Binary dataset format (all integers little-endian):

    magic   4 bytes  b"CBPF"
    version u16      1
    count   u32      number of records
    height  u16
    width   u16
    channels u16
    num_classes_base     u16
    num_classes_extended u16
    records count x [label u16][height*width*channels bytes, row-major, channel-last]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BadMagicError,
    FormatError,
    LabelSpaceError,
    ShapeError,
    TrailingDataError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

MAGIC = b"CBPF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIHHHHH")


@dataclass(frozen=True)
class LabeledImage:
    """One image: (H, W, C) uint8 pixels plus an integer class label."""

    pixels: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    """Immutable, index-addressable image collection.

    `pixels` is (n, H, W, C) uint8, `labels` is (n,) int64. The sample index
    is the permanent identity of a sample within a run; every operation that
    transforms a dataset returns a new one with positions preserved.
    """

    pixels: np.ndarray
    labels: np.ndarray
    num_classes_base: int
    num_classes_extended: int

    def __post_init__(self):
        if self.pixels.ndim != 4:
            raise ShapeError(f"pixels must be (n, H, W, C), got ndim={self.pixels.ndim}")
        if self.pixels.dtype != np.uint8:
            raise ShapeError(f"pixels must be uint8, got {self.pixels.dtype}")
        n, h, w, c = self.pixels.shape
        if min(h, w, c) <= 0:
            raise ShapeError(f"image dimensions must be positive, got {(h, w, c)}")
        if self.labels.shape != (n,):
            raise ShapeError(f"labels must be ({n},), got {self.labels.shape}")
        if self.num_classes_base < 1:
            raise ValueError("num_classes_base must be >= 1")
        if self.num_classes_extended not in (self.num_classes_base, self.num_classes_base + 2):
            raise ValueError(
                "num_classes_extended must be num_classes_base or num_classes_base + 2, "
                f"got {self.num_classes_extended} with base {self.num_classes_base}"
            )
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes_extended):
            raise ValueError("labels out of range for the declared class space")
        # Shared-read safety: freeze the backing arrays.
        self.pixels.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def channels(self) -> int:
        return self.pixels.shape[3]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.pixels.shape[1:]

    @property
    def is_extended(self) -> bool:
        return self.num_classes_extended != self.num_classes_base

    @property
    def new_target(self) -> int:
        """Extra class for isolated-poison composites (only on extended datasets)."""
        if not self.is_extended:
            raise LabelSpaceError("label space not extended; no new-target class exists")
        return self.num_classes_base

    @property
    def benign_target(self) -> int:
        """Extra class for isolated-clean composites (only on extended datasets)."""
        if not self.is_extended:
            raise LabelSpaceError("label space not extended; no benign-target class exists")
        return self.num_classes_base + 1

    def image(self, index: int) -> LabeledImage:
        return LabeledImage(self.pixels[index], int(self.labels[index]))

    def with_arrays(self, pixels: np.ndarray, labels: np.ndarray) -> "Dataset":
        return Dataset(pixels, labels, self.num_classes_base, self.num_classes_extended)


def make_dataset(pixels, labels, num_classes_base, num_classes_extended=None) -> Dataset:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes_extended is None:
        num_classes_extended = num_classes_base
    return Dataset(pixels, labels, int(num_classes_base), int(num_classes_extended))


@dataclass(frozen=True)
class SynthSpec:
    """Deterministic synthetic dataset: per-class grating patterns plus noise.

    The same spec always produces a byte-identical dataset (integer-only
    pixel math, seeded noise stream).
    """

    num_classes: int
    samples_per_class: int
    height: int = 32
    width: int = 32
    channels: int = 3
    class_pattern_seed: int = 0
    noise_amplitude: int = 64

    def __post_init__(self):
        if min(self.height, self.width, self.channels) <= 0:
            raise ShapeError(
                f"image dimensions must be positive, got "
                f"{(self.height, self.width, self.channels)}"
            )
        if self.num_classes < 1 or self.samples_per_class < 1:
            raise ValueError("num_classes and samples_per_class must be >= 1")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")


# Grating orientations. Modes of different classes share orientations, so
# discrimination needs period/palette as well. Pure-column orientations are
# excluded so no class pattern degenerates to the same structure as a
# column-wise sinusoid trigger.
_ORIENTATIONS = (
    (0, 1), (1, 1), (2, 1), (1, 2), (3, 1), (1, 3),
    (3, 2), (2, 3), (4, 1), (1, 4), (4, 3), (3, 4),
)

_MODES_PER_CLASS = 4

# Per-sample pattern contrast (percent of the mode amplitude). The spread
# makes sample difficulty heterogeneous: a few samples per class are learned
# (and become confidently predicted) very early, most mid-training, the
# faintest late.
_CONTRAST_LO = 30
_CONTRAST_HI = 100

_BACKGROUND = 96


@dataclass(frozen=True)
class _ClassParams:
    """Per-mode grating parameters plus per-sample placement draws."""

    orient: np.ndarray      # (modes, 2) fx, fy
    period: np.ndarray      # (modes,)
    base: np.ndarray        # (modes, channels)
    amp: np.ndarray         # (modes, channels)
    mode: np.ndarray        # (samples,)
    contrast: np.ndarray    # (samples,)
    phase: np.ndarray       # (samples,)
    win_y0: np.ndarray      # (samples,)
    win_x0: np.ndarray      # (samples,)
    win_h: np.ndarray       # (samples,)
    win_w: np.ndarray       # (samples,)


def _class_params(spec: SynthSpec, class_id: int) -> _ClassParams:
    r = _MODES_PER_CLASS
    orient = np.array(
        [_ORIENTATIONS[(class_id + 3 * m) % len(_ORIENTATIONS)] for m in range(r)], dtype=np.int64
    )
    period = np.array([5 + (7 * (class_id * r + m)) % 11 for m in range(r)], dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence([spec.class_pattern_seed, class_id]))
    base = rng.integers(20, 90, size=(r, spec.channels))
    amp = rng.integers(90, 150, size=(r, spec.channels))
    n = spec.samples_per_class
    mode = rng.integers(0, r, size=n)
    contrast = rng.integers(_CONTRAST_LO, _CONTRAST_HI + 1, size=n)
    phase = rng.integers(0, 1 << 16, size=n)
    h, w = spec.height, spec.width
    win_h = rng.integers(max(1, h * 5 // 10), max(2, h * 9 // 10) + 1, size=n)
    win_w = rng.integers(max(1, w * 5 // 10), max(2, w * 9 // 10) + 1, size=n)
    win_y0 = rng.integers(0, h - win_h + 1)
    win_x0 = rng.integers(0, w - win_w + 1)
    return _ClassParams(orient, period, base, amp, mode, contrast, phase, win_y0, win_x0, win_h, win_w)


def _render(spec: SynthSpec, params: _ClassParams, sample_index: int) -> np.ndarray:
    """Integer-only render of one sample's noise-free pattern, (H, W, C) int64."""
    i = sample_index
    m = int(params.mode[i])
    fx, fy = (int(v) for v in params.orient[m])
    period = int(params.period[m])
    ys = np.arange(spec.height, dtype=np.int64)[:, None]
    xs = np.arange(spec.width, dtype=np.int64)[None, :]
    saw = (fx * xs + fy * ys + int(params.phase[i])) % period
    levels = (saw[:, :, None] * params.amp[m][None, None, :]) // max(period - 1, 1)
    levels = (levels * int(params.contrast[i])) // 100
    pattern = params.base[m][None, None, :] + levels
    out = np.full((spec.height, spec.width, spec.channels), _BACKGROUND, dtype=np.int64)
    y0, x0 = int(params.win_y0[i]), int(params.win_x0[i])
    hh, ww = int(params.win_h[i]), int(params.win_w[i])
    out[y0 : y0 + hh, x0 : x0 + ww] = pattern[y0 : y0 + hh, x0 : x0 + ww]
    return out


def class_pattern(spec: SynthSpec, class_id: int, sample_index: int) -> np.ndarray:
    """Noise-free pattern for one sample of one class, (H, W, C) uint8.

    `sample_index` is the within-class position; it selects the sample's
    grating mode, phase, contrast, and placement window, so samples of a
    class are not pixel-identical.
    """
    if not 0 <= class_id < spec.num_classes:
        raise ValueError(f"class_id {class_id} out of range")
    if not 0 <= sample_index < spec.samples_per_class:
        raise ValueError(f"sample_index {sample_index} out of range")
    params = _class_params(spec, class_id)
    return np.clip(_render(spec, params, sample_index), 0, 255).astype(np.uint8)


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Build `num_classes * samples_per_class` images, labels grouped by class."""
    n = spec.num_classes * spec.samples_per_class
    h, w, c = spec.height, spec.width, spec.channels
    pixels = np.empty((n, h, w, c), dtype=np.int64)
    labels = np.repeat(np.arange(spec.num_classes, dtype=np.int64), spec.samples_per_class)

    for k in range(spec.num_classes):
        params = _class_params(spec, k)
        start = k * spec.samples_per_class
        for i in range(spec.samples_per_class):
            pixels[start + i] = _render(spec, params, i)

    if spec.noise_amplitude > 0:
        noise_rng = np.random.default_rng(
            np.random.SeedSequence([spec.class_pattern_seed, spec.num_classes, 0x6E6F6973])
        )
        a = spec.noise_amplitude
        pixels += noise_rng.integers(-a, a + 1, size=pixels.shape, dtype=np.int64)

    pixels = np.clip(pixels, 0, 255).astype(np.uint8)
    return Dataset(pixels, labels, spec.num_classes, spec.num_classes)


def save_binary(dataset: Dataset, path) -> None:
    n = len(dataset)
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        n,
        dataset.height,
        dataset.width,
        dataset.channels,
        dataset.num_classes_base,
        dataset.num_classes_extended,
    )
    hwc = dataset.height * dataset.width * dataset.channels
    records = np.zeros(n, dtype=[("label", "<u2"), ("pix", np.uint8, (hwc,))])
    records["label"] = dataset.labels
    records["pix"] = dataset.pixels.reshape(n, hwc)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def load_binary(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(
            f"file too short for header ({len(data)} < {_HEADER.size} bytes)", len(data)
        )
    magic, version, count, h, w, c, base, ext = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}", 4)
    if min(h, w, c) <= 0:
        raise FormatError(f"non-positive image dimensions {(h, w, c)}", 10)
    if base < 1 or ext not in (base, base + 2):
        raise FormatError(f"inconsistent class counts base={base} extended={ext}", 16)
    hwc = h * w * c
    expected = _HEADER.size + count * (2 + hwc)
    if len(data) < expected:
        raise TruncatedPayloadError(
            f"declared {count} records need {expected} bytes, file has {len(data)}", len(data)
        )
    if len(data) > expected:
        raise TrailingDataError(f"{len(data) - expected} unexpected trailing bytes", expected)
    records = np.frombuffer(
        data, dtype=[("label", "<u2"), ("pix", np.uint8, (hwc,))], count=count, offset=_HEADER.size
    )
    labels = records["label"].astype(np.int64)
    if count and labels.max() >= ext:
        bad = int(np.argmax(labels >= ext))
        raise FormatError(
            f"record {bad} label {labels[bad]} out of range for {ext} classes",
            _HEADER.size + bad * (2 + hwc),
        )
    pixels = records["pix"].reshape(count, h, w, c).copy()
    return Dataset(pixels, labels, base, ext)


def extend_label_space(dataset: Dataset) -> Dataset:
    """Append the new-target and benign-target classes (K and K+1).

    No image labels change. Extending an already-extended dataset is an
    error so the two extra classes cannot be appended twice.
    """
    if dataset.is_extended:
        raise LabelSpaceError("label space already extended")
    return replace(dataset, num_classes_extended=dataset.num_classes_base + 2)


def subset(dataset: Dataset, indices) -> Dataset:
    """New dataset containing `dataset`'s samples at `indices`, in that order."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= len(dataset)):
        raise ValueError("subset indices out of range")
    return dataset.with_arrays(dataset.pixels[idx].copy(), dataset.labels[idx].copy())


def split_train_test(dataset: Dataset, test_per_class: int) -> tuple[Dataset, Dataset]:
    """Per-class split: the last `test_per_class` samples of each class form the test set.

    Deterministic; order within each split follows the original index order.
    """
    if test_per_class < 0:
        raise ValueError("test_per_class must be >= 0")
    labels = dataset.labels
    train_idx, test_idx = [], []
    for k in range(dataset.num_classes_extended):
        members = np.flatnonzero(labels == k)
        if 0 < len(members) <= test_per_class:
            raise ValueError(
                f"class {k} has only {len(members)} samples, cannot hold out {test_per_class}"
            )
        train_idx.append(members[: len(members) - test_per_class])
        test_idx.append(members[len(members) - test_per_class :])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return subset(dataset, train_idx), subset(dataset, test_idx)
