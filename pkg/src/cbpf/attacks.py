"""Trigger injection and training-set poisoning.

Trigger kinds:
  badnet_patch  solid square overwritten at a corner
  blend         per-pixel blend with a seeded noise pattern
  sig           column-wise sinusoid added to every row
  warp          smooth displacement field with bilinear resampling
  benign_patch  the defender's own patch (checkerboard by default)

All trigger math rounds to uint8 with a fixed rule, so re-applying a spec to
the same image always reproduces the same bytes.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .dataset import Dataset, LabeledImage
from .errors import CapacityError, ConfigError, ShapeError

TRIGGER_KINDS = ("badnet_patch", "blend", "sig", "warp", "benign_patch")
CORNERS = ("top_left", "top_right", "bottom_left", "bottom_right")
PATCH_PATTERNS = ("solid", "checker", "inverse_checker")

# Parameters that are meaningful (and serialized) per trigger kind.
_PARAMS_BY_KIND = {
    "badnet_patch": ("patch_size", "corner", "patch_value"),
    "benign_patch": ("patch_size", "corner", "pattern_id", "patch_value"),
    "blend": ("pattern_id", "alpha"),
    "sig": ("amplitude", "freq"),
    "warp": ("grid_size", "strength", "field_seed"),
}


@dataclass(frozen=True)
class TriggerSpec:
    kind: str
    patch_size: int = 3
    corner: str = "bottom_right"
    patch_value: int = 255
    pattern_id: str = "noise0"
    alpha: float = 0.1
    amplitude: float = 30.0
    freq: float = 6.0
    grid_size: int = 4
    strength: float = 1.0
    field_seed: int = 0

    def __post_init__(self):
        if self.kind not in TRIGGER_KINDS:
            raise ConfigError(f"unknown trigger kind {self.kind!r}, expected one of {TRIGGER_KINDS}")
        if self.kind in ("badnet_patch", "benign_patch"):
            if self.patch_size < 1:
                raise ShapeError("patch_size must be >= 1")
            if self.corner not in CORNERS:
                raise ConfigError(f"corner must be one of {CORNERS}, got {self.corner!r}")
            if not 0 <= self.patch_value <= 255:
                raise ValueError("patch_value must be in [0, 255]")
        if self.kind == "benign_patch":
            if self.pattern_id == "noise0":  # generic default is a blend id; patches use checker
                object.__setattr__(self, "pattern_id", "checker")
            elif self.pattern_id not in PATCH_PATTERNS:
                raise ConfigError(
                    f"benign_patch pattern_id must be one of {PATCH_PATTERNS}, got {self.pattern_id!r}"
                )
        if self.kind == "blend" and not 0.0 < self.alpha < 1.0:
            raise ValueError(f"blend alpha must be strictly in (0, 1), got {self.alpha}")
        if self.kind == "sig":
            if not 0.0 <= self.amplitude <= 255.0:
                raise ValueError(f"sig amplitude must be in [0, 255], got {self.amplitude}")
            if self.freq <= 0:
                raise ValueError("sig freq must be > 0")
        if self.kind == "warp":
            if self.grid_size < 2:
                raise ConfigError("warp grid_size must be >= 2")
            if self.strength < 0:
                raise ValueError("warp strength must be >= 0")

    def params(self) -> dict:
        return {name: getattr(self, name) for name in _PARAMS_BY_KIND[self.kind]}

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.params()}

    @classmethod
    def from_json(cls, doc: dict) -> "TriggerSpec":
        doc = dict(doc)
        kind = doc.pop("kind", None)
        if kind not in TRIGGER_KINDS:
            raise ConfigError(f"attack.kind missing or unknown: {kind!r}")
        known = {f.name for f in fields(cls)} - {"kind"}
        bad = set(doc) - known
        if bad:
            raise ConfigError(f"unknown trigger parameters {sorted(bad)} for kind {kind!r}")
        return cls(kind=kind, **doc)


def default_benign_trigger() -> TriggerSpec:
    """3x3 checkerboard at the bottom-left corner, away from the usual attack corner."""
    return TriggerSpec(kind="benign_patch", patch_size=3, corner="bottom_left", pattern_id="checker")


def _patch_slices(height: int, width: int, spec: TriggerSpec):
    s = spec.patch_size
    if s > height or s > width:
        raise ShapeError(f"{s}x{s} patch does not fit a {height}x{width} image")
    rows = slice(0, s) if spec.corner.startswith("top") else slice(height - s, height)
    cols = slice(0, s) if spec.corner.endswith("left") else slice(width - s, width)
    return rows, cols


def patch_pixels(spec: TriggerSpec) -> np.ndarray:
    """The (s, s) patch content for a patch-kind spec."""
    s = spec.patch_size
    if spec.kind == "badnet_patch" or spec.pattern_id == "solid":
        return np.full((s, s), spec.patch_value, dtype=np.uint8)
    rr, cc = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    checker = ((rr + cc) % 2 == 0).astype(np.uint8) * 255
    if spec.pattern_id == "checker":
        return checker
    if spec.pattern_id == "inverse_checker":
        return 255 - checker
    raise ConfigError(f"unknown patch pattern_id {spec.pattern_id!r}")


def blend_pattern(pattern_id: str, shape: tuple[int, int, int]) -> np.ndarray:
    """Deterministic pseudo-random blend pattern for a given id and image shape."""
    seed = zlib.crc32(pattern_id.encode())
    rng = np.random.default_rng(np.random.SeedSequence([seed, *shape]))
    return rng.integers(0, 256, size=shape, dtype=np.int64).astype(np.uint8)


def blend_values(pixels: np.ndarray, pattern: np.ndarray, alpha: float) -> np.ndarray:
    """round(alpha*pattern + (1-alpha)*pixel), clamped to uint8."""
    mixed = np.rint(alpha * pattern.astype(np.float64) + (1.0 - alpha) * pixels.astype(np.float64))
    return np.clip(mixed, 0, 255).astype(np.uint8)


def _warp_field(height: int, width: int, spec: TriggerSpec) -> tuple[np.ndarray, np.ndarray]:
    """Smooth (dy, dx) displacement in pixels, fixed by (field_seed, grid_size)."""
    g = spec.grid_size
    rng = np.random.default_rng(np.random.SeedSequence([spec.field_seed, g, 0x77617270]))
    ctrl = rng.uniform(-1.0, 1.0, size=(2, g, g))
    ys = np.linspace(0.0, g - 1.0, height)
    xs = np.linspace(0.0, g - 1.0, width)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, g - 2)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, g - 2)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    out = []
    for comp in ctrl:
        c00 = comp[y0[:, None], x0[None, :]]
        c01 = comp[y0[:, None], x0[None, :] + 1]
        c10 = comp[y0[:, None] + 1, x0[None, :]]
        c11 = comp[y0[:, None] + 1, x0[None, :] + 1]
        out.append(
            c00 * (1 - ty) * (1 - tx) + c01 * (1 - ty) * tx + c10 * ty * (1 - tx) + c11 * ty * tx
        )
    return out[0] * spec.strength, out[1] * spec.strength


def _apply_warp(batch: np.ndarray, spec: TriggerSpec) -> np.ndarray:
    n, h, w, _ = batch.shape
    dy, dx = _warp_field(h, w, spec)
    src_y = np.clip(np.arange(h)[:, None] + dy, 0.0, h - 1.0)
    src_x = np.clip(np.arange(w)[None, :] + dx, 0.0, w - 1.0)
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (src_y - y0)[None, :, :, None]
    wx = (src_x - x0)[None, :, :, None]
    img = batch.astype(np.float64)
    out = (
        img[:, y0, x0] * (1 - wy) * (1 - wx)
        + img[:, y0, x1] * (1 - wy) * wx
        + img[:, y1, x0] * wy * (1 - wx)
        + img[:, y1, x1] * wy * wx
    )
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def apply_trigger_batch(pixels: np.ndarray, spec: TriggerSpec) -> np.ndarray:
    """Apply `spec` to a (n, H, W, C) uint8 batch; returns a new array."""
    if pixels.ndim != 4:
        raise ShapeError(f"expected (n, H, W, C) batch, got ndim={pixels.ndim}")
    n, h, w, c = pixels.shape
    if spec.kind in ("badnet_patch", "benign_patch"):
        rows, cols = _patch_slices(h, w, spec)
        out = pixels.copy()
        out[:, rows, cols, :] = patch_pixels(spec)[None, :, :, None]
        return out
    if spec.kind == "blend":
        return blend_values(pixels, blend_pattern(spec.pattern_id, (h, w, c))[None], spec.alpha)
    if spec.kind == "sig":
        cols = np.arange(w, dtype=np.float64)
        wave = spec.amplitude * np.sin(2.0 * np.pi * spec.freq * cols / w)
        out = np.rint(pixels.astype(np.float64) + wave[None, None, :, None])
        return np.clip(out, 0, 255).astype(np.uint8)
    if spec.kind == "warp":
        return _apply_warp(pixels, spec)
    raise ConfigError(f"unknown trigger kind {spec.kind!r}")


def apply_trigger(image: LabeledImage, spec: TriggerSpec) -> LabeledImage:
    """Triggered copy of one image; the label is never changed here."""
    if image.pixels.ndim != 3:
        raise ShapeError(f"expected (H, W, C) image, got ndim={image.pixels.ndim}")
    return LabeledImage(apply_trigger_batch(image.pixels[None], spec)[0], image.label)


@dataclass(frozen=True)
class PoisonManifest:
    """Ground truth of a poisoning run: which indices, which attack, which target."""

    attack: TriggerSpec
    target_label: int
    poisoning_rate: float
    clean_label: bool
    seed: int
    poisoned_indices: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "attack": self.attack.to_json(),
            "target_label": self.target_label,
            "poisoning_rate": self.poisoning_rate,
            "clean_label": self.clean_label,
            "seed": self.seed,
            "poisoned_indices": list(self.poisoned_indices),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PoisonManifest":
        return cls(
            attack=TriggerSpec.from_json(doc["attack"]),
            target_label=int(doc["target_label"]),
            poisoning_rate=float(doc["poisoning_rate"]),
            clean_label=bool(doc["clean_label"]),
            seed=int(doc["seed"]),
            poisoned_indices=tuple(int(i) for i in doc["poisoned_indices"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PoisonManifest":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def poison_dataset(
    dataset: Dataset,
    spec: TriggerSpec,
    target_label: int,
    rate: float,
    clean_label: bool = False,
    seed: int = 0,
) -> tuple[Dataset, PoisonManifest]:
    """Poison floor(rate*n) samples of `dataset` with `spec`.

    Dirty-label: indices are drawn uniformly from the whole set and relabeled
    to `target_label`. Clean-label: indices are drawn only from samples whose
    label already equals `target_label`, and labels are kept.
    """
    n = len(dataset)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"poisoning rate must be in [0, 1), got {rate}")
    if not 0 <= target_label < dataset.num_classes_base:
        raise ValueError(f"target_label {target_label} out of range")
    count = int(rate * n)
    rng = np.random.default_rng(seed)
    if clean_label:
        candidates = np.flatnonzero(dataset.labels == target_label)
        if count > len(candidates):
            raise CapacityError(
                f"clean-label poisoning needs {count} samples of class {target_label}, "
                f"only {len(candidates)} available"
            )
        chosen = rng.permutation(candidates)[:count]
    else:
        chosen = rng.permutation(n)[:count]
    chosen = np.sort(chosen)

    pixels = dataset.pixels.copy()
    labels = dataset.labels.copy()
    if count:
        pixels[chosen] = apply_trigger_batch(dataset.pixels[chosen], spec)
        if not clean_label:
            labels[chosen] = target_label
    manifest = PoisonManifest(
        attack=spec,
        target_label=target_label,
        poisoning_rate=rate,
        clean_label=clean_label,
        seed=seed,
        poisoned_indices=tuple(int(i) for i in chosen),
    )
    return dataset.with_arrays(pixels, labels), manifest


def patch_rectangle(spec: TriggerSpec, height: int, width: int):
    rows, cols = _patch_slices(height, width, spec)
    return rows.start, rows.stop, cols.start, cols.stop


def check_benign_disjoint(attack: TriggerSpec, benign: TriggerSpec, height: int, width: int) -> None:
    """Reject a benign patch that overlaps a patch-based attack trigger."""
    if attack.kind not in ("badnet_patch", "benign_patch"):
        return
    ar0, ar1, ac0, ac1 = patch_rectangle(attack, height, width)
    br0, br1, bc0, bc1 = patch_rectangle(benign, height, width)
    if max(ar0, br0) < min(ar1, br1) and max(ac0, bc0) < min(ac1, bc1):
        raise ConfigError(
            f"benign patch at {benign.corner} overlaps the attack patch at {attack.corner}"
        )
