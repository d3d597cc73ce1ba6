"""Named synthetic benchmarks used by the CLI, scripts, and tests."""

from __future__ import annotations

from .dataset import Dataset, SynthSpec, generate_synthetic, split_train_test

# Desk-scale stand-in for a 10-class 32x32 RGB benchmark.
DESK10_TRAIN_PER_CLASS = 500
DESK10_TEST_PER_CLASS = 100
DESK10_NOISE = 64


def desk10(seed: int = 0, noise_amplitude: int = DESK10_NOISE) -> tuple[Dataset, Dataset]:
    """10 classes, 500 train + 100 test per class, 32x32x3."""
    return make_preset(
        num_classes=10,
        train_per_class=DESK10_TRAIN_PER_CLASS,
        test_per_class=DESK10_TEST_PER_CLASS,
        height=32,
        width=32,
        channels=3,
        seed=seed,
        noise_amplitude=noise_amplitude,
    )


def make_preset(
    num_classes: int,
    train_per_class: int,
    test_per_class: int,
    height: int = 32,
    width: int = 32,
    channels: int = 3,
    seed: int = 0,
    noise_amplitude: int = DESK10_NOISE,
) -> tuple[Dataset, Dataset]:
    """Generate one synthetic pool and split the tail of each class off as test data."""
    spec = SynthSpec(
        num_classes=num_classes,
        samples_per_class=train_per_class + test_per_class,
        height=height,
        width=width,
        channels=channels,
        class_pattern_seed=seed,
        noise_amplitude=noise_amplitude,
    )
    return split_train_test(generate_synthetic(spec), test_per_class)
