import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbpf.attacks import (
    PoisonManifest,
    TriggerSpec,
    apply_trigger,
    apply_trigger_batch,
    blend_pattern,
    blend_values,
    check_benign_disjoint,
    default_benign_trigger,
    poison_dataset,
)
from cbpf.dataset import LabeledImage, SynthSpec, generate_synthetic
from cbpf.errors import CapacityError, ConfigError, ShapeError


def zero_image(h=32, w=32, c=3, label=4):
    return LabeledImage(np.zeros((h, w, c), dtype=np.uint8), label)


def synth(num_classes=10, per_class=100, seed=5):
    return generate_synthetic(
        SynthSpec(num_classes=num_classes, samples_per_class=per_class,
                  height=16, width=16, channels=3, class_pattern_seed=seed,
                  noise_amplitude=30)
    )


class TestPatch:
    def test_badnet_bottom_right_white(self):
        out = apply_trigger(zero_image(), TriggerSpec(kind="badnet_patch"))
        assert (out.pixels[29:, 29:, :] == 255).all()
        patched = np.zeros((32, 32, 3), bool)
        patched[29:, 29:, :] = True
        assert (out.pixels[~patched] == 0).all()
        assert out.label == 4

    def test_corners(self):
        for corner, (rows, cols) in {
            "top_left": (slice(0, 3), slice(0, 3)),
            "top_right": (slice(0, 3), slice(29, 32)),
            "bottom_left": (slice(29, 32), slice(0, 3)),
            "bottom_right": (slice(29, 32), slice(29, 32)),
        }.items():
            spec = TriggerSpec(kind="badnet_patch", corner=corner, patch_value=200)
            out = apply_trigger(zero_image(), spec)
            assert (out.pixels[rows, cols] == 200).all(), corner

    def test_benign_checker(self):
        out = apply_trigger(zero_image(), default_benign_trigger())
        patch = out.pixels[29:, :3, 0]
        expected = np.array([[255, 0, 255], [0, 255, 0], [255, 0, 255]])
        assert np.array_equal(patch, expected)

    def test_patch_out_of_bounds(self):
        with pytest.raises(ShapeError):
            apply_trigger(zero_image(h=2, w=2), TriggerSpec(kind="badnet_patch", patch_size=3))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            TriggerSpec(kind="sticker")


class TestBlend:
    def test_blend_value_arithmetic(self):
        out = blend_values(np.array([100.0]), np.array([200.0]), 0.1)
        assert out[0] == 110

    def test_blend_matches_formula(self):
        img = zero_image(8, 8, 3)
        pixels = np.full((8, 8, 3), 100, dtype=np.uint8)
        spec = TriggerSpec(kind="blend", alpha=0.25)
        out = apply_trigger(LabeledImage(pixels, 0), spec)
        pattern = blend_pattern(spec.pattern_id, (8, 8, 3))
        expected = np.clip(np.rint(0.25 * pattern + 0.75 * 100.0), 0, 255).astype(np.uint8)
        assert np.array_equal(out.pixels, expected)

    def test_alpha_bounds(self):
        for alpha in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                TriggerSpec(kind="blend", alpha=alpha)

    def test_pattern_deterministic(self):
        a = blend_pattern("noise0", (8, 8, 3))
        b = blend_pattern("noise0", (8, 8, 3))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, blend_pattern("noise1", (8, 8, 3)))


class TestSig:
    def test_zero_amplitude_is_identity(self):
        ds = synth(num_classes=2, per_class=3)
        out = apply_trigger_batch(ds.pixels, TriggerSpec(kind="sig", amplitude=0.0))
        assert np.array_equal(out, ds.pixels)

    def test_matches_sinusoid_formula(self):
        pixels = np.full((4, 16, 3), 120, dtype=np.uint8)
        spec = TriggerSpec(kind="sig", amplitude=25.0, freq=2.0)
        out = apply_trigger(LabeledImage(pixels, 0), spec)
        cols = np.arange(16)
        wave = 25.0 * np.sin(2 * np.pi * 2.0 * cols / 16)
        expected = np.clip(np.rint(120.0 + wave), 0, 255).astype(np.uint8)
        for r in range(4):
            for ch in range(3):
                assert np.array_equal(out.pixels[r, :, ch], expected)

    def test_amplitude_range(self):
        with pytest.raises(ValueError):
            TriggerSpec(kind="sig", amplitude=300.0)


class TestWarp:
    def test_zero_strength_is_identity(self):
        ds = synth(num_classes=2, per_class=3)
        out = apply_trigger_batch(ds.pixels, TriggerSpec(kind="warp", strength=0.0))
        assert np.array_equal(out, ds.pixels)

    def test_deterministic_given_spec(self):
        ds = synth(num_classes=2, per_class=3)
        spec = TriggerSpec(kind="warp", strength=2.0, field_seed=9)
        a = apply_trigger_batch(ds.pixels, spec)
        b = apply_trigger_batch(ds.pixels, spec)
        assert np.array_equal(a, b)

    def test_nonzero_strength_moves_pixels(self):
        ds = synth(num_classes=2, per_class=3)
        out = apply_trigger_batch(ds.pixels, TriggerSpec(kind="warp", strength=3.0))
        assert not np.array_equal(out, ds.pixels)


class TestPoisonDataset:
    def test_dirty_label_counts_and_labels(self):
        ds = synth()
        poisoned, manifest = poison_dataset(ds, TriggerSpec(kind="badnet_patch"),
                                            target_label=0, rate=0.10, seed=3)
        assert len(manifest.poisoned_indices) == 100
        idx = np.array(manifest.poisoned_indices)
        assert (poisoned.labels[idx] == 0).all()
        assert len(set(manifest.poisoned_indices)) == 100
        assert list(manifest.poisoned_indices) == sorted(manifest.poisoned_indices)

    def test_untouched_samples_byte_identical(self):
        ds = synth()
        poisoned, manifest = poison_dataset(ds, TriggerSpec(kind="blend"),
                                            target_label=2, rate=0.05, seed=3)
        touched = np.zeros(len(ds), bool)
        touched[list(manifest.poisoned_indices)] = True
        assert np.array_equal(poisoned.pixels[~touched], ds.pixels[~touched])
        assert np.array_equal(poisoned.labels[~touched], ds.labels[~touched])

    def test_clean_label_draws_from_target_class(self):
        ds = synth()  # 10 classes x 100
        poisoned, manifest = poison_dataset(ds, TriggerSpec(kind="sig"),
                                            target_label=0, rate=0.07,
                                            clean_label=True, seed=3)
        assert len(manifest.poisoned_indices) == 70
        idx = np.array(manifest.poisoned_indices)
        assert (ds.labels[idx] == 0).all()
        assert np.array_equal(poisoned.labels, ds.labels)

    def test_clean_label_capacity(self):
        ds = synth()
        with pytest.raises(CapacityError):
            poison_dataset(ds, TriggerSpec(kind="sig"), target_label=0, rate=0.2,
                           clean_label=True, seed=3)

    def test_rate_zero_is_noop(self):
        ds = synth(num_classes=2, per_class=5)
        poisoned, manifest = poison_dataset(ds, TriggerSpec(kind="badnet_patch"),
                                            target_label=0, rate=0.0, seed=3)
        assert manifest.poisoned_indices == ()
        assert np.array_equal(poisoned.pixels, ds.pixels)

    def test_rate_range(self):
        ds = synth(num_classes=2, per_class=5)
        for rate in (1.0, 1.5, -0.01):
            with pytest.raises(ValueError):
                poison_dataset(ds, TriggerSpec(kind="badnet_patch"), 0, rate)

    def test_deterministic_given_seed(self):
        ds = synth()
        a = poison_dataset(ds, TriggerSpec(kind="badnet_patch"), 0, 0.1, seed=9)
        b = poison_dataset(ds, TriggerSpec(kind="badnet_patch"), 0, 0.1, seed=9)
        assert a[1] == b[1]
        assert np.array_equal(a[0].pixels, b[0].pixels)

    @pytest.mark.parametrize("spec", [
        TriggerSpec(kind="badnet_patch"),
        TriggerSpec(kind="blend", alpha=0.2),
        TriggerSpec(kind="sig", amplitude=30.0),
        TriggerSpec(kind="warp", strength=2.0),
        default_benign_trigger(),
    ])
    def test_manifest_reproduces_poisoned_bytes(self, spec):
        ds = synth(num_classes=4, per_class=20)
        poisoned, manifest = poison_dataset(ds, spec, target_label=1, rate=0.1, seed=5)
        idx = np.array(manifest.poisoned_indices)
        again = apply_trigger_batch(ds.pixels[idx], manifest.attack)
        assert np.array_equal(again, poisoned.pixels[idx])


class TestManifestJson:
    def test_round_trip(self, tmp_path):
        ds = synth(num_classes=4, per_class=20)
        _, manifest = poison_dataset(ds, TriggerSpec(kind="blend", alpha=0.15),
                                     target_label=1, rate=0.1, seed=5)
        path = tmp_path / "manifest.json"
        manifest.save(path)
        assert PoisonManifest.load(path) == manifest

    def test_fixed_field_names(self, tmp_path):
        ds = synth(num_classes=4, per_class=20)
        _, manifest = poison_dataset(ds, TriggerSpec(kind="badnet_patch"),
                                     target_label=1, rate=0.1, seed=5)
        doc = manifest.to_json()
        assert set(doc) == {"attack", "target_label", "poisoning_rate",
                            "clean_label", "seed", "poisoned_indices"}
        assert doc["attack"]["kind"] == "badnet_patch"


class TestBenignDisjoint:
    def test_overlap_rejected(self):
        attack = TriggerSpec(kind="badnet_patch", corner="bottom_left")
        with pytest.raises(ConfigError):
            check_benign_disjoint(attack, default_benign_trigger(), 32, 32)

    def test_disjoint_corners_ok(self):
        check_benign_disjoint(TriggerSpec(kind="badnet_patch"), default_benign_trigger(), 32, 32)

    def test_non_patch_attacks_ignored(self):
        check_benign_disjoint(TriggerSpec(kind="sig"), default_benign_trigger(), 32, 32)


@settings(max_examples=40, deadline=None)
@given(
    kind=st.sampled_from(["badnet_patch", "blend", "sig", "warp", "benign_patch"]),
    h=st.integers(4, 12),
    w=st.integers(4, 12),
    c=st.integers(1, 3),
    seed=st.integers(0, 10**6),
)
def test_triggers_preserve_shape_and_bounds(kind, h, w, c, seed):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(3, h, w, c), dtype=np.uint8)
    spec = TriggerSpec(kind=kind, patch_size=2, amplitude=float(rng.integers(0, 200)),
                       strength=float(rng.integers(0, 4)))
    out = apply_trigger_batch(pixels, spec)
    assert out.shape == pixels.shape
    assert out.dtype == np.uint8
