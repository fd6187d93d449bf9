import numpy as np
import pytest

from sdvt.data import (AugConfig, ClassTaxonomy, Sample, augment, default_taxonomy,
                       identity_aug, load_image_dataset, sample_rng,
                       save_image_dataset, stratified_split, synth_lesions,
                       synth_sample)
from sdvt.errors import DataError, InvalidArgumentError


class TestTaxonomy:
    def test_default_is_valid(self):
        tax = default_taxonomy()
        assert len(tax.names) == 8
        assert tax.names[0] == "Melanoma"
        assert tax.malignant == {"Melanoma", "Basal cell carcinoma",
                                 "Squamous cell carcinoma"}

    def test_label_of(self):
        tax = default_taxonomy()
        assert tax.label_of("Melanoma") == 0
        assert tax.label_of("Squamous cell carcinoma") == 7
        with pytest.raises(DataError):
            tax.label_of("Sunburn")

    def test_invalid_taxonomy(self):
        with pytest.raises(InvalidArgumentError):
            ClassTaxonomy(names=("a", "b"), malignant=frozenset({"a"})).validate()


class TestLoadSave:
    def test_empty_csv(self, tmp_path):
        (tmp_path / "labels.csv").write_text("filename,label_name\n")
        assert load_image_dataset(tmp_path, tmp_path / "labels.csv", 32) == []

    def test_roundtrip_and_ordering(self, tmp_path):
        samples = synth_lesions(2, 32, seed=1)
        save_image_dataset(samples, tmp_path)
        loaded1 = load_image_dataset(tmp_path, tmp_path / "labels.csv", 32)
        loaded2 = load_image_dataset(tmp_path, tmp_path / "labels.csv", 32)
        assert len(loaded1) == len(samples)
        assert [s.source_id for s in loaded1] == sorted(s.source_id for s in loaded1)
        for a, b in zip(loaded1, loaded2):
            np.testing.assert_array_equal(a.image, b.image)
            assert a.label == b.label

    def test_label_name_maps_to_taxonomy_order(self, tmp_path):
        samples = [Sample(np.zeros((3, 8, 8), dtype=np.float32), 0, "img0")]
        save_image_dataset(samples, tmp_path)
        loaded = load_image_dataset(tmp_path, tmp_path / "labels.csv", 8)
        assert loaded[0].label == 0

    def test_unknown_label_names_row(self, tmp_path):
        samples = [Sample(np.zeros((3, 8, 8), dtype=np.float32), 0, "img0")]
        save_image_dataset(samples, tmp_path)
        (tmp_path / "labels.csv").write_text("filename,label_name\nimg0.png,Martian\n")
        with pytest.raises(DataError, match="Martian"):
            load_image_dataset(tmp_path, tmp_path / "labels.csv", 8)

    def test_missing_image_names_file(self, tmp_path):
        (tmp_path / "labels.csv").write_text("filename,label_name\nghost.png,Melanoma\n")
        with pytest.raises(DataError, match="ghost.png"):
            load_image_dataset(tmp_path, tmp_path / "labels.csv", 8)

    def test_bad_header(self, tmp_path):
        (tmp_path / "labels.csv").write_text("file,class\n")
        with pytest.raises(DataError, match="header"):
            load_image_dataset(tmp_path, tmp_path / "labels.csv", 8)

    def test_pixel_range(self, tmp_path):
        samples = synth_lesions(1, 16, seed=0)
        save_image_dataset(samples, tmp_path)
        loaded = load_image_dataset(tmp_path, tmp_path / "labels.csv", 16)
        for s in loaded:
            assert s.image.min() >= 0.0 and s.image.max() <= 1.0
            assert s.image.dtype == np.float32


class TestSplit:
    def test_ten_per_class(self):
        samples = synth_lesions(10, 16, seed=0)
        train, test = stratified_split(samples, 0.8, seed=0)
        assert len(train) == 64 and len(test) == 16
        for c in range(8):
            assert sum(1 for s in train if s.label == c) == 8
            assert sum(1 for s in test if s.label == c) == 2

    def test_floor_rule_on_skewed_counts(self):
        rng = np.random.default_rng(0)
        samples = []
        counts = {0: 100, 1: 10, 2: 3, 3: 7, 4: 2, 5: 5, 6: 33, 7: 64}
        for c, n in counts.items():
            for i in range(n):
                samples.append(Sample(np.zeros((3, 4, 4), dtype=np.float32), c, f"{c}_{i}"))
        train, test = stratified_split(samples, 0.8, seed=3)
        for c, n in counts.items():
            n_train = sum(1 for s in train if s.label == c)
            assert n_train == max(1, int(np.floor(n * 0.8)))
            assert abs(n_train - 0.8 * n) <= 1

    def test_partition_property_100_seeds(self):
        samples = synth_lesions(3, 8, seed=1)
        ids = sorted(s.source_id for s in samples)
        for seed in range(100):
            train, test = stratified_split(samples, 0.8, seed=seed)
            got = sorted(s.source_id for s in train) + sorted(s.source_id for s in test)
            assert sorted(got) == ids
            assert not set(s.source_id for s in train) & set(s.source_id for s in test)

    def test_class_too_small(self):
        samples = [Sample(np.zeros((3, 4, 4), dtype=np.float32), 0, "only")]
        with pytest.raises(DataError):
            stratified_split(samples, 0.8, seed=0)

    def test_deterministic(self):
        samples = synth_lesions(5, 8, seed=2)
        a = stratified_split(samples, 0.8, seed=9)
        b = stratified_split(samples, 0.8, seed=9)
        assert [s.source_id for s in a[0]] == [s.source_id for s in b[0]]


class _FixedRng:
    """Stub generator: probabilities always fire, uniforms return a fixed pick."""

    def __init__(self, uniform_value=None):
        self.uniform_value = uniform_value

    def random(self):
        return 0.0

    def uniform(self, lo, hi, size=None):
        val = self.uniform_value if self.uniform_value is not None else hi
        if size is None:
            return val
        return np.full(size, val)

    def integers(self, lo, hi):
        return lo


class TestAugment:
    def test_all_probabilities_zero_is_identity(self):
        img = np.random.default_rng(0).random((3, 32, 32)).astype(np.float32)
        out = augment(img, identity_aug(), np.random.default_rng(1))
        np.testing.assert_array_equal(out, img)

    def test_zero_deltas_prob_one_identity_on_constant(self):
        cfg = AugConfig(crop_fraction=1.0, max_shift=0.0, max_scale_delta=0.0,
                        max_rotate=0.0, rgb_shift_max=0.0, brightness_delta=0.0,
                        contrast_delta=0.0, p_crop=1, p_shift=1, p_scale=1,
                        p_rotate=1, p_rgb_shift=1, p_brightness=1, p_contrast=1)
        img = np.full((3, 32, 32), 0.4, dtype=np.float32)
        out = augment(img, cfg, np.random.default_rng(2))
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_brightness_shifts_mean_by_delta(self):
        cfg = AugConfig(brightness_delta=0.1, p_crop=0, p_shift=0, p_scale=0,
                        p_rotate=0, p_rgb_shift=0, p_brightness=1.0, p_contrast=0)
        img = np.full((3, 16, 16), 0.5, dtype=np.float32)
        out = augment(img, cfg, _FixedRng())  # draws the +0.1 endpoint
        np.testing.assert_allclose(out.mean(), 0.6, atol=1e-6)

    def test_rgb_shift_is_per_channel_additive(self):
        cfg = AugConfig(rgb_shift_max=0.05, p_crop=0, p_shift=0, p_scale=0,
                        p_rotate=0, p_rgb_shift=1.0, p_brightness=0, p_contrast=0)
        img = np.full((3, 8, 8), 0.5, dtype=np.float32)
        out = augment(img, cfg, _FixedRng())
        np.testing.assert_allclose(out, 0.55, atol=1e-6)

    def test_contrast_about_mean(self):
        cfg = AugConfig(contrast_delta=0.5, p_crop=0, p_shift=0, p_scale=0,
                        p_rotate=0, p_rgb_shift=0, p_brightness=0, p_contrast=1.0)
        img = np.zeros((1, 2, 2), dtype=np.float32)
        img[0, 0, 0] = 0.2
        img[0, 1, 1] = 0.6  # mean = 0.2
        out = augment(img, cfg, _FixedRng())
        np.testing.assert_allclose(out[0, 0, 0], 0.2, atol=1e-6)  # at the mean
        np.testing.assert_allclose(out[0, 1, 1], 0.2 + 0.4 * 1.5, atol=1e-6)

    def test_output_always_in_range_and_same_shape(self):
        cfg = AugConfig()
        rng_master = np.random.default_rng(4)
        img = rng_master.random((3, 32, 32)).astype(np.float32)
        for i in range(25):
            out = augment(img, cfg, sample_rng(0, 0, i))
            assert out.shape == img.shape
            assert out.dtype == np.float32
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_deterministic_given_stream(self):
        img = np.random.default_rng(5).random((3, 32, 32)).astype(np.float32)
        a = augment(img, AugConfig(), sample_rng(1, 2, 3))
        b = augment(img, AugConfig(), sample_rng(1, 2, 3))
        np.testing.assert_array_equal(a, b)

    def test_crop_fraction_floor(self):
        with pytest.raises(InvalidArgumentError):
            AugConfig(crop_fraction=0.5).validate()


class TestSynth:
    def test_balanced_counts(self):
        samples = synth_lesions(4, 16, seed=0)
        assert len(samples) == 32
        labels = [s.label for s in samples]
        assert all(labels.count(c) == 4 for c in range(8))

    def test_same_seed_bitwise(self):
        a = synth_lesions(2, 16, seed=9)
        b = synth_lesions(2, 16, seed=9)
        for s1, s2 in zip(a, b):
            np.testing.assert_array_equal(s1.image, s2.image)

    def test_imbalance_multipliers(self):
        samples = synth_lesions(8, 16, seed=0,
                                imbalance=[1, 1, 0.5, 0.25, 1, 1, 1, 2])
        labels = [s.label for s in samples]
        assert labels.count(2) == 4 and labels.count(3) == 2 and labels.count(7) == 16

    def test_masks_mark_central_blob(self):
        for c in range(8):
            img, mask = synth_sample(c, np.random.default_rng([3, c]), 32)
            assert img.shape == (3, 32, 32) and mask.shape == (32, 32)
            assert 10 < mask.sum() < 32 * 32 * 0.8
            ys, xs = np.nonzero(mask)
            assert 4 < ys.mean() < 28 and 4 < xs.mean() < 28

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            synth_lesions(0, 16)
        with pytest.raises(InvalidArgumentError):
            synth_lesions(2, 16, imbalance=[1.0])
