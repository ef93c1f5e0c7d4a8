"""Synthetic corpus, image-folder loading and stratified folds."""
from __future__ import annotations

import numpy as np
import pytest

from chaostex.data import (
    LabeledDataset,
    SynthSpec,
    gen_synthetic_textures,
    kfold_split,
    load_image_folder,
    save_image_folder,
)
from chaostex.imaging import write_image


def one_nn_accuracy(ds: LabeledDataset) -> float:
    """Leave-one-out 1-nearest-neighbor accuracy on raw pixels."""
    x = np.stack([im.ravel() for im in ds.images])
    d = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    return float((ds.labels[d.argmin(axis=1)] == ds.labels).mean())


class TestSynthetic:
    def test_deterministic(self):
        a = gen_synthetic_textures(SynthSpec(n_per_class=4))
        b = gen_synthetic_textures(SynthSpec(n_per_class=4))
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.images, b.images))
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_seed_changes_samples(self):
        a = gen_synthetic_textures(SynthSpec(n_per_class=2))
        b = gen_synthetic_textures(SynthSpec(n_per_class=2, seed=8))
        assert a.images[0].tobytes() != b.images[0].tobytes()

    def test_counts(self):
        ds = gen_synthetic_textures(SynthSpec(n_classes=5, n_per_class=3))
        assert len(ds) == 15
        np.testing.assert_array_equal(np.bincount(ds.labels), [3] * 5)

    def test_intensity_range_and_shape(self):
        ds = gen_synthetic_textures(SynthSpec(n_classes=7, n_per_class=5, size=20))
        for im in ds.images:
            assert im.shape == (20, 20, 1) and im.dtype == np.float64
            assert im.min() >= 0.0 and im.max() <= 1.0
        assert ds.class_names == ["grating0", "checker0", "noise0", "grating1", "checker1", "noise1", "grating2"]

    def test_one_nn_well_above_chance(self, default_corpus):
        acc = one_nn_accuracy(default_corpus)
        print(f"raw-pixel 1-NN accuracy: {acc:.3f}")
        assert acc > 0.40

    @pytest.mark.parametrize("kw", [dict(n_classes=1), dict(size=15), dict(n_per_class=0)])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError):
            SynthSpec(**kw)


class TestDataset:
    def test_label_validation(self):
        img = np.zeros((4, 4, 1))
        with pytest.raises(ValueError):
            LabeledDataset([img, img], np.array([0, 2]), ["a", "b"])
        with pytest.raises(ValueError):
            LabeledDataset([img], np.array([0, 1]), ["a", "b"])

    def test_subset(self, small_corpus):
        sub = small_corpus.subset([0, 9])
        assert len(sub) == 2 and sub.labels.tolist() == [0, 1]
        assert sub.images[1] is small_corpus.images[9]


class TestImageFolder:
    def test_two_classes(self, tmp_path):
        for name, value in (("b", 0.2), ("a", 0.8)):
            (tmp_path / name).mkdir()
            write_image(tmp_path / name / "x.png", np.full((5, 5, 1), value))
        ds = load_image_folder(tmp_path)
        assert len(ds) == 2 and ds.labels.tolist() == [0, 1]
        assert ds.class_names == ["a", "b"]
        assert abs(ds.images[0].mean() - 0.8) <= 1 / 255

    def test_empty_class(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        write_image(tmp_path / "a" / "x.png", np.zeros((4, 4, 1)))
        with pytest.raises(ValueError, match="b"):
            load_image_folder(tmp_path)

    def test_unreadable_file_is_named(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "a" / "broken.png").write_bytes(b"not an image")
        with pytest.raises(OSError, match="broken.png"):
            load_image_folder(tmp_path)

    def test_missing_root(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image_folder(tmp_path / "absent")

    def test_png_round_trip(self, tmp_path):
        ds = gen_synthetic_textures(SynthSpec(n_per_class=4, size=24))
        manifest = save_image_folder(ds, tmp_path / "data")
        back = load_image_folder(tmp_path / "data")
        np.testing.assert_array_equal(back.labels, ds.labels)
        err = max(np.abs(a - b).max() for a, b in zip(ds.images, back.images))
        assert err <= 1 / 255
        lines = manifest.read_text().splitlines()
        assert lines[0] == "path,label" and len(lines) == len(ds) + 1
        assert lines[1] == "00_grating0/00000.png,0"
        assert back.class_names[:2] == ["00_grating0", "01_checker0"]


class TestKFold:
    def test_partition(self, rng):
        labels = rng.integers(0, 4, size=100)
        labels[:16] = np.repeat(np.arange(4), 4)
        splits = kfold_split(labels, 4, seed=1)
        vals = [v for _, v in splits]
        assert sorted(np.concatenate(vals).tolist()) == list(range(100))
        for i in range(4):
            for j in range(i + 1, 4):
                assert not set(vals[i]) & set(vals[j])
        for tr, va in splits:
            assert sorted(np.concatenate([tr, va]).tolist()) == list(range(100))

    def test_leave_one_per_class_out(self):
        labels = np.repeat(np.arange(3), 5)
        for _, va in kfold_split(labels, 5, seed=0):
            np.testing.assert_array_equal(np.sort(labels[va]), [0, 1, 2])

    def test_stratification_within_one(self, rng):
        for _ in range(30):
            n_classes = int(rng.integers(2, 6))
            k = int(rng.integers(2, 8))
            counts = rng.integers(k, 4 * k + 3, size=n_classes)
            labels = rng.permutation(np.repeat(np.arange(n_classes), counts))
            for _, va in kfold_split(labels, k, seed=int(rng.integers(1000))):
                got = np.bincount(labels[va], minlength=n_classes)
                assert (np.abs(got - counts / k) < 1.0 + 1e-12).all()

    def test_deterministic(self, small_corpus):
        a = kfold_split(small_corpus, 4, 5)
        b = kfold_split(small_corpus.labels, 4, 5)
        for (ta, va), (tb, vb) in zip(a, b):
            np.testing.assert_array_equal(va, vb)
            np.testing.assert_array_equal(ta, tb)

    def test_class_too_small(self):
        with pytest.raises(ValueError, match="fewer than k"):
            kfold_split(np.array([0, 0, 0, 1, 1]), 3)
        with pytest.raises(ValueError):
            kfold_split(np.array([0, 0, 1, 1]), 1)
