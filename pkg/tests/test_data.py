import numpy as np
import pytest
from PIL import Image

from guided_inpaint.data import (
    DataError,
    dataset_checksum,
    from_uint8,
    load_image,
    load_mask,
    make_benchmark_mask,
    make_toy_dataset,
    save_image,
    save_mask,
    to_uint8,
    write_dataset_manifest,
)


class TestBenchmarkMasks:
    def test_expand_256(self):
        m = make_benchmark_mask("expand", 256, 256)
        assert m.shape == (1, 256, 256)
        assert m.sum() == 128 * 128                      # known = central quarter
        assert m[0, 64:192, 64:192].min() == 1.0
        assert m[0, :64].max() == 0.0

    def test_half_tiny(self):
        m = make_benchmark_mask("half", 4, 4)
        assert m.sum() == 8
        np.testing.assert_array_equal(m[0, :, :2], np.ones((4, 2)))
        np.testing.assert_array_equal(m[0, :, 2:], np.zeros((4, 2)))

    def test_square_256(self):
        m = make_benchmark_mask("square", 256, 256)
        unknown = (m == 0).sum()
        assert unknown == 128 * 128                      # 25% masked

    @pytest.mark.parametrize("kind,known_frac", [("expand", 0.25), ("half", 0.5), ("square", 0.75)])
    def test_known_fractions(self, kind, known_frac):
        for H, W in [(8, 8), (16, 32), (64, 64)]:
            m = make_benchmark_mask(kind, H, W)
            assert m.mean() == pytest.approx(known_frac)

    def test_rejects_odd_and_unknown(self):
        with pytest.raises(DataError):
            make_benchmark_mask("half", 7, 8)
        with pytest.raises(DataError):
            make_benchmark_mask("circle", 8, 8)


class TestToyDataset:
    def test_deterministic_checksum(self):
        a = make_toy_dataset(100, size=8, seed=5)
        b = make_toy_dataset(100, size=8, seed=5)
        assert dataset_checksum(*a) == dataset_checksum(*b)
        c = make_toy_dataset(100, size=8, seed=6)
        assert dataset_checksum(*a) != dataset_checksum(*c)

    def test_class_balance(self):
        _, labels = make_toy_dataset(100, size=8, seed=0)
        assert (labels == 0).sum() == 50
        assert (labels == 1).sum() == 50

    def test_pixel_range(self):
        imgs, _ = make_toy_dataset(50, size=16, seed=1)
        assert imgs.min() >= -1.0
        assert imgs.max() <= 1.0
        assert imgs.shape == (50, 1, 16, 16)

    def test_rejects_bad_args(self):
        with pytest.raises(DataError):
            make_toy_dataset(1, size=8)
        with pytest.raises(DataError):
            make_toy_dataset(10, size=4)

    def test_manifest(self, tmp_path):
        imgs, labels = make_toy_dataset(4, size=8, seed=0)
        path = tmp_path / "manifest.tsv"
        write_dataset_manifest(path, labels, seed=0, size=8)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 5
        assert lines[1].split("\t") == ["0", "0", "disc"]


class TestImageIO:
    def test_png_round_trip_random(self, tmp_path):
        rng = np.random.default_rng(2)
        v8 = rng.integers(0, 256, size=(1, 12, 10)).astype(np.uint8)
        img = from_uint8(v8)
        path = tmp_path / "img.png"
        save_image(img, path)
        back = load_image(path)
        np.testing.assert_array_equal(to_uint8(back), v8)
        np.testing.assert_allclose(back, img, atol=1e-12)

    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = from_uint8(rng.integers(0, 256, size=(1, 6, 7)).astype(np.uint8))
        path = tmp_path / "img.pgm"
        save_image(img, path)
        np.testing.assert_allclose(load_image(path), img, atol=1e-12)

    def test_rgb_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        img = from_uint8(rng.integers(0, 256, size=(3, 5, 5)).astype(np.uint8))
        path = tmp_path / "img.png"
        save_image(img, path)
        np.testing.assert_allclose(load_image(path), img, atol=1e-12)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "deep.png"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint16), mode="I;16").save(path)
        with pytest.raises(DataError, match="bit depth"):
            load_image(path)

    def test_mask_round_trip(self, tmp_path):
        m = make_benchmark_mask("square", 8, 8)
        path = tmp_path / "mask.png"
        save_mask(m, path)
        np.testing.assert_array_equal(load_mask(path), m)

    def test_all_255_mask(self, tmp_path):
        path = tmp_path / "ones.png"
        Image.fromarray(np.full((4, 4), 255, dtype=np.uint8), mode="L").save(path)
        np.testing.assert_array_equal(load_mask(path), np.ones((1, 4, 4)))
