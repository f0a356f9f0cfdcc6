import numpy as np
import pytest

from lineinspect.errors import DimensionError, FormatError, ValidationError
from lineinspect.imagecore import (
    Image,
    load_image,
    resize_bilinear,
    resize_nearest_labels,
    save_image,
)


def random_image(h, w, c, seed=0):
    rng = np.random.default_rng(seed)
    return Image(rng.uniform(0.0, 1.0, size=(h, w, c)))


class TestImageValue:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            Image(np.full((2, 2, 3), 1.5))

    def test_rejects_bad_channel_count(self):
        with pytest.raises(ValidationError):
            Image(np.zeros((2, 2, 2)))

    def test_rejects_nan(self):
        bad = np.zeros((2, 2, 1))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            Image(bad)

    def test_pixels_are_frozen(self):
        img = random_image(3, 3, 3)
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 0.0

    def test_2d_array_becomes_single_channel(self):
        img = Image(np.zeros((4, 5)))
        assert (img.height, img.width, img.channels) == (4, 5, 1)


class TestResize:
    def test_same_size_is_exact_identity(self):
        img = random_image(7, 9, 3)
        out = resize_bilinear(img, 7, 9)
        assert np.array_equal(out.pixels, img.pixels)

    def test_constant_image_stays_constant(self):
        # any convex interpolation of a constant is the constant
        img = Image(np.full((4, 4, 1), 0.5))
        out = resize_bilinear(img, 2, 2)
        assert np.allclose(out.pixels, 0.5)

    def test_large_downscale_shape(self):
        img = Image(np.full((128, 128, 3), 0.25))
        out = resize_bilinear(img, 20, 20)
        assert out.pixels.shape == (20, 20, 3)

    def test_range_preserved(self):
        img = random_image(11, 5, 3, seed=3)
        out = resize_bilinear(img, 23, 17)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_zero_target_rejected(self):
        with pytest.raises(DimensionError):
            resize_bilinear(random_image(4, 4, 1), 0, 4)

    def test_upscale_matches_hand_interpolation(self):
        # 2x2 -> 4x4 with half-pixel centers: source coord of out pixel 0 is
        # (0.5)*0.5-0.5 = -0.25, clamped to 0
        img = Image(np.array([[0.0, 1.0], [0.0, 1.0]])[:, :, None])
        out = resize_bilinear(img, 4, 4)
        assert np.allclose(out.pixels[:, :, 0], [[0.0, 0.25, 0.75, 1.0]] * 4)

    def test_nearest_labels_identity_and_shape(self):
        labels = np.arange(12).reshape(3, 4)
        assert np.array_equal(resize_nearest_labels(labels, 3, 4), labels)
        up = resize_nearest_labels(labels, 6, 8)
        assert up.shape == (6, 8)
        assert set(np.unique(up)) <= set(range(12))


class TestFileIO:
    def test_roundtrip_color_within_quantization(self, tmp_path):
        img = random_image(16, 16, 3, seed=1)
        p = tmp_path / "img.ppm"
        save_image(img, p)
        back = load_image(p)
        assert np.abs(back.pixels - img.pixels).max() <= 1.0 / 255.0

    def test_roundtrip_gray(self, tmp_path):
        img = random_image(8, 5, 1, seed=2)
        p = tmp_path / "img.pgm"
        save_image(img, p)
        back = load_image(p)
        assert back.channels == 1
        assert np.abs(back.pixels - img.pixels).max() <= 1.0 / 255.0

    def test_pure_white_pixel(self, tmp_path):
        p = tmp_path / "white.ppm"
        save_image(Image(np.ones((1, 1, 3))), p)
        assert np.array_equal(load_image(p).pixels, np.ones((1, 1, 3)))

    def test_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"BM\x00\x00\x00junk")
        with pytest.raises(FormatError):
            load_image(p)

    def test_truncated_raster_reports_offset(self, tmp_path):
        p = tmp_path / "trunc.ppm"
        save_image(random_image(4, 4, 3), p)
        blob = p.read_bytes()
        p.write_bytes(blob[:-5])
        with pytest.raises(FormatError) as exc:
            load_image(p)
        assert exc.value.offset is not None

    def test_comment_in_header_is_skipped(self, tmp_path):
        p = tmp_path / "comment.pgm"
        p.write_bytes(b"P5\n# a comment\n2 1\n255\n\x00\xff")
        img = load_image(p)
        assert img.pixels[0, 0, 0] == 0.0 and img.pixels[0, 1, 0] == 1.0

    def test_resave_is_byte_identical(self, tmp_path):
        img = random_image(9, 7, 3, seed=5)
        a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
        save_image(img, a)
        save_image(load_image(a), b)
        assert a.read_bytes() == b.read_bytes()
