"""Density overlays: blending, colorization, box drawing, file output."""

import numpy as np
import pytest

from promptcount import Box, DensityMap, colorize_density, render_overlay, render_overlay_file
from promptcount.errors import ShapeMismatchError
from promptcount.images import load_png


@pytest.fixture
def image(rng) -> np.ndarray:
    return rng.integers(0, 256, size=(24, 24, 3), dtype=np.uint8)


def make_density(grid: np.ndarray) -> DensityMap:
    return DensityMap(grid=grid.astype(np.float32), scale=1.0)


class TestColorize:
    def test_shape_and_dtype(self, rng):
        grid = rng.uniform(0, 3, size=(10, 12))
        out = colorize_density(grid)
        assert out.shape == (10, 12, 3)
        assert out.dtype == np.uint8

    def test_zero_grid_is_dark_blue(self):
        out = colorize_density(np.zeros((4, 4)))
        assert (out[..., 2] == 255).all()
        assert (out[..., 0] == 0).all()

    def test_peak_is_yellow(self):
        grid = np.zeros((4, 4))
        grid[2, 2] = 5.0
        out = colorize_density(grid)
        assert tuple(out[2, 2]) == (255, 191, 0)

    def test_scale_invariant(self, rng):
        grid = rng.uniform(0, 1, size=(6, 6))
        np.testing.assert_array_equal(colorize_density(grid), colorize_density(10 * grid))


class TestRenderOverlay:
    def test_zero_density_reproduces_image(self, image):
        out = render_overlay(image, make_density(np.zeros((24, 24))))
        np.testing.assert_array_equal(out, image)
        assert out is not image

    def test_nonzero_density_changes_peak_pixel(self, image):
        grid = np.zeros((24, 24))
        grid[5, 7] = 1.0
        out = render_overlay(image, make_density(grid))
        assert not np.array_equal(out[5, 7], image[5, 7])
        # Far corners carry no density, so they stay untouched.
        np.testing.assert_array_equal(out[23, 23], image[23, 23])

    def test_boxes_draw_green_edges(self, image):
        out = render_overlay(
            image, make_density(np.zeros((24, 24))), boxes=[Box(4, 6, 10, 12)]
        )
        assert tuple(out[6, 4]) == (0, 255, 0)
        assert tuple(out[12, 10]) == (0, 255, 0)
        assert tuple(out[6, 7]) == (0, 255, 0)
        # Interior pixels stay original.
        np.testing.assert_array_equal(out[9, 7], image[9, 7])

    def test_determinism(self, image, rng):
        grid = rng.uniform(0, 1, size=(24, 24))
        a = render_overlay(image, make_density(grid), boxes=[Box(1, 1, 5, 5)])
        b = render_overlay(image, make_density(grid), boxes=[Box(1, 1, 5, 5)])
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch_rejected(self, image):
        with pytest.raises(ShapeMismatchError):
            render_overlay(image, make_density(np.zeros((8, 8))))

    def test_float_image_rejected(self):
        with pytest.raises(ValueError, match="uint8"):
            render_overlay(
                np.zeros((8, 8, 3), dtype=np.float32), make_density(np.zeros((8, 8)))
            )


class TestRenderFile:
    def test_written_png_round_trips(self, image, rng, tmp_path):
        grid = rng.uniform(0, 1, size=(24, 24))
        path = tmp_path / "overlay.png"
        render_overlay_file(path, image, make_density(grid), boxes=[Box(2, 2, 9, 9)])
        back = load_png(path)
        np.testing.assert_array_equal(
            back, render_overlay(image, make_density(grid), boxes=[Box(2, 2, 9, 9)])
        )
