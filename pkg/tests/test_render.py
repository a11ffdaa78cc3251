import numpy as np
import numpy.testing as npt
import pytest
import zlib

from fusenet.audio import SpectrogramMatrix
from fusenet.render import (
    COLORMAP, RENDER_HW, bilinear_resize, grid_dims, image_to_chw_float,
    normalize_field, read_image, render, tile_filter_grid, write_image,
    write_png, write_ppm,
)


def matrix(mags):
    mags = np.asarray(mags, dtype=np.float64)
    return SpectrogramMatrix(magnitudes=mags, bin_hz=43.066, hop=256)


# ---------------------------------------------------------------------------
# colormap

def test_colormap_shape_and_anchors():
    assert COLORMAP.shape == (256, 3) and COLORMAP.dtype == np.uint8
    npt.assert_array_equal(COLORMAP[0], [0, 0, 4])
    npt.assert_array_equal(COLORMAP[64], [80, 18, 123])
    npt.assert_array_equal(COLORMAP[128], [183, 55, 121])
    npt.assert_array_equal(COLORMAP[192], [251, 136, 97])
    npt.assert_array_equal(COLORMAP[255], [252, 253, 191])


def test_colormap_byte_exact_frozen():
    # freezes the full 768-byte table; regenerating must reproduce it exactly
    assert zlib.crc32(COLORMAP.tobytes()) == 1412331051


# ---------------------------------------------------------------------------
# render

def test_render_all_zero_is_colormap_entry_zero():
    img = render(matrix(np.zeros((50, 80))))
    npt.assert_array_equal(img.pixels.reshape(-1, 3),
                           np.tile(COLORMAP[0], (RENDER_HW * RENDER_HW, 1)))


def test_render_constant_nonzero_is_mid_colormap():
    img = render(matrix(np.full((30, 30), 5.0)))
    npt.assert_array_equal(img.pixels.reshape(-1, 3),
                           np.tile(COLORMAP[128], (RENDER_HW * RENDER_HW, 1)))


def test_render_shape_always_227():
    for shape in ((1, 1), (3, 500), (233, 860), (512, 2)):
        img = render(matrix(np.random.default_rng(0).uniform(0, 4, shape)))
        assert img.pixels.shape == (227, 227, 3)
        assert img.pixels.dtype == np.uint8


def test_render_deterministic():
    rng = np.random.default_rng(1)
    m = matrix(rng.uniform(0, 10, (233, 430)))
    assert render(m).pixels.tobytes() == render(m).pixels.tobytes()


def test_render_rejects_empty():
    with pytest.raises(ValueError):
        render(matrix(np.zeros((0, 5))))


# ---------------------------------------------------------------------------
# normalization + resize helpers

def test_normalize_field_rules():
    npt.assert_array_equal(normalize_field(np.zeros((2, 2))), np.zeros((2, 2)))
    npt.assert_array_equal(normalize_field(np.full((2, 2), 3.0)), np.full((2, 2), 0.5))
    out = normalize_field(np.array([[0.0, 2.0], [1.0, 4.0]]))
    assert out.min() == 0.0 and out.max() == 1.0


def test_bilinear_constant_preserved():
    out = bilinear_resize(np.full((7, 13), 2.5), 227, 227)
    npt.assert_allclose(out, 2.5)


def test_bilinear_identity_when_same_size():
    rng = np.random.default_rng(2)
    f = rng.uniform(0, 1, (9, 9))
    npt.assert_allclose(bilinear_resize(f, 9, 9), f, atol=1e-12)


# ---------------------------------------------------------------------------
# image IO

def test_png_ppm_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    pixels = rng.integers(0, 256, (227, 227, 3), dtype=np.uint8)
    for fmt in ("png", "ppm"):
        p = tmp_path / f"img.{fmt}"
        write_image(p, pixels, fmt)
        npt.assert_array_equal(read_image(p), pixels)


def test_png_write_deterministic(tmp_path):
    pixels = np.random.default_rng(4).integers(0, 256, (64, 64, 3), dtype=np.uint8)
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    write_png(a, pixels)
    write_png(b, pixels)
    assert a.read_bytes() == b.read_bytes()


def test_image_to_chw_float():
    pixels = np.zeros((4, 5, 3), dtype=np.uint8)
    pixels[0, 0] = (255, 0, 128)
    chw = image_to_chw_float(pixels)
    assert chw.shape == (3, 4, 5)
    assert chw[0, 0, 0] == pytest.approx(1.0)
    assert chw[2, 0, 0] == pytest.approx(128 / 255)


# ---------------------------------------------------------------------------
# filter grids

def test_grid_dims_96_is_12_by_8():
    assert grid_dims(96) == (12, 8)
    assert grid_dims(1) == (1, 1)
    assert grid_dims(7) == (7, 1)  # prime: single row
    assert grid_dims(16) == (4, 4)


def test_tile_grid_96_filters_layout():
    rng = np.random.default_rng(5)
    filters = rng.standard_normal((96, 3, 11, 11)).astype(np.float32)
    grid = tile_filter_grid(filters)
    assert grid.shape == (8 * 11 + 7, 12 * 11 + 11, 3)


def test_tile_grid_single_filter():
    filters = np.random.default_rng(6).standard_normal((1, 3, 5, 5))
    grid = tile_filter_grid(filters)
    assert grid.shape == (5, 5, 3)


def test_tile_grid_constant_filter_is_gray():
    filters = np.full((1, 3, 4, 4), 2.0)
    grid = tile_filter_grid(filters)
    npt.assert_array_equal(grid, np.full((4, 4, 3), 128, dtype=np.uint8))
