"""Spectrogram-to-image rendering and image file IO.

The colormap is a fixed built-in 256-entry RGB table generated by linear
interpolation between five anchors (dark purple to pale yellow), rounded
half away from zero:

    index   0: (  0,   0,   4)
    index  64: ( 80,  18, 123)
    index 128: (183,  55, 121)
    index 192: (251, 136,  97)
    index 255: (252, 253, 191)

Rendering is log10(1+m), min-max normalization over the whole matrix,
bilinear resize to 227x227 (half-pixel centers, edge clamped), then the
colormap. A degenerate all-equal matrix normalizes to 0 when the constant
is zero and to 0.5 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

RENDER_HW = 227

_ANCHORS = ((0, (0, 0, 4)), (64, (80, 18, 123)), (128, (183, 55, 121)),
            (192, (251, 136, 97)), (255, (252, 253, 191)))


def _build_colormap() -> np.ndarray:
    table = np.zeros((256, 3), dtype=np.float64)
    for (i0, c0), (i1, c1) in zip(_ANCHORS, _ANCHORS[1:]):
        t = np.linspace(0.0, 1.0, i1 - i0 + 1)[:, None]
        table[i0:i1 + 1] = np.asarray(c0) * (1 - t) + np.asarray(c1) * t
    return np.rint(table).astype(np.uint8)


COLORMAP = _build_colormap()


@dataclass(frozen=True)
class RenderedSpectrogram:
    pixels: np.ndarray  # uint8, 227 x 227 x 3

    def __post_init__(self):
        if self.pixels.shape != (RENDER_HW, RENDER_HW, 3) or self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8 {RENDER_HW}x{RENDER_HW}x3")


def bilinear_resize(field: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-D float field with half-pixel-center bilinear sampling."""
    h, w = field.shape
    sy = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    sx = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    top = field[np.ix_(y0, x0)] * (1 - fx) + field[np.ix_(y0, x1)] * fx
    bot = field[np.ix_(y1, x0)] * (1 - fx) + field[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def normalize_field(v: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; all-equal input maps to 0 (if zero) or 0.5."""
    vmin = float(v.min())
    vmax = float(v.max())
    if vmax == vmin:
        return np.full_like(v, 0.0 if vmax == 0.0 else 0.5)
    return (v - vmin) / (vmax - vmin)


def render(spec) -> RenderedSpectrogram:
    """Turn a spectrogram matrix into a fixed-size color image."""
    mags = spec.magnitudes
    if mags.size == 0:
        raise ValueError("cannot render an empty spectrogram")
    v = normalize_field(np.log10(1.0 + mags))
    # flip so low frequencies land at the bottom of the image
    field = bilinear_resize(v[::-1], RENDER_HW, RENDER_HW)
    idx = np.clip(np.floor(field * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return RenderedSpectrogram(pixels=COLORMAP[idx])


# ---------------------------------------------------------------------------
# image file IO

def write_png(path, pixels: np.ndarray) -> None:
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def write_ppm(path, pixels: np.ndarray) -> None:
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_image(path, pixels: np.ndarray, fmt: str = "png") -> None:
    if fmt == "png":
        write_png(path, pixels)
    elif fmt == "ppm":
        write_ppm(path, pixels)
    else:
        raise ValueError(f"unknown image format {fmt!r} (use png or ppm)")


def read_image(path) -> np.ndarray:
    """Load a PNG or PPM file as an RGB uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def image_to_chw_float(pixels: np.ndarray, dtype=np.float32) -> np.ndarray:
    """HWC uint8 -> CHW float in [0, 1]."""
    return np.ascontiguousarray(pixels.transpose(2, 0, 1)).astype(dtype) / 255.0


# ---------------------------------------------------------------------------
# filter visualization

def grid_dims(n: int) -> tuple[int, int]:
    """(cols, rows) for tiling n filters: cols is the smallest divisor of n
    that is >= sqrt(n), so 96 tiles as 12 wide by 8 high."""
    root = int(np.ceil(np.sqrt(n)))
    for cols in range(root, n + 1):
        if n % cols == 0:
            return cols, n // cols
    return n, 1


def tile_filter_grid(filters: np.ndarray) -> np.ndarray:
    """Tile conv filters [K,C,kh,kw] row-major into one uint8 image.

    Each filter is min-max normalized on its own to 0..255 (an all-equal
    filter becomes uniform gray 128); tiles are separated by 1-px black
    lines. 3-channel filters render as RGB, anything else as the channel
    mean in gray.
    """
    k, c, kh, kw = filters.shape
    cols, rows = grid_dims(k)
    tiles = np.zeros((k, kh, kw, 3), dtype=np.uint8)
    for i in range(k):
        f = filters[i].astype(np.float64)
        rgb = f.transpose(1, 2, 0) if c == 3 else \
            np.repeat(f.mean(axis=0)[:, :, None], 3, axis=2)
        lo, hi = rgb.min(), rgb.max()
        if hi == lo:
            tiles[i] = 128
        else:
            tiles[i] = np.clip(np.floor((rgb - lo) / (hi - lo) * 255.0 + 0.5),
                               0, 255).astype(np.uint8)
    grid_h = rows * kh + (rows - 1)
    grid_w = cols * kw + (cols - 1)
    grid = np.zeros((grid_h, grid_w, 3), dtype=np.uint8)
    for i in range(k):
        r, col = divmod(i, cols)
        y = r * (kh + 1)
        x = col * (kw + 1)
        grid[y:y + kh, x:x + kw] = tiles[i]
    return grid
