"""PGM/PPM image helpers (binary P5/P6 via Pillow)."""

from pathlib import Path

import numpy as np
from PIL import Image


def to_u8(img):
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_netpbm(path, img):
    """Write float [0, 1] pixels, (H, W), (H, W, 1) or (H, W, 3)."""
    arr = to_u8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(np.ascontiguousarray(arr)).save(Path(path), format="PPM")


def read_netpbm(path):
    """Read a PGM/PPM as float (H, W, C) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L") if im.mode not in ("L", "RGB") else im)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def upsample_nearest(grid, height, width):
    """Nearest-neighbour upsampling of a (h, w) map to (height, width)."""
    h, w = grid.shape
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return grid[rows][:, cols]
