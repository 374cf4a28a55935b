"""PNG helpers for the on-disk interchange formats.

Color frames are 8-bit RGB; masks are 8-bit single channel (0/255 for
binary data); depth maps are 16-bit single channel with an explicit scale
in meters-per-unit declared by the writer.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

DEPTH_SCALE_DEFAULT = 0.001  # meters per 16-bit unit (1 mm)


def save_rgb(path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_rgb(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_mask(path, mask: np.ndarray) -> None:
    """Binary or soft mask in [0, 1] as 8-bit grayscale."""
    arr = np.clip(np.asarray(mask, dtype=np.float64) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_mask(path, binary: bool = True) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    return arr >= 0.5 if binary else arr


def save_depth(path, depth: np.ndarray, scale: float = DEPTH_SCALE_DEFAULT) -> None:
    """Depth in meters as 16-bit PNG; non-finite values store as 0."""
    d = np.asarray(depth, dtype=np.float64) / scale
    d = np.where(np.isfinite(d), d, 0.0)
    arr = np.clip(d + 0.5, 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def load_depth(path, scale: float = DEPTH_SCALE_DEFAULT,
               zero_as_sentinel: bool = True) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.float64) * scale
    if zero_as_sentinel:
        arr = np.where(arr > 0, arr, np.inf)
    return arr
