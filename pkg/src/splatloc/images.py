"""8-bit PNG read/write for float images.

Values are written as ``round(255 * clip(x, 0, 1))`` with no transfer curve,
so a rendered buffer survives a round trip to within half a code value.
Photographs are usually sRGB-encoded; pass ``srgb=True`` on load to
linearize them before comparing against renders.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from PIL import Image

__all__ = ["save_png", "load_png", "srgb_to_linear"]


def save_png(img: NDArray[np.float64], path: str | Path) -> None:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {arr.shape}")
    u8 = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def srgb_to_linear(x: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def load_png(path: str | Path, srgb: bool = False) -> NDArray[np.float64]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(arr) if srgb else arr
