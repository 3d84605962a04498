"""Palette-indexed PNG label maps (DAVIS annotation format)."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

# fixed settings so identical label maps always encode to identical bytes
_PNG_OPTIONS = {"compress_level": 6, "optimize": False}


def default_palette(n: int = 256) -> bytes:
    """The PASCAL VOC / DAVIS colour map."""
    pal = bytearray()
    for i in range(n):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal += bytes((r, g, b))
    return bytes(pal)


def encode_label_png(labels: np.ndarray, palette: bytes | None = None) -> bytes:
    palette = default_palette() if palette is None else bytes(palette)
    n_colors = len(palette) // 3
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label map must be 2-D")
    if labels.size and (labels.min() < 0 or labels.max() >= n_colors):
        raise ValueError(
            f"label id {int(labels.max())} exceeds palette of {n_colors} entries"
        )
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(palette)
    buf = io.BytesIO()
    img.save(buf, format="PNG", **_PNG_OPTIONS)
    return buf.getvalue()


def write_label_png(labels: np.ndarray, path, palette: bytes | None = None) -> None:
    data = encode_label_png(labels, palette)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)


def read_label_png(path, return_palette: bool = False):
    """Read an indexed PNG; pixel index is the object id.

    Returns the label array, or ``(labels, palette)`` with
    ``return_palette=True``.
    """
    with Image.open(path) as img:
        if img.mode != "P":
            raise ValueError(f"{path}: expected a palette-indexed PNG, got mode {img.mode}")
        labels = np.array(img, dtype=np.int64)
        palette = bytes(img.getpalette() or b"")
    if return_palette:
        return labels, palette
    return labels
