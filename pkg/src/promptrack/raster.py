"""Binary-mask and label-map algebra.

Masks are 2-D boolean numpy arrays indexed ``[y, x]``; label maps are 2-D
non-negative integer arrays where 0 is background. Boxes use the half-open
pixel convention ``[x0, x1) x [y0, y1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class Box:
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def is_empty(self) -> bool:
        return self.x1 <= self.x0 or self.y1 <= self.y0

    @property
    def width(self) -> int:
        return max(self.x1 - self.x0, 0)

    @property
    def height(self) -> int:
        return max(self.y1 - self.y0, 0)

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    def to_mask(self, height: int, width: int) -> np.ndarray:
        out = np.zeros((height, width), dtype=bool)
        if not self.is_empty:
            out[max(self.y0, 0):max(self.y1, 0), max(self.x0, 0):max(self.x1, 0)] = True
        return out


EMPTY_BOX = Box(0, 0, 0, 0)


class Point(NamedTuple):
    x: int
    y: int


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def area(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


def bbox(mask: np.ndarray) -> Box:
    """Tightest box around the true pixels, or ``EMPTY_BOX``."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return EMPTY_BOX
    cols = np.flatnonzero(mask.any(axis=0))
    return Box(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    _check_same_shape(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def box_iou(a: Box, b: Box) -> float:
    if a.is_empty or b.is_empty:
        return 1.0 if (a.is_empty and b.is_empty) else 0.0
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def squared_distance_transform(mask: np.ndarray) -> np.ndarray:
    """Integer squared Euclidean distance from each foreground pixel to the
    nearest background pixel; pixels outside the image count as background."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.int64)
    if not mask.any():
        return out
    padded = np.pad(mask, 1, constant_values=False)
    # feature transform gives exact nearest-background coordinates
    idx = ndimage.distance_transform_edt(padded, return_distances=False, return_indices=True)
    yy, xx = np.indices(padded.shape)
    d2 = (idx[0] - yy).astype(np.int64) ** 2 + (idx[1] - xx).astype(np.int64) ** 2
    out[:] = d2[1:-1, 1:-1]
    out[~mask] = 0
    return out


def distance_transform(mask: np.ndarray) -> np.ndarray:
    return np.sqrt(squared_distance_transform(mask).astype(np.float64))


def farthest_interior_point(mask: np.ndarray) -> Point:
    """Foreground pixel farthest from the boundary; ties go to the smallest
    row-major index."""
    if not np.any(mask):
        raise ValueError("farthest_interior_point of an empty mask")
    d2 = squared_distance_transform(mask)
    flat = int(np.argmax(d2))  # argmax returns the first maximum
    y, x = divmod(flat, d2.shape[1])
    return Point(x, y)


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbour."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~interior


def dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean disk dilation: true where some input pixel lies within
    ``radius``."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0 or not mask.any():
        return mask.copy()
    idx = ndimage.distance_transform_edt(~mask, return_distances=False, return_indices=True)
    yy, xx = np.indices(mask.shape)
    d2 = (idx[0] - yy) ** 2 + (idx[1] - xx) ** 2
    return d2 <= radius * radius


def split_label_map(labels: np.ndarray) -> list[tuple[int, np.ndarray]]:
    ids = np.unique(labels)
    return [(int(i), labels == i) for i in ids if i != 0]


def merge_masks(
    masks: Sequence[tuple[int, np.ndarray]],
    conflict_scores: Sequence[float],
    shape: tuple[int, int] | None = None,
) -> np.ndarray:
    """Combine per-object masks into a label map.

    Contested pixels go to the highest-scoring mask; equal scores go to the
    lower id.
    """
    if len(masks) != len(conflict_scores):
        raise ValueError("one conflict score per mask is required")
    if not masks:
        if shape is None:
            raise ValueError("merge_masks needs a mask or an explicit shape")
        return np.zeros(shape, dtype=np.int64)
    ids = [int(i) for i, _ in masks]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate object ids: {ids}")
    if min(ids) < 1:
        raise ValueError("object ids must be >= 1")
    shape = masks[0][1].shape
    for _, m in masks:
        _check_same_shape(masks[0][1], m)
    out = np.zeros(shape, dtype=np.int64)
    # paint lowest priority first so the winner overwrites
    order = sorted(range(len(masks)), key=lambda k: (conflict_scores[k], -ids[k]))
    for k in order:
        out[np.asarray(masks[k][1], dtype=bool)] = ids[k]
    return out
