"""Cell feature grids and template correlation for semantic mask selection.

A hand-crafted per-cell descriptor stands in for a learned image encoder:
mean RGB, an 8-bin hue histogram and mean gradient magnitude (12 channels).
Templates are masked crops of a grid; candidates are compared to the frozen
template by cosine similarity over cells that are foreground in both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .raster import Box

N_HUE_BINS = 8
N_CHANNELS = 3 + N_HUE_BINS + 1


@dataclass
class FeatureGrid:
    values: np.ndarray  # (gh, gw, c)
    stride: int
    image_size: tuple[int, int]  # (W, H)
    # per-pixel descriptors, kept so crops can pool over foreground pixels only
    pixels: np.ndarray | None = None

    @property
    def gh(self) -> int:
        return self.values.shape[0]

    @property
    def gw(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass
class TemplateEmbedding:
    values: np.ndarray  # (th, tw, c), zero outside cell_mask
    cell_mask: np.ndarray  # (th, tw) bool
    source_box: Box
    coverage: np.ndarray  # (th, tw) foreground fraction per cell
    origin: tuple[int, int] = (0, 0)  # (cell_x, cell_y) of the crop in its grid
    # (values, cell_mask) resampled from the box itself, see box_embedding
    box_relative: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def th(self) -> int:
        return self.values.shape[0]

    @property
    def tw(self) -> int:
        return self.values.shape[1]

    @property
    def degenerate(self) -> bool:
        return not self.cell_mask.any() or not np.any(self.values[self.cell_mask])


class CropScore(NamedTuple):
    score: float
    degenerate: bool
    area_normalized: float


def _hue(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hue in [0, 1) and a chromatic flag (False for greys)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    chromatic = delta > 1e-12
    d = np.where(chromatic, delta, 1.0)
    h = np.where(
        mx == r,
        ((g - b) / d) % 6.0,
        np.where(mx == g, (b - r) / d + 2.0, (r - g) / d + 4.0),
    )
    return (h / 6.0) % 1.0, chromatic


def _pool_sum(a: np.ndarray, stride: int) -> np.ndarray:
    """Sum over stride x stride cells; trailing partial cells are included."""
    H, W = a.shape[:2]
    gh, gw = -(-H // stride), -(-W // stride)
    pad = [(0, gh * stride - H), (0, gw * stride - W)] + [(0, 0)] * (a.ndim - 2)
    a = np.pad(a, pad)
    a = a.reshape((gh, stride, gw, stride) + a.shape[2:])
    return a.sum(axis=(1, 3))


def encode(image: np.ndarray, stride: int = 16) -> FeatureGrid:
    """Per-cell descriptor grid of an ``HxWx3`` image.

    Greys contribute nothing to the hue histogram, which is normalised by the
    cell's pixel count. Edge cells average over their partial footprint.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"expected a non-empty HxWx3 image, got shape {image.shape}")
    rgb = image.astype(np.float64) / 255.0
    H, W = rgb.shape[:2]
    hue, chromatic = _hue(rgb)
    bins = np.minimum((hue * N_HUE_BINS).astype(int), N_HUE_BINS - 1)
    hist = np.zeros((H, W, N_HUE_BINS))
    hist[np.arange(H)[:, None], np.arange(W)[None, :], bins] = chromatic
    gray = rgb @ np.array([0.299, 0.587, 0.114])
    if H > 1 and W > 1:
        gy, gx = np.gradient(gray)
    else:
        gy = np.gradient(gray, axis=0) if H > 1 else np.zeros_like(gray)
        gx = np.gradient(gray, axis=1) if W > 1 else np.zeros_like(gray)
    grad = np.hypot(gx, gy)
    per_pixel = np.concatenate([rgb, hist, grad[..., None]], axis=-1)
    counts = _pool_sum(np.ones((H, W)), stride)
    values = _pool_sum(per_pixel, stride) / counts[..., None]
    return FeatureGrid(values, stride, (W, H), per_pixel.astype(np.float32))


def _cell_range(box: Box, grid: FeatureGrid) -> tuple[int, int, int, int]:
    s = grid.stride
    cx0 = max(box.x0 // s, 0)
    cy0 = max(box.y0 // s, 0)
    cx1 = min(-(-box.x1 // s), grid.gw)
    cy1 = min(-(-box.y1 // s), grid.gh)
    if cx1 <= cx0 or cy1 <= cy0:
        raise ValueError(f"box {box.as_tuple()} lies outside the feature grid")
    return cx0, cy0, cx1, cy1


def _overlap_matrix(n_px: int, n_bins: int) -> np.ndarray:
    """(n_bins, n_px) weights: overlap of each pixel with each bin after
    stretching the pixel span onto ``n_bins`` unit bins."""
    edges = np.arange(n_px + 1) * (n_bins / n_px)
    lo, hi = edges[:-1], edges[1:]
    j = np.arange(n_bins)[:, None]
    return np.clip(np.minimum(hi[None, :], j + 1) - np.maximum(lo[None, :], j), 0.0, None)


def box_embedding(
    grid: FeatureGrid, box: Box, mask: np.ndarray, th: int, tw: int
) -> tuple[np.ndarray, np.ndarray]:
    """Masked features of ``box`` resampled onto a ``th x tw`` cell layout.

    Each output cell averages the foreground pixel descriptors falling into
    its share of the box (exact area weights), so the result does not depend
    on where the box sits relative to the stride grid. A cell is foreground
    when at least half of its area is. Returns ``(values, cell_mask)``.
    """
    if grid.pixels is None:
        raise ValueError("feature grid carries no per-pixel descriptors")
    W, H = grid.image_size
    x0, y0 = max(box.x0, 0), max(box.y0, 0)
    x1, y1 = min(box.x1, W), min(box.y1, H)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"box {box.as_tuple()} lies outside the image")
    feats = grid.pixels[y0:y1, x0:x1].astype(np.float64)
    fg = np.asarray(mask, dtype=bool)[y0:y1, x0:x1].astype(np.float64)
    ry = _overlap_matrix(y1 - y0, th)
    rx = _overlap_matrix(x1 - x0, tw)
    total = ry.sum(axis=1)[:, None] * rx.sum(axis=1)[None, :]
    fg_w = ry @ fg @ rx.T
    sums = np.einsum("yh,hwc,xw->yxc", ry, feats * fg[..., None], rx)
    values = np.divide(sums, fg_w[..., None], out=np.zeros_like(sums), where=fg_w[..., None] > 0)
    cell_mask = fg_w >= 0.5 * total
    return values * cell_mask[..., None], cell_mask


def extract_template(grid: FeatureGrid, box: Box, mask: np.ndarray) -> TemplateEmbedding:
    """Masked crop of the cells touched by ``box``.

    A cell is kept when at least half of its pixels inside the box are
    foreground. The box-relative embedding used by :func:`crop_similarity`
    is computed alongside at the same cell size.
    """
    if box.is_empty:
        raise ValueError("cannot extract a template from an empty box")
    cx0, cy0, cx1, cy1 = _cell_range(box, grid)
    s = grid.stride
    W, H = grid.image_size
    px0, py0 = cx0 * s, cy0 * s
    px1, py1 = min(cx1 * s, W), min(cy1 * s, H)
    sub_mask = np.asarray(mask, dtype=bool)[py0:py1, px0:px1]
    in_box = np.zeros_like(sub_mask)
    in_box[
        max(box.y0 - py0, 0):max(box.y1 - py0, 0),
        max(box.x0 - px0, 0):max(box.x1 - px0, 0),
    ] = True
    box_cnt = _pool_sum(in_box.astype(np.float64), s)
    fg_cnt = _pool_sum((sub_mask & in_box).astype(np.float64), s)
    coverage = np.divide(fg_cnt, box_cnt, out=np.zeros_like(fg_cnt), where=box_cnt > 0)
    cell_mask = coverage >= 0.5
    values = grid.values[cy0:cy1, cx0:cx1] * cell_mask[..., None]
    emb = None
    if grid.pixels is not None:
        emb = box_embedding(grid, box, mask, cy1 - cy0, cx1 - cx0)
    return TemplateEmbedding(values, cell_mask, box, coverage, (cx0, cy0), emb)


def heatmap_correlate(template: TemplateEmbedding, grid: FeatureGrid) -> np.ndarray:
    """Cosine similarity of the template at every valid grid position.

    Returns an array of shape ``(gh - th + 1, gw - tw + 1)``.
    """
    if template.values.shape[2] != grid.channels:
        raise ValueError("template and grid channel counts differ")
    if template.th > grid.gh or template.tw > grid.gw:
        raise ValueError("template is larger than the grid")
    if template.degenerate:
        raise ValueError("degenerate template: no foreground cells")
    m = template.cell_mask
    t = template.values * m[..., None]
    t = t / np.linalg.norm(t)
    win = np.lib.stride_tricks.sliding_window_view(
        grid.values, (template.th, template.tw), axis=(0, 1)
    )  # (oh, ow, c, th, tw)
    win = np.moveaxis(win, 2, -1) * m[None, None, :, :, None]
    dots = np.einsum("abijc,ijc->ab", win, t)
    norms = np.sqrt(np.einsum("abijc,abijc->ab", win, win))
    return np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def crop_similarity(
    template: TemplateEmbedding, grid: FeatureGrid, box: Box, mask: np.ndarray
) -> CropScore:
    """Best cosine similarity between the template and a candidate crop.

    The candidate is resampled onto the template's cell layout, then compared
    in place and at the 8 one-cell shifts; cells must be foreground in both.
    """
    if box.is_empty:
        raise ValueError("candidate box is empty")
    if template.box_relative is None:
        raise ValueError("template was extracted without per-pixel descriptors")
    t_vals, t_mask = template.box_relative
    th, tw = t_mask.shape
    c_vals, c_mask = box_embedding(grid, box, mask, th, tw)
    best: CropScore | None = None
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            # template cell (y, x) against candidate cell (y + dy, x + dx)
            ty0, ty1 = max(0, -dy), min(th, th - dy)
            tx0, tx1 = max(0, -dx), min(tw, tw - dx)
            if ty1 <= ty0 or tx1 <= tx0:
                continue
            joint = t_mask[ty0:ty1, tx0:tx1] & c_mask[ty0 + dy:ty1 + dy, tx0 + dx:tx1 + dx]
            if not joint.any():
                continue
            a = t_vals[ty0:ty1, tx0:tx1][joint].ravel()
            b = c_vals[ty0 + dy:ty1 + dy, tx0 + dx:tx1 + dx][joint].ravel()
            score = _cosine(a, b)
            if best is None or score > best.score:
                area_norm = float(np.dot(a, b)) / int(c_mask.sum())
                best = CropScore(score, False, area_norm)
    if best is None:
        return CropScore(0.0, True, 0.0)
    return best
