import colorsys

import numpy as np
import pytest

from promptrack.features import (
    N_CHANNELS,
    N_HUE_BINS,
    box_embedding,
    crop_similarity,
    encode,
    extract_template,
    heatmap_correlate,
)
from promptrack.raster import Box, bbox


def uniform(h, w, color):
    img = np.empty((h, w, 3), np.uint8)
    img[:] = color
    return img


def test_uniform_image():
    g = encode(uniform(32, 48, (200, 40, 40)), 8)
    assert g.values.shape == (4, 6, N_CHANNELS)
    assert np.allclose(g.values, g.values[0, 0])
    hist = g.values[0, 0, 3:3 + N_HUE_BINS]
    h = colorsys.rgb_to_hsv(200 / 255, 40 / 255, 40 / 255)[0]
    assert hist[int(h * N_HUE_BINS)] == 1.0 and hist.sum() == 1.0
    assert g.values[0, 0, -1] == 0.0


def test_single_cell_is_global_statistics(rng):
    img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    g = encode(img, 16)
    assert g.values.shape == (1, 1, N_CHANNELS)
    assert np.allclose(g.values[0, 0, :3], img.reshape(-1, 3).mean(0) / 255)
    assert np.allclose(g.values[0, 0], g.pixels.reshape(-1, N_CHANNELS).mean(0), atol=1e-6)


def test_two_tone_split():
    img = uniform(16, 32, (0, 0, 255))
    img[:, :16] = (255, 255, 0)
    g = encode(img, 8)
    left = encode(uniform(16, 16, (255, 255, 0)), 8).values[0, 0]
    assert np.allclose(g.values[:, :2, :3], left[:3])
    # gradient only touches cells next to the seam
    assert np.array_equal(g.values[:, 0], np.broadcast_to(left, g.values[:, 0].shape))


def test_grey_excluded_from_hue():
    g = encode(uniform(8, 8, (90, 90, 90)), 8)
    assert g.values[0, 0, 3:3 + N_HUE_BINS].sum() == 0


def test_extract_template_rules():
    img = uniform(32, 32, (10, 200, 10))
    g = encode(img, 8)
    box = Box(8, 8, 24, 24)
    t = extract_template(g, box, box.to_mask(32, 32))
    assert t.cell_mask.shape == (2, 2) and t.cell_mask.all() and not t.degenerate
    t = extract_template(g, box, np.zeros((32, 32), bool))
    assert t.degenerate and not t.values.any()
    half = np.zeros((32, 32), bool)
    half[8:16, 8:12] = True  # exactly 50% of the first cell
    t = extract_template(g, box, half)
    assert t.cell_mask[0, 0] and t.coverage[0, 0] == 0.5
    assert not t.cell_mask[0, 1]


def test_heatmap_self_similarity(rng):
    img = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
    g = encode(img, 8)
    box = Box(16, 24, 40, 48)  # cells (2..4, 3..5)
    t = extract_template(g, box, box.to_mask(64, 64))
    h = heatmap_correlate(t, g)
    assert h.shape == (8 - 3 + 1, 8 - 3 + 1)
    assert h[3, 2] == pytest.approx(1.0, abs=1e-12)
    assert np.unravel_index(np.argmax(h), h.shape) == (3, 2)


def test_heatmap_degenerate_and_constant():
    g = encode(uniform(32, 32, (50, 60, 200)), 8)
    empty = extract_template(g, Box(0, 0, 8, 8), np.zeros((32, 32), bool))
    with pytest.raises(ValueError):
        heatmap_correlate(empty, g)
    one = extract_template(g, Box(0, 0, 8, 8), Box(0, 0, 8, 8).to_mask(32, 32))
    h = heatmap_correlate(one, g)
    assert np.allclose(h, h[0, 0])


def two_colour_scene():
    img = uniform(64, 96, (20, 20, 20))
    img[16:40, 24:56] = (220, 50, 50)
    mask = np.zeros((64, 96), bool)
    mask[16:40, 24:56] = True
    return img, mask


def test_crop_similarity_self_and_background():
    img, mask = two_colour_scene()
    g = encode(img, 8)
    t = extract_template(g, bbox(mask), mask)
    self_score = crop_similarity(t, g, bbox(mask), mask)
    assert self_score.score == pytest.approx(1.0, abs=1e-9) and not self_score.degenerate
    bg_box = Box(60, 30, 92, 54)
    bg = crop_similarity(t, g, bg_box, bg_box.to_mask(64, 96))
    assert bg.score < self_score.score


def test_crop_similarity_disjoint_is_degenerate():
    img, mask = two_colour_scene()
    g = encode(img, 8)
    left = np.zeros_like(mask)
    left[16:40, 24:30] = True  # leftmost cell column only
    t = extract_template(g, bbox(mask), left)
    right = np.zeros_like(mask)
    right[16:40, 50:56] = True
    s = crop_similarity(t, g, bbox(mask), right)
    assert s.score == 0.0 and s.degenerate


def test_box_embedding_independent_of_grid_alignment():
    img, mask = two_colour_scene()
    g8 = encode(img, 8)
    shifted = np.roll(img, (3, 5), axis=(0, 1))
    smask = np.roll(mask, (3, 5), axis=(0, 1))
    gs = encode(shifted, 8)
    a, am = box_embedding(g8, bbox(mask), mask, 3, 4)
    b, bm = box_embedding(gs, bbox(smask), smask, 3, 4)
    assert np.array_equal(am, bm)
    assert np.allclose(a[..., :11], b[..., :11])


def test_encode_validation():
    with pytest.raises(ValueError):
        encode(np.zeros((4, 4), np.uint8))
    with pytest.raises(ValueError):
        encode(np.zeros((4, 4, 3), np.uint8), 0)
