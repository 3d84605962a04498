"""Procedural moving-object scenes and a deterministic oracle segmenter.

The oracle behaves like a box/point promptable segmenter that knows the
ground truth: a box prompt selects the best-matching visible object but the
returned mask is clipped to the (slightly dilated) prompt box, which
reproduces the erosion a real model shows on over-tight boxes. Point prompts
return a nested whole / part / subpart triple.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .backend import (
    Backend,
    FrameHandle,
    SegmentationResult,
    box_query_string,
    fnv1a64,
    point_query_string,
)
from .raster import Box, Point, bbox, box_iou, iou

SHAPES = ("rectangle", "ellipse", "polygon")


@dataclass
class SceneObject:
    id: int
    shape: str
    base_size: tuple[float, float]
    color: tuple[int, int, int]
    # (frame, center_x, center_y) keyframes, linearly interpolated
    trajectory: list[tuple[float, float, float]]
    # (frame, factor) keyframes
    scale_curve: list[tuple[float, float]] = field(default_factory=lambda: [(0.0, 1.0)])
    depth: int = 0
    # half-open [start, end) frame intervals where the object is not drawn
    absent: list[tuple[int, int]] = field(default_factory=list)
    # polygon vertices in object-relative units, box spans [-0.5, 0.5]
    vertices: list[tuple[float, float]] = field(default_factory=list)
    # brightness falloff from left to right edge, 0 = flat colour
    shade: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.shape == "polygon" and len(self.vertices) < 3:
            raise ValueError("polygon objects need at least three vertices")
        if not self.trajectory:
            raise ValueError(f"object {self.id} has no trajectory")
        if any(s <= 0 for _, s in self.scale_curve):
            raise ValueError(f"object {self.id}: scale_curve must stay positive")
        self.base_size = tuple(float(v) for v in self.base_size)
        self.color = tuple(int(v) for v in self.color)
        self.trajectory = [tuple(float(v) for v in k) for k in self.trajectory]
        self.scale_curve = [tuple(float(v) for v in k) for k in self.scale_curve]
        self.absent = [tuple(int(v) for v in k) for k in self.absent]
        self.vertices = [tuple(float(v) for v in k) for k in self.vertices]

    def center(self, t: float) -> tuple[float, float]:
        ts, xs, ys = zip(*self.trajectory)
        return float(np.interp(t, ts, xs)), float(np.interp(t, ts, ys))

    def scale(self, t: float) -> float:
        ts, ss = zip(*self.scale_curve)
        return float(np.interp(t, ts, ss))

    def size(self, t: float) -> tuple[float, float]:
        s = self.scale(t)
        return self.base_size[0] * s, self.base_size[1] * s

    def visible_at(self, t: int) -> bool:
        return not any(a <= t < b for a, b in self.absent)

    def footprint(self, t: int, height: int, width: int) -> np.ndarray:
        """Unoccluded pixel mask, sampled at pixel centres."""
        cx, cy = self.center(t)
        w, h = self.size(t)
        px = np.arange(width) + 0.5
        py = np.arange(height) + 0.5
        X, Y = np.meshgrid(px, py)
        if self.shape == "rectangle":
            return (X >= cx - w / 2) & (X < cx + w / 2) & (Y >= cy - h / 2) & (Y < cy + h / 2)
        if self.shape == "ellipse":
            return ((X - cx) / (w / 2)) ** 2 + ((Y - cy) / (h / 2)) ** 2 <= 1.0
        verts = [(cx + vx * w, cy + vy * h) for vx, vy in self.vertices]
        signed = sum(
            (x1 - x0) * (y1 + y0) for (x0, y0), (x1, y1) in zip(verts, verts[1:] + verts[:1])
        )
        sign = -1.0 if signed > 0 else 1.0
        inside = np.ones((height, width), dtype=bool)
        for (x0, y0), (x1, y1) in zip(verts, verts[1:] + verts[:1]):
            cross = (x1 - x0) * (Y - y0) - (y1 - y0) * (X - x0)
            inside &= sign * cross >= 0
        return inside


@dataclass
class SceneScript:
    width: int
    height: int
    duration: int
    objects: list[SceneObject] = field(default_factory=list)
    seed: int = 0
    background_color: tuple[int, int, int] = (24, 24, 24)

    def __post_init__(self):
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        if self.width < 1 or self.height < 1:
            raise ValueError("scene dimensions must be positive")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids) or any(i < 1 for i in ids):
            raise ValueError(f"object ids must be unique and >= 1, got {ids}")
        self.background_color = tuple(int(v) for v in self.background_color)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objects"] = [{k: v for k, v in asdict(o).items()} for o in self.objects]
        return _listify(d)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneScript":
        d = dict(d)
        objects = [SceneObject(**o) for o in d.pop("objects", [])]
        return cls(objects=objects, **d)


def _listify(v):
    if isinstance(v, dict):
        return {k: _listify(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_listify(x) for x in v]
    return v


def render_frame(script: SceneScript, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Paint objects in ascending depth; returns ``(rgb uint8, label map)``."""
    if not 0 <= t < script.duration:
        raise IndexError(f"frame {t} outside [0, {script.duration})")
    H, W = script.height, script.width
    image = np.empty((H, W, 3), dtype=np.float64)
    image[:] = script.background_color
    labels = np.zeros((H, W), dtype=np.int64)
    px = np.arange(W) + 0.5
    for obj in sorted(script.objects, key=lambda o: (o.depth, o.id)):
        if not obj.visible_at(t):
            continue
        m = obj.footprint(t, H, W)
        if not m.any():
            continue
        color = np.asarray(obj.color, dtype=np.float64)
        if obj.shade:
            cx, _ = obj.center(t)
            w, _ = obj.size(t)
            u = np.clip((px - (cx - w / 2)) / w, 0.0, 1.0)
            gain = 1.0 - obj.shade * u
            layer = gain[None, :, None] * color[None, None, :]
            image[m] = np.broadcast_to(layer, (H, W, 3))[m]
        else:
            image[m] = color
        labels[m] = obj.id
    return np.round(image).astype(np.uint8), labels


def unoccluded_mask(script: SceneScript, obj_id: int, t: int) -> np.ndarray:
    obj = next(o for o in script.objects if o.id == obj_id)
    if not obj.visible_at(t):
        return np.zeros((script.height, script.width), dtype=bool)
    return obj.footprint(t, script.height, script.width)


@dataclass(frozen=True)
class OracleParams:
    match_threshold: float = 0.1
    clip_slack: int = 2
    iou_noise_amplitude: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.match_threshold <= 1.0:
            raise ValueError("match_threshold must lie in [0, 1]")
        if self.clip_slack < 0:
            raise ValueError("clip_slack must be >= 0")
        if self.iou_noise_amplitude < 0:
            raise ValueError("iou_noise_amplitude must be >= 0")


class FrameState:
    """Ground truth for one frame as the oracle sees it."""

    def __init__(self, labels: np.ndarray, index: int = 0, seed: int = 0):
        self.labels = np.asarray(labels)
        self.index = index
        self.seed = seed
        self.objects: dict[int, np.ndarray] = {}
        self.boxes: dict[int, Box] = {}
        for i in np.unique(self.labels):
            if i == 0:
                continue
            m = self.labels == i
            self.objects[int(i)] = m
            self.boxes[int(i)] = bbox(m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def unit_hash(self, query: str) -> float:
        h = fnv1a64(f"{self.seed}|{self.index}|{query}".encode("ascii"))
        return h / float(1 << 64)

    def _contains(self, obj_id: int, pts: Sequence[Point]) -> bool:
        m = self.objects[obj_id]
        H, W = m.shape
        return any(0 <= p[0] < W and 0 <= p[1] < H and m[p[1], p[0]] for p in pts)


def _noisy(value: float, state: FrameState, query: str, amp: float) -> float:
    offset = (2.0 * state.unit_hash(query) - 1.0) * amp
    return min(max(value + offset, 0.0), 1.0)


def oracle_segment_box(
    state: FrameState,
    box: Box,
    negatives: Sequence[Point] = (),
    params: OracleParams = OracleParams(),
) -> SegmentationResult:
    query = box_query_string(box, negatives)
    best, best_score = None, -1.0
    for obj_id in sorted(state.objects):
        if state._contains(obj_id, negatives):
            continue
        score = box_iou(state.boxes[obj_id], box)
        if score >= params.match_threshold and score > best_score:
            best, best_score = obj_id, score
    if best is None:
        empty = np.zeros(state.shape, dtype=bool)
        return SegmentationResult([empty], [0.1 * state.unit_hash(query)])
    s = params.clip_slack
    H, W = state.shape
    clip = Box(box.x0 - s, box.y0 - s, box.x1 + s, box.y1 + s).to_mask(H, W)
    visible = state.objects[best]
    mask = visible & clip
    pred = _noisy(iou(mask, visible), state, query, params.iou_noise_amplitude)
    return SegmentationResult([mask], [pred])


def _halves(b: Box, p: Point) -> tuple[Box, Box]:
    ym = b.y0 + (b.height + 1) // 2
    xm = b.x0 + (b.width + 1) // 2
    rows = (b.y0, ym) if p.y < ym else (ym, b.y1)
    cols = (b.x0, xm) if p.x < xm else (xm, b.x1)
    half = Box(b.x0, rows[0], b.x1, rows[1])
    quadrant = Box(cols[0], rows[0], cols[1], rows[1])
    return half, quadrant


def oracle_segment_points(
    state: FrameState,
    positives: Sequence[Point],
    negatives: Sequence[Point] = (),
    params: OracleParams = OracleParams(),
) -> SegmentationResult:
    query = point_query_string(positives, negatives)
    H, W = state.shape
    p = Point(int(positives[0][0]), int(positives[0][1]))
    k = int(state.labels[p.y, p.x]) if (0 <= p.x < W and 0 <= p.y < H) else 0
    if k == 0 or state._contains(k, negatives):
        empty = np.zeros(state.shape, dtype=bool)
        preds = [0.1 * state.unit_hash(f"{query}#{i}") for i in range(3)]
        return SegmentationResult([empty, empty.copy(), empty.copy()], preds)
    whole = state.objects[k]
    half, quadrant = _halves(state.boxes[k], p)
    part = whole & half.to_mask(H, W)
    subpart = whole & quadrant.to_mask(H, W)
    amp = params.iou_noise_amplitude
    preds = [
        _noisy(base, state, f"{query}#{i}", amp) for i, base in enumerate((0.9, 0.6, 0.4))
    ]
    return SegmentationResult([whole.copy(), part, subpart], preds)


class SyntheticBackend(Backend):
    """Oracle segmenter over a :class:`SceneScript`.

    ``encode_frame`` renders the ground truth of frame ``index``; the pixel
    content of the image passed in is not inspected.
    """

    def __init__(self, script: SceneScript, params: OracleParams = OracleParams()):
        super().__init__()
        self.script = script
        self.params = params
        self._states: dict[int, FrameState] = {}

    def _encode(self, image, index):
        if (image.shape[1], image.shape[0]) != (self.script.width, self.script.height):
            raise ValueError("image size does not match the scene script")
        if index not in self._states:
            _, labels = render_frame(self.script, index)
            self._states[index] = FrameState(labels, index, self.script.seed)

    def _segment_box(self, handle: FrameHandle, box, negatives):
        return oracle_segment_box(self._states[handle.index], box, negatives, self.params)

    def _segment_points(self, handle: FrameHandle, positives, negatives):
        return oracle_segment_points(self._states[handle.index], positives, negatives, self.params)


_PALETTE = [
    (220, 60, 50),
    (40, 170, 80),
    (50, 90, 220),
    (230, 190, 40),
    (170, 60, 200),
    (40, 190, 200),
]


def make_benchmark_scripts(seed: int = 0) -> dict[str, SceneScript]:
    """Deterministic suite of test scenes keyed by name."""
    rng = np.random.default_rng(seed)
    W, H = 192, 144

    def jitter(n=4):
        return float(rng.integers(0, n + 1))

    def colour():
        return _PALETTE[int(rng.integers(len(_PALETTE)))]

    suites = {}

    # 1.5 x 0.8 px/frame stays under 5% of the shorter side (36 px)
    x0, y0 = 36 + jitter(), 34 + jitter()
    suites["slow-rigid"] = SceneScript(
        W, H, 60,
        [SceneObject(1, "rectangle", (44, 36), colour(),
                     [(0, x0, y0), (59, x0 + 59 * 1.5, y0 + 59 * 0.8)], shade=0.5)],
        seed=seed,
    )

    # square of side 40 moving 4.8 px (12%) per frame around a loop
    step = 0.12 * 40
    x0, y0 = 28 + jitter(), 28 + jitter()
    p1 = (27, x0 + 27 * step, y0)
    p2 = (37, p1[1], y0 + 10 * step)
    p3 = (59, p1[1] - 22 * step, p2[2])
    suites["fast-shift"] = SceneScript(
        W, H, 60,
        [SceneObject(1, "rectangle", (40, 40), colour(), [(0, x0, y0), p1, p2, p3], shade=0.5)],
        seed=seed,
    )

    period = 20.0
    scale_keys = [(t, 1.0 + 0.08 * math.sin(2 * math.pi * t / period)) for t in range(60)]
    x0, y0 = 70 + jitter(), 60 + jitter()
    suites["grow-shrink"] = SceneScript(
        W, H, 60,
        [SceneObject(1, "ellipse", (52, 44), colour(),
                     [(0, x0, y0), (59, x0 + 30, y0 + 12)], scale_curve=scale_keys, shade=0.5)],
        seed=seed,
    )

    c1, c2 = _PALETTE[0], _PALETTE[2]
    yc = 70 + jitter()
    suites["partial-occlusion"] = SceneScript(
        W, H, 60,
        [
            SceneObject(1, "rectangle", (56, 44), c1, [(0, 96, yc), (59, 100, yc)], depth=0, shade=0.4),
            SceneObject(2, "ellipse", (38, 38), c2, [(0, 24, yc + 4), (59, 172, yc - 2)], depth=1, shade=0.4),
        ],
        seed=seed,
    )

    same = colour()
    lanes = (32.0, 72.0, 112.0)
    suites["multi-similar"] = SceneScript(
        W, H, 60,
        [
            SceneObject(1, "rectangle", (30, 30), same, [(0, 30, lanes[0]), (59, 150, lanes[0] + 3)]),
            SceneObject(2, "rectangle", (30, 30), same, [(0, 160, lanes[1]), (59, 45, lanes[1] - 3)]),
            SceneObject(3, "rectangle", (30, 30), same, [(0, 60 + jitter(), lanes[2]), (59, 140, lanes[2])]),
        ],
        seed=seed,
    )
    return suites
