"""Box-propagation tracker.

Every frame, each object's previous bounding box is re-issued as a prompt.
Optionally the box is expanded into a jittered/scaled group whose answers are
ranked against a frozen template (or against the previous mask), and the
winning coarse mask is refined by a point query at its most interior pixel,
with other objects' points as negatives.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import features
from .backend import Backend, FrameHandle
from .prompts import clamp_box, jitter_grid
from .raster import EMPTY_BOX, Box, Point, area, bbox, farthest_interior_point, iou, merge_masks


class Status(str, enum.Enum):
    ACTIVE = "active"
    LOST = "lost"
    PENDING = "pending-first-frame"


SELECTION_MODES = ("semantic", "iou_prev")
REFINE_MODES = ("max_area", "max_iou_prev")


@dataclass
class TrackerConfig:
    grid_n: int = 3
    step_frac: float = 0.10
    scales: tuple[float, ...] = (1.0, 1.05)
    selection_mode: str = "semantic"
    refine_mode: str = "max_area"
    use_neg_in_multiprompt: bool = True
    use_neg_in_refine: bool = True
    enable_multiprompt: bool = True
    enable_refine: bool = True
    feature_stride: int = 16
    vis_grid_points: int = 32
    vis_max_masks: int = 100
    vis_nms_iou: float = 0.7
    workers: int = 1

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise ValueError(f"{name}: {why}")

        if not isinstance(self.grid_n, int) or self.grid_n < 1 or self.grid_n % 2 == 0:
            bad("grid_n", f"must be a positive odd integer, got {self.grid_n!r}")
        if not 0.0 <= self.step_frac <= 1.0:
            bad("step_frac", f"must lie in [0, 1], got {self.step_frac!r}")
        if not self.scales or any(not s > 0 for s in self.scales):
            bad("scales", f"must be non-empty and positive, got {self.scales!r}")
        if self.selection_mode not in SELECTION_MODES:
            bad("selection_mode", f"must be one of {SELECTION_MODES}, got {self.selection_mode!r}")
        if self.refine_mode not in REFINE_MODES:
            bad("refine_mode", f"must be one of {REFINE_MODES}, got {self.refine_mode!r}")
        if self.feature_stride < 1:
            bad("feature_stride", "must be >= 1")
        if self.vis_grid_points < 1:
            bad("vis_grid_points", "must be >= 1")
        if self.vis_max_masks < 1:
            bad("vis_max_masks", "must be >= 1")
        if not 0.0 <= self.vis_nms_iou <= 1.0:
            bad("vis_nms_iou", "must lie in [0, 1]")
        if self.workers < 1:
            bad("workers", "must be >= 1")


@dataclass
class Diagnostics:
    semantic_score: float = math.nan
    area_normalized_score: float = math.nan
    iou_prediction: float = math.nan


@dataclass
class ObjectState:
    id: int
    status: Status
    first_frame: int
    initial_mask: np.ndarray
    last_mask: np.ndarray
    last_box: Box = EMPTY_BOX
    template: features.TemplateEmbedding | None = None
    last_score: float = 1.0
    diagnostics: dict[int, Diagnostics] = field(default_factory=dict)


@dataclass
class TrackerState:
    objects: dict[int, ObjectState]
    shape: tuple[int, int]  # (H, W)
    last_frame: int = -1

    def active_ids(self) -> list[int]:
        return sorted(i for i, o in self.objects.items() if o.status == Status.ACTIVE)


@dataclass
class FrameOutput:
    index: int
    label_map: np.ndarray
    masks: dict[int, np.ndarray]
    iou_predictions: dict[int, float]
    diagnostics: dict[int, Diagnostics]


def resolve_overlaps(
    masks: dict[int, np.ndarray], iou_predictions: dict[int, float], shape: tuple[int, int] | None = None
) -> np.ndarray:
    ids = sorted(masks)
    return merge_masks(
        [(i, masks[i]) for i in ids], [iou_predictions[i] for i in ids], shape=shape
    )


def _template(grid: features.FeatureGrid, mask: np.ndarray) -> features.TemplateEmbedding | None:
    b = bbox(mask)
    if b.is_empty:
        return None
    return features.extract_template(grid, b, mask)


def init_from_masks(
    first_frame_image: np.ndarray,
    objects: Sequence[tuple[int, np.ndarray, int]],
    config: TrackerConfig,
    start_frame: int = 0,
) -> TrackerState:
    """Set up tracks from annotated masks ``(id, mask, first_frame)``.

    Objects whose first frame is later than ``start_frame`` stay pending and
    take their template when that frame is tracked.
    """
    ids = [int(i) for i, _, _ in objects]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate object ids: {ids}")
    image = np.asarray(first_frame_image)
    shape = image.shape[:2]
    grid = features.encode(image, config.feature_stride)
    state = TrackerState({}, shape, last_frame=start_frame)
    for obj_id, mask, first in objects:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != shape:
            raise ValueError(f"object {obj_id}: mask shape {mask.shape} != frame shape {shape}")
        if not mask.any():
            raise ValueError(f"object {obj_id}: initial mask is empty")
        obj = ObjectState(int(obj_id), Status.PENDING, int(first), mask, np.zeros(shape, bool))
        if first <= start_frame:
            _activate(obj, grid)
        state.objects[obj.id] = obj
    return state


def _activate(obj: ObjectState, grid: features.FeatureGrid) -> None:
    obj.status = Status.ACTIVE
    obj.last_mask = obj.initial_mask.copy()
    obj.last_box = bbox(obj.initial_mask)
    obj.template = _template(grid, obj.initial_mask)
    obj.last_score = 1.0


def init_automatic(
    first_frame_image: np.ndarray, backend: Backend, config: TrackerConfig, index: int = 0
) -> tuple[TrackerState, FrameOutput]:
    """Seed trajectories from automatic mask generation on the first frame.

    Returns the state and the first frame's output; no trajectories are born
    afterwards.
    """
    image = np.asarray(first_frame_image)
    handle = backend.encode_frame(image, index)
    proposals = backend.auto_generate(
        handle, config.vis_grid_points, config.vis_max_masks, config.vis_nms_iou
    )
    grid = features.encode(image, config.feature_stride)
    state = TrackerState({}, image.shape[:2], last_frame=index)
    masks, scores, diags = {}, {}, {}
    for k, (mask, score) in enumerate(proposals, start=1):
        obj = ObjectState(k, Status.PENDING, index, mask.copy(), np.zeros(image.shape[:2], bool))
        _activate(obj, grid)
        obj.last_score = float(score)
        state.objects[k] = obj
        masks[k] = mask.copy()
        scores[k] = float(score)
        diags[k] = Diagnostics(iou_prediction=float(score))
        obj.diagnostics[index] = diags[k]
    label_map = resolve_overlaps(masks, scores, shape=image.shape[:2])
    return state, FrameOutput(index, label_map, masks, scores, diags)


def first_frame_output(state: TrackerState, index: int = 0) -> FrameOutput:
    """Echo of the annotated masks for objects starting at ``index``."""
    masks, scores, diags = {}, {}, {}
    for obj_id in sorted(state.objects):
        obj = state.objects[obj_id]
        if obj.first_frame == index:
            masks[obj_id] = obj.initial_mask.copy()
            scores[obj_id] = math.inf
            diags[obj_id] = Diagnostics(1.0, math.nan, 1.0)
            obj.diagnostics[index] = diags[obj_id]
        else:
            masks[obj_id] = np.zeros(state.shape, dtype=bool)
            scores[obj_id] = 0.0
            diags[obj_id] = Diagnostics()
    return FrameOutput(index, resolve_overlaps(masks, scores, shape=state.shape), masks, scores, diags)


@dataclass
class _Coarse:
    mask: np.ndarray
    iou_prediction: float
    diag: Diagnostics


def coarse_stage(
    backend: Backend,
    handle: FrameHandle,
    grid: features.FeatureGrid,
    origin: Box,
    template: features.TemplateEmbedding | None,
    config: TrackerConfig,
    negatives: Sequence[Point] = (),
    last_mask: np.ndarray | None = None,
    pool: ThreadPoolExecutor | None = None,
) -> _Coarse | None:
    """Query the box prompt group around ``origin`` and keep one answer.

    Returns None when every answer is empty.
    """
    if origin.is_empty:
        return None
    bounds = (handle.width, handle.height)
    if config.enable_multiprompt:
        group = jitter_grid(origin, config.grid_n, config.step_frac, config.scales, bounds).members
    else:
        group = [clamp_box(origin, bounds)]
    boxes = [b for b in group if not b.is_empty]
    if not boxes:
        return None

    def query(b):
        return backend.segment_box(handle, b, list(negatives))

    if pool is not None and backend.supports_concurrent_queries:
        results = list(pool.map(query, boxes))
    else:
        results = [query(b) for b in boxes]

    candidates = [(r.masks[0], r.iou_predictions[0]) for r in results if r.masks[0].any()]
    if not candidates:
        return None

    use_template = template is not None and not template.degenerate
    sem = [None] * len(candidates)
    if config.selection_mode == "semantic" and use_template:
        sem = [features.crop_similarity(template, grid, bbox(m), m) for m, _ in candidates]
        scores = [s.score for s in sem]
    elif config.selection_mode == "semantic":
        # no usable template: fall back to the predicted IoU
        scores = [p for _, p in candidates]
    else:
        ref = last_mask if last_mask is not None else np.zeros(candidates[0][0].shape, bool)
        scores = [iou(m, ref) for m, _ in candidates]
    best = int(np.argmax(scores))  # first maximum wins ties
    mask, pred = candidates[best]
    s = sem[best]
    if s is None and use_template:
        s = features.crop_similarity(template, grid, bbox(mask), mask)
    diag = Diagnostics(
        semantic_score=s.score if s is not None else math.nan,
        area_normalized_score=s.area_normalized if s is not None else math.nan,
        iou_prediction=pred,
    )
    return _Coarse(mask, pred, diag)


def _refine(
    obj: ObjectState,
    coarse: _Coarse,
    positive: Point,
    negatives: list[Point],
    handle: FrameHandle,
    backend: Backend,
    config: TrackerConfig,
) -> tuple[np.ndarray, float]:
    res = backend.segment_points(handle, [positive], negatives)
    if not any(m.any() for m in res.masks):
        # every hypothesis excluded; keep the coarse answer
        return coarse.mask, coarse.iou_prediction
    if config.refine_mode == "max_area":
        scores = [area(m) for m in res.masks]
    else:
        scores = [iou(m, obj.last_mask) if m.any() else -1.0 for m in res.masks]
    k = int(np.argmax(scores))
    return res.masks[k], res.iou_predictions[k]


def _outside(points: Iterable[Point], mask: np.ndarray) -> list[Point]:
    return [p for p in points if not mask[p.y, p.x]]


def track_step(
    state: TrackerState,
    image: np.ndarray,
    index: int,
    backend: Backend,
    config: TrackerConfig,
) -> FrameOutput:
    if index <= state.last_frame:
        raise ValueError(f"frame index {index} is not after the last tracked frame {state.last_frame}")
    image = np.asarray(image)
    if image.shape[:2] != state.shape:
        raise ValueError(f"frame {index}: image shape {image.shape[:2]} != {state.shape}")
    handle = backend.encode_frame(image, index)
    grid = features.encode(image, config.feature_stride)

    fresh = []
    for obj_id in sorted(state.objects):
        obj = state.objects[obj_id]
        if obj.status == Status.PENDING and obj.first_frame <= index:
            _activate(obj, grid)
            fresh.append(obj_id)
    tracked = [
        i for i in sorted(state.objects)
        if state.objects[i].status in (Status.ACTIVE, Status.LOST) and i not in fresh
    ]

    # points from the previous frame's masks (frozen before any update)
    prev_points: dict[int, Point] = {}
    for i in tracked + fresh:
        m = state.objects[i].last_mask
        if state.objects[i].status == Status.ACTIVE and m.any():
            prev_points[i] = farthest_interior_point(m)

    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        coarse: dict[int, _Coarse | None] = {}
        for i in tracked:
            obj = state.objects[i]
            negs: list[Point] = []
            if config.use_neg_in_multiprompt:
                negs = _outside((p for j, p in prev_points.items() if j != i), obj.last_mask)
            coarse[i] = coarse_stage(
                backend, handle, grid, obj.last_box, obj.template, config, negs, obj.last_mask, pool
            )
    finally:
        if pool is not None:
            pool.shutdown()

    masks: dict[int, np.ndarray] = {}
    preds: dict[int, float] = {}
    diags: dict[int, Diagnostics] = {}
    for i in fresh:
        masks[i] = state.objects[i].initial_mask.copy()
        preds[i] = math.inf
        diags[i] = Diagnostics(1.0, math.nan, 1.0)

    positives = {i: farthest_interior_point(c.mask) for i, c in coarse.items() if c is not None}
    positives.update({i: farthest_interior_point(masks[i]) for i in fresh})
    for i in tracked:
        c = coarse[i]
        if c is None:
            masks[i] = np.zeros(state.shape, dtype=bool)
            preds[i] = 0.0
            diags[i] = Diagnostics()
            continue
        mask, pred = c.mask, c.iou_prediction
        if config.enable_refine:
            negs = []
            if config.use_neg_in_refine:
                negs = _outside((p for j, p in positives.items() if j != i), c.mask)
            mask, pred = _refine(state.objects[i], c, positives[i], negs, handle, backend, config)
        masks[i] = mask
        preds[i] = float(pred)
        c.diag.iou_prediction = float(pred)
        diags[i] = c.diag

    # pending objects still waiting for their first frame
    for i, obj in state.objects.items():
        if i not in masks:
            masks[i] = np.zeros(state.shape, dtype=bool)
            preds[i] = 0.0
            diags[i] = Diagnostics()

    label_map = resolve_overlaps(masks, preds, shape=state.shape)

    for i in tracked + fresh:
        obj = state.objects[i]
        m = masks[i]
        obj.diagnostics[index] = diags[i]
        if m.any():
            obj.status = Status.ACTIVE
            obj.last_mask = m
            obj.last_box = bbox(m)
            obj.last_score = preds[i]
        else:
            # keep the old box as the next prompt so the object can be re-acquired
            obj.status = Status.LOST
            obj.last_mask = m
    state.last_frame = index
    return FrameOutput(index, label_map, masks, preds, diags)


def run_sequence(
    frames: Sequence[np.ndarray],
    backend: Backend,
    config: TrackerConfig,
    objects: Sequence[tuple[int, np.ndarray, int]] | None = None,
    automatic: bool = False,
) -> list[FrameOutput]:
    """Track through ``frames``: VOS mode with annotated ``objects`` or VIS
    mode with ``automatic=True``."""
    if len(frames) < 1:
        raise ValueError("need at least one frame")
    if automatic:
        state, first = init_automatic(frames[0], backend, config)
    else:
        if objects is None:
            raise ValueError("objects are required unless automatic=True")
        state = init_from_masks(frames[0], objects, config)
        first = first_frame_output(state, 0)
    outputs = [first]
    for t in range(1, len(frames)):
        outputs.append(track_step(state, frames[t], t, backend, config))
    return outputs


def heatmap_peaks(
    state: TrackerState, image: np.ndarray, config: TrackerConfig
) -> dict[int, tuple[int, int, float]]:
    """Peak of the template correlation heatmap for each object, as
    ``(cell_x, cell_y, score)``. Diagnostic only; not used for prompting."""
    grid = features.encode(np.asarray(image), config.feature_stride)
    out = {}
    for i, obj in sorted(state.objects.items()):
        t = obj.template
        if t is None or t.degenerate or t.th > grid.gh or t.tw > grid.gw:
            continue
        h = features.heatmap_correlate(t, grid)
        y, x = divmod(int(np.argmax(h)), h.shape[1])
        out[i] = (x, y, float(h[y, x]))
    return out
