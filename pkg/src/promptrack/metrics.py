"""VOS (J, F, J&F, seen/unseen) and VIS (spatio-temporal IoU, AR, AP) metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .raster import boundary_pixels, dilate, iou

DEFAULT_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
SMALL_AREA = 32 ** 2
MEDIUM_AREA = 96 ** 2


def region_j(pred: np.ndarray, gt: np.ndarray) -> float:
    return float(iou(np.asarray(pred, bool), np.asarray(gt, bool)))


def boundary_f(pred: np.ndarray, gt: np.ndarray, tolerance_frac: float = 0.008) -> float:
    """Boundary F-measure with matching radius ``tolerance_frac`` times the
    image diagonal."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask dimensions differ: {pred.shape} vs {gt.shape}")
    if tolerance_frac < 0:
        raise ValueError("tolerance_frac must be >= 0")
    h, w = gt.shape
    r = tolerance_frac * math.hypot(h, w)
    pb = boundary_pixels(pred)
    gb = boundary_pixels(gt)
    n_p, n_g = int(pb.sum()), int(gb.sum())
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    precision = np.count_nonzero(pb & dilate(gb, r)) / n_p
    recall = np.count_nonzero(gb & dilate(pb, r)) / n_g
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class SequenceEval:
    """Per-object, per-frame J and F over the counted frames."""

    j: dict[int, dict[int, float]] = field(default_factory=dict)
    f: dict[int, dict[int, float]] = field(default_factory=dict)

    def object_scores(self) -> dict[int, tuple[float, float]]:
        out = {}
        for obj_id in sorted(self.j):
            if self.j[obj_id]:
                out[obj_id] = (
                    float(np.mean(list(self.j[obj_id].values()))),
                    float(np.mean(list(self.f[obj_id].values()))),
                )
        return out

    @property
    def J(self) -> float:
        s = self.object_scores()
        return float(np.mean([v[0] for v in s.values()])) if s else math.nan

    @property
    def F(self) -> float:
        s = self.object_scores()
        return float(np.mean([v[1] for v in s.values()])) if s else math.nan

    @property
    def JF(self) -> float:
        return (self.J + self.F) / 2


def sequence_scores(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray | None],
    first_frames: Mapping[int, int],
    tolerance_frac: float = 0.008,
) -> SequenceEval:
    """Score label-map predictions against label-map ground truth.

    For each object, frames strictly after its first (annotation) frame up to
    the last annotated frame are counted. ``gts`` may hold ``None`` for frames
    without annotation; such a frame inside a counted range is an error.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predicted frames vs {len(gts)} ground-truth frames")
    annotated = [t for t, g in enumerate(gts) if g is not None]
    last = annotated[-1] if annotated else -1
    ev = SequenceEval()
    for obj_id, first in sorted(first_frames.items()):
        ev.j[obj_id] = {}
        ev.f[obj_id] = {}
        for t in range(first + 1, last + 1):
            if gts[t] is None:
                raise ValueError(f"object {obj_id}: no ground truth for counted frame {t}")
            p = np.asarray(preds[t]) == obj_id
            g = np.asarray(gts[t]) == obj_id
            ev.j[obj_id][t] = region_j(p, g)
            ev.f[obj_id][t] = boundary_f(p, g, tolerance_frac)
    return ev


@dataclass
class SplitScores:
    G: float
    J_seen: float | None
    F_seen: float | None
    J_unseen: float | None
    F_unseen: float | None


def seen_unseen_split(
    object_scores: Mapping[int, tuple[float, float]],
    categories: Mapping[int, str],
    seen: set[str] | frozenset[str],
) -> SplitScores:
    """Seen/unseen means; ``G`` averages whichever of the four are present."""
    if not object_scores:
        raise ValueError("no objects to aggregate")
    groups: dict[bool, list[tuple[float, float]]] = {True: [], False: []}
    for obj_id, jf in object_scores.items():
        if obj_id not in categories:
            raise KeyError(f"object {obj_id} has no category")
        groups[categories[obj_id] in seen].append(jf)

    def means(rows):
        if not rows:
            return None, None
        return float(np.mean([r[0] for r in rows])), float(np.mean([r[1] for r in rows]))

    js, fs = means(groups[True])
    ju, fu = means(groups[False])
    present = [v for v in (js, fs, ju, fu) if v is not None]
    return SplitScores(float(np.mean(present)), js, fs, ju, fu)


@dataclass
class TrackPrediction:
    id: int
    score: float
    masks: list[np.ndarray]


def st_iou(pred_masks: Sequence[np.ndarray], gt_masks: Sequence[np.ndarray]) -> float:
    """Summed intersection over summed union across all frames."""
    if len(pred_masks) != len(gt_masks):
        raise ValueError(f"track lengths differ: {len(pred_masks)} vs {len(gt_masks)}")
    inter = union = 0
    for p, g in zip(pred_masks, gt_masks):
        p = np.asarray(p, dtype=bool)
        g = np.asarray(g, dtype=bool)
        if p.shape != g.shape:
            raise ValueError(f"mask dimensions differ: {p.shape} vs {g.shape}")
        inter += np.count_nonzero(p & g)
        union += np.count_nonzero(p | g)
    return 1.0 if union == 0 else inter / union


def _ranked(preds: Sequence[TrackPrediction]) -> list[TrackPrediction]:
    # stable: equal scores keep input order
    return sorted(preds, key=lambda p: -p.score)


def _iou_matrix(preds: Sequence[TrackPrediction], gts: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    for a, p in enumerate(preds):
        for b, g in enumerate(gts):
            out[a, b] = st_iou(p.masks, g)
    return out


def greedy_match(ious: np.ndarray, threshold: float) -> list[int]:
    """For predictions in row order, the matched gt column or -1.

    Each prediction takes the unmatched gt with the highest IoU at or above
    ``threshold``; ties go to the lower column.
    """
    n_pred, n_gt = ious.shape
    taken = np.zeros(n_gt, dtype=bool)
    out = []
    for a in range(n_pred):
        cand = np.where(~taken & (ious[a] >= threshold), ious[a], -1.0)
        b = int(np.argmax(cand)) if n_gt else -1
        if n_gt and cand[b] >= 0:
            taken[b] = True
            out.append(b)
        else:
            out.append(-1)
    return out


@dataclass
class RecallResult:
    AR: float
    AR_small: float | None
    AR_medium: float | None
    AR_large: float | None


def _recall(ious: np.ndarray, thresholds) -> float:
    if ious.shape[1] == 0:
        return math.nan
    return float(np.mean([
        sum(b >= 0 for b in greedy_match(ious, t)) / ious.shape[1] for t in thresholds
    ]))


def average_recall(
    preds: Sequence[TrackPrediction],
    gts: Sequence[Sequence[np.ndarray]],
    k: int = 100,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> RecallResult:
    """Mean recall over IoU thresholds with at most ``k`` top-scored
    predictions, plus the same restricted to small/medium/large tracks
    (mean per-frame area)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    top = _ranked(preds)[:k]
    ious = _iou_matrix(top, gts)
    overall = _recall(ious, thresholds)
    areas = [float(np.mean([np.count_nonzero(m) for m in g])) if len(g) else 0.0 for g in gts]
    splits = []
    for lo, hi in ((0, SMALL_AREA), (SMALL_AREA, MEDIUM_AREA), (MEDIUM_AREA, math.inf)):
        cols = [b for b, a in enumerate(areas) if lo <= a < hi]
        splits.append(_recall(ious[:, cols], thresholds) if cols else None)
    return RecallResult(overall, *splits)


def interpolated_ap(tp: Sequence[bool], n_gt: int, n_points: int = 101) -> float:
    """Area under the precision envelope sampled at ``n_points`` recall levels."""
    if n_gt == 0:
        return math.nan
    tp = np.asarray(tp, dtype=bool)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # i / (n - 1) is correctly rounded, so it equals k / n_gt exactly when it should
    levels = np.arange(n_points) / (n_points - 1)
    idx = np.searchsorted(recall, levels, side="left")
    vals = np.where(idx < tp.size, envelope[np.minimum(idx, tp.size - 1)], 0.0)
    return float(vals.mean())


def average_precision(
    preds: Sequence[TrackPrediction],
    gts: Sequence[Sequence[np.ndarray]],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> float:
    ranked = _ranked(preds)
    ious = _iou_matrix(ranked, gts)
    if len(gts) == 0:
        return math.nan
    aps = [interpolated_ap([b >= 0 for b in greedy_match(ious, t)], len(gts)) for t in thresholds]
    return float(np.mean(aps))
