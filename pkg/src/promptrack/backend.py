"""Promptable-segmenter interface, plus replay/recording backends.

A backend encodes a frame once and then answers any number of box or point
queries against the encoded frame. Box queries return one mask, point
queries return three (whole / part / subpart).
"""

from __future__ import annotations

import abc
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .labelpng import read_label_png, write_label_png
from .raster import Box, Point, iou

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_handle_tokens = itertools.count(1)


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _points_str(points: Sequence[Point]) -> str:
    return ";".join(f"{int(p[0])},{int(p[1])}" for p in points)


def box_query_string(box: Box, negatives: Sequence[Point] = ()) -> str:
    return f"B:{box.x0},{box.y0},{box.x1},{box.y1}|N:{_points_str(negatives)}"


def point_query_string(positives: Sequence[Point], negatives: Sequence[Point] = ()) -> str:
    return f"P:{_points_str(positives)}|N:{_points_str(negatives)}"


def query_key(serialized: str) -> str:
    return f"{fnv1a64(serialized.encode('ascii')):016x}"


class BackendError(RuntimeError):
    pass


class CacheMiss(BackendError):
    def __init__(self, frame: int, serialized: str):
        self.frame = frame
        self.serialized = serialized
        self.key = query_key(serialized)
        super().__init__(f"replay cache miss: frame {frame}, key {self.key} ({serialized})")


@dataclass(frozen=True)
class FrameHandle:
    index: int
    width: int
    height: int
    owner: int = field(repr=False)
    token: int = field(default_factory=lambda: next(_handle_tokens), repr=False)


@dataclass
class SegmentationResult:
    masks: list[np.ndarray]
    iou_predictions: list[float]

    def __post_init__(self):
        if len(self.masks) != len(self.iou_predictions):
            raise ValueError("one iou prediction per mask is required")

    def __len__(self) -> int:
        return len(self.masks)


class Backend(abc.ABC):
    """Base class; subclasses implement the ``_``-prefixed hooks."""

    #: whether queries on existing handles may be issued from several threads
    supports_concurrent_queries = True

    def __init__(self):
        self._owner = id(self)
        self._frames: dict[int, FrameHandle] = {}

    # -- hooks -----------------------------------------------------------
    @abc.abstractmethod
    def _encode(self, image: np.ndarray, index: int) -> None: ...

    @abc.abstractmethod
    def _segment_box(self, handle: FrameHandle, box: Box, negatives: list[Point]) -> SegmentationResult: ...

    @abc.abstractmethod
    def _segment_points(
        self, handle: FrameHandle, positives: list[Point], negatives: list[Point]
    ) -> SegmentationResult: ...

    # -- public contract -------------------------------------------------
    def encode_frame(self, image: np.ndarray, index: int) -> FrameHandle:
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[0] < 1 or image.shape[1] < 1:
            raise ValueError(f"expected an HxWx3 image, got shape {image.shape}")
        self._encode(image, index)
        handle = FrameHandle(index, image.shape[1], image.shape[0], self._owner)
        self._frames[index] = handle
        return handle

    def _check(self, handle: FrameHandle) -> None:
        if handle.owner != self._owner or self._frames.get(handle.index) != handle:
            raise BackendError(f"invalid frame handle for frame {handle.index}")

    def segment_box(self, handle: FrameHandle, box: Box, negatives: Sequence[Point] = ()) -> SegmentationResult:
        self._check(handle)
        if box.is_empty:
            raise ValueError("box prompt is empty")
        res = self._segment_box(handle, box, list(negatives))
        assert len(res) == 1, "box queries must return exactly one mask"
        return res

    def segment_points(
        self, handle: FrameHandle, positives: Sequence[Point], negatives: Sequence[Point] = ()
    ) -> SegmentationResult:
        self._check(handle)
        if not positives:
            raise ValueError("point query needs at least one positive point")
        for p in positives:
            if not (0 <= p[0] < handle.width and 0 <= p[1] < handle.height):
                raise ValueError(f"positive point {tuple(p)} outside the frame")
        res = self._segment_points(handle, list(positives), list(negatives))
        assert len(res) == 3, "point queries must return exactly three masks"
        return res

    def auto_generate(
        self,
        handle: FrameHandle,
        grid_points_per_side: int = 32,
        max_masks: int = 100,
        nms_iou: float = 0.7,
    ) -> list[tuple[np.ndarray, float]]:
        """Grid of single positive points, pooled masks, greedy mask NMS."""
        self._check(handle)
        if grid_points_per_side < 1 or max_masks < 1:
            raise ValueError("grid_points_per_side and max_masks must be >= 1")
        n = grid_points_per_side
        xs = [int((i + 0.5) * handle.width / n) for i in range(n)]
        ys = [int((i + 0.5) * handle.height / n) for i in range(n)]
        pool: list[tuple[float, int, np.ndarray]] = []
        for y in ys:
            for x in xs:
                res = self.segment_points(handle, [Point(x, y)])
                for m, s in zip(res.masks, res.iou_predictions):
                    if m.any():
                        pool.append((float(s), len(pool), m))
        pool.sort(key=lambda item: (-item[0], item[1]))
        kept: list[tuple[np.ndarray, float]] = []
        for score, _, m in pool:
            if all(iou(m, k) < nms_iou for k, _ in kept):
                kept.append((m, score))
                if len(kept) == max_masks:
                    break
        return kept


class ReplayBackend(Backend):
    """Answers queries only from a recorded cache directory.

    Layout: ``manifest.json`` plus, per frame, ``<frame:05d>/<key>.json``
    holding the query string and predictions, with masks stored next to it as
    ``<key>_<i>.png``.
    """

    def __init__(self, cache_dir):
        super().__init__()
        self.cache_dir = Path(cache_dir)
        manifest = self.cache_dir / "manifest.json"
        if not manifest.is_file():
            raise FileNotFoundError(f"replay cache has no manifest: {manifest}")
        self.manifest = json.loads(manifest.read_text())
        self.frame_count = int(self.manifest["frame_count"])
        self.image_size = tuple(self.manifest["image_size"])

    def _encode(self, image, index):
        if not 0 <= index < self.frame_count:
            raise BackendError(f"frame {index} not in replay cache ({self.frame_count} frames)")
        if (image.shape[1], image.shape[0]) != self.image_size:
            raise BackendError(
                f"image size {(image.shape[1], image.shape[0])} != cached {self.image_size}"
            )

    def _lookup(self, frame: int, serialized: str) -> SegmentationResult:
        key = query_key(serialized)
        rec_path = self.cache_dir / f"{frame:05d}" / f"{key}.json"
        if not rec_path.is_file():
            raise CacheMiss(frame, serialized)
        rec = json.loads(rec_path.read_text())
        if rec["query"] != serialized:
            raise BackendError(f"hash collision in replay cache at {rec_path}")
        masks = [read_label_png(rec_path.parent / name).astype(bool) for name in rec["masks"]]
        return SegmentationResult(masks, [float(v) for v in rec["iou_predictions"]])

    def _segment_box(self, handle, box, negatives):
        return self._lookup(handle.index, box_query_string(box, negatives))

    def _segment_points(self, handle, positives, negatives):
        return self._lookup(handle.index, point_query_string(positives, negatives))


def replay_load(cache_dir) -> ReplayBackend:
    return ReplayBackend(cache_dir)


class RecordingBackend(Backend):
    """Forwards to ``inner`` and writes every answer into a replay cache."""

    def __init__(self, inner: Backend, cache_dir, provenance: str = ""):
        super().__init__()
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.provenance = provenance or type(inner).__name__
        self._inner_handles: dict[int, FrameHandle] = {}
        self._size: tuple[int, int] | None = None
        self.supports_concurrent_queries = False

    def _encode(self, image, index):
        self._inner_handles[index] = self.inner.encode_frame(image, index)
        self._size = (image.shape[1], image.shape[0])
        self._write_manifest()

    def _write_manifest(self):
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "frame_count": max(self._inner_handles) + 1,
            "image_size": list(self._size),
            "provenance": self.provenance,
        }
        (self.cache_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    def _store(self, frame: int, serialized: str, res: SegmentationResult) -> None:
        key = query_key(serialized)
        frame_dir = self.cache_dir / f"{frame:05d}"
        names = []
        for i, m in enumerate(res.masks):
            name = f"{key}_{i}.png"
            write_label_png(m.astype(np.uint8), frame_dir / name)
            names.append(name)
        rec = {
            "query": serialized,
            "iou_predictions": [float(v) for v in res.iou_predictions],
            "masks": names,
        }
        (frame_dir / f"{key}.json").write_text(json.dumps(rec, indent=2, sort_keys=True))

    def _segment_box(self, handle, box, negatives):
        res = self.inner.segment_box(self._inner_handles[handle.index], box, negatives)
        self._store(handle.index, box_query_string(box, negatives), res)
        return res

    def _segment_points(self, handle, positives, negatives):
        res = self.inner.segment_points(self._inner_handles[handle.index], positives, negatives)
        self._store(handle.index, point_query_string(positives, negatives), res)
        return res


def check_replay_cache(cache_dir) -> list[str]:
    """Return a list of problems found in a replay cache (empty when valid)."""
    cache_dir = Path(cache_dir)
    problems = []
    manifest_path = cache_dir / "manifest.json"
    if not manifest_path.is_file():
        return [f"missing manifest: {manifest_path}"]
    try:
        manifest = json.loads(manifest_path.read_text())
        frame_count = int(manifest["frame_count"])
        width, height = (int(v) for v in manifest["image_size"])
        manifest["provenance"]
    except (ValueError, KeyError, TypeError) as exc:
        return [f"malformed manifest: {exc!r}"]
    for rec_path in sorted(cache_dir.glob("*/*.json")):
        rel = rec_path.relative_to(cache_dir)
        try:
            frame = int(rec_path.parent.name)
            rec = json.loads(rec_path.read_text())
        except ValueError as exc:
            problems.append(f"{rel}: unreadable record ({exc})")
            continue
        if not 0 <= frame < frame_count:
            problems.append(f"{rel}: frame {frame} outside manifest frame_count {frame_count}")
        query = rec.get("query", "")
        if query_key(query) != rec_path.stem:
            problems.append(f"{rel}: key does not match hash of query {query!r}")
        masks = rec.get("masks", [])
        preds = rec.get("iou_predictions", [])
        expected = 1 if query.startswith("B:") else 3
        if len(masks) != expected or len(preds) != expected:
            problems.append(f"{rel}: expected {expected} masks/predictions, got {len(masks)}/{len(preds)}")
        for name in masks:
            p = rec_path.parent / name
            if not p.is_file():
                problems.append(f"{rel}: missing mask file {name}")
                continue
            try:
                m = read_label_png(p)
            except ValueError as exc:
                problems.append(f"{rel}: {exc}")
                continue
            if m.shape != (height, width):
                problems.append(f"{rel}: mask {name} has shape {m.shape}, expected {(height, width)}")
        if any(not 0.0 <= float(v) <= 1.0 for v in preds):
            problems.append(f"{rel}: iou prediction outside [0, 1]")
    return problems
