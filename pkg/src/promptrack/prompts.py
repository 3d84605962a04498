"""Box-prompt construction: jitter grids, perturbations and clamping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .raster import EMPTY_BOX, Box, Point

DEFAULT_GRID_N = 3
DEFAULT_STEP_FRAC = 0.10
DEFAULT_SCALES = (1.0, 1.05)


def round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


@dataclass(frozen=True)
class Perturbation:
    """Translation rates are fractions of the box width/height; ``s`` scales
    the box about its (translated) center."""

    tx: float = 0.0
    ty: float = 0.0
    s: float = 1.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scaling rate must be positive, got {self.s}")

    def inverse(self) -> "Perturbation":
        return Perturbation(-self.tx / self.s, -self.ty / self.s, 1.0 / self.s)


@dataclass
class BoxPromptGroup:
    members: list[Box]
    origin: Box

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


@dataclass
class PointPromptSet:
    positives: list[Point] = field(default_factory=list)
    negatives: list[Point] = field(default_factory=list)

    def __post_init__(self):
        # a coordinate cannot be both foreground and background
        pos = set(self.positives)
        self.negatives = [p for p in self.negatives if p not in pos]


def clamp_box(b: Box, bounds: tuple[int, int]) -> Box:
    """Intersect with ``[0, W) x [0, H)``; degenerate results become empty."""
    w, h = bounds
    out = Box(max(b.x0, 0), max(b.y0, 0), min(b.x1, w), min(b.y1, h))
    return EMPTY_BOX if out.is_empty else out


def _shift_scale(b: Box, dx: float, dy: float, s: float) -> Box:
    cx, cy = b.center
    cx += dx
    cy += dy
    hw = b.width * s / 2.0
    hh = b.height * s / 2.0
    return Box(
        round_half_away(cx - hw),
        round_half_away(cy - hh),
        round_half_away(cx + hw),
        round_half_away(cy + hh),
    )


def perturb_box(b: Box, p: Perturbation, bounds: tuple[int, int]) -> Box:
    if b.is_empty:
        raise ValueError("cannot perturb an empty box")
    moved = _shift_scale(b, p.tx * b.width, p.ty * b.height, p.s)
    return clamp_box(moved, bounds)


def jitter_grid(
    origin: Box,
    grid_n: int = DEFAULT_GRID_N,
    step_frac: float = DEFAULT_STEP_FRAC,
    scales: Sequence[float] = DEFAULT_SCALES,
    bounds: tuple[int, int] | None = None,
) -> BoxPromptGroup:
    """Translated and scaled copies of ``origin`` on a ``grid_n x grid_n``
    lattice.

    Ordering is scale-major, then row-major over the (dx, dy) offsets, so the
    output is reproducible. Each member is clamped to ``bounds`` (width,
    height) when given.
    """
    if origin.is_empty:
        raise ValueError("cannot jitter an empty box")
    if grid_n < 1 or grid_n % 2 == 0:
        raise ValueError(f"grid_n must be a positive odd integer, got {grid_n}")
    if step_frac < 0:
        raise ValueError("step_frac must be >= 0")
    if not scales or any(s <= 0 for s in scales):
        raise ValueError("scales must be non-empty and positive")
    half = (grid_n - 1) // 2
    offsets = range(-half, half + 1)
    members = []
    for s in scales:
        for j in offsets:
            for i in offsets:
                b = _shift_scale(
                    origin, i * step_frac * origin.width, j * step_frac * origin.height, s
                )
                members.append(clamp_box(b, bounds) if bounds is not None else b)
    return BoxPromptGroup(members=members, origin=origin)
