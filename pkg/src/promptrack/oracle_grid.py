"""Oracle perturbation experiment.

No tracking: every frame's ground-truth box is perturbed by a fixed
(translation rate, scaling rate) cell and fed to the coarse stage, either
as a single prompt or as the reduced multi-prompt group. Each cell reports
the mean J&F over every (frame, object) pair.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import features
from .backend import Backend
from .config import MULTIPROMPT_GRID_N, MULTIPROMPT_SCALES, MULTIPROMPT_STEP, ORACLE_SCALES, ORACLE_TRANSLATIONS
from .metrics import boundary_f, region_j
from .prompts import Perturbation, perturb_box
from .raster import bbox
from .tracker import TrackerConfig, coarse_stage


@dataclass
class OracleSequence:
    name: str
    frames: Sequence[np.ndarray]
    labels: Sequence[np.ndarray]  # ground truth for every frame

    def __post_init__(self):
        if len(self.frames) != len(self.labels):
            raise ValueError(f"{self.name}: {len(self.frames)} frames vs {len(self.labels)} label maps")
        if any(lab is None for lab in self.labels):
            raise ValueError(f"{self.name}: ground truth is required for every frame")


def _templates(seq: OracleSequence, stride: int) -> dict[int, features.TemplateEmbedding]:
    out = {}
    for t, labels in enumerate(seq.labels):
        for obj_id in np.unique(labels):
            obj_id = int(obj_id)
            if obj_id == 0 or obj_id in out:
                continue
            mask = labels == obj_id
            grid = features.encode(seq.frames[t], stride)
            out[obj_id] = features.extract_template(grid, bbox(mask), mask)
    return out


def run_oracle_grid(
    sequences: Sequence[OracleSequence],
    backend_for: Callable[[OracleSequence], Backend],
    translation_rates: Sequence[float] = ORACLE_TRANSLATIONS,
    scaling_rates: Sequence[float] = ORACLE_SCALES,
    multiprompt: bool = False,
    config: TrackerConfig | None = None,
    mp_grid_n: int = MULTIPROMPT_GRID_N,
    mp_step: float = MULTIPROMPT_STEP,
    mp_scales: Sequence[float] = MULTIPROMPT_SCALES,
) -> dict[tuple[float, float], float]:
    """Mean J&F for every ``(tx, s)`` cell.

    The translation rate moves the box by ``tx`` of its width and ``tx`` of
    its height at once. No negative points are used.
    """
    base = config or TrackerConfig()
    if multiprompt:
        cfg = dataclasses.replace(
            base, enable_multiprompt=True, grid_n=mp_grid_n, step_frac=mp_step, scales=tuple(mp_scales)
        )
    else:
        cfg = dataclasses.replace(base, enable_multiprompt=False)

    sums = {(float(tx), float(s)): [0.0, 0] for s in scaling_rates for tx in translation_rates}
    for seq in sequences:
        backend = backend_for(seq)
        handles = [backend.encode_frame(img, t) for t, img in enumerate(seq.frames)]
        grids = templates = None
        if multiprompt:
            grids = [features.encode(img, cfg.feature_stride) for img in seq.frames]
            templates = _templates(seq, cfg.feature_stride)
        for t, labels in enumerate(seq.labels):
            h, w = labels.shape
            for obj_id in (int(i) for i in np.unique(labels) if i != 0):
                gt = labels == obj_id
                gt_box = bbox(gt)
                for (tx, s), acc in sums.items():
                    prompt = perturb_box(gt_box, Perturbation(tx, tx, s), (w, h))
                    c = coarse_stage(
                        backend,
                        handles[t],
                        grids[t] if grids else None,
                        prompt,
                        templates.get(obj_id) if templates else None,
                        cfg,
                    )
                    pred = c.mask if c is not None else np.zeros_like(gt)
                    acc[0] += (region_j(pred, gt) + boundary_f(pred, gt)) / 2
                    acc[1] += 1
    return {k: (v[0] / v[1] if v[1] else float("nan")) for k, v in sums.items()}
