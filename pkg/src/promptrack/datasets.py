"""Sequence ingestion and result/report writing.

Supported layouts under a dataset root::

    davis                 JPEGImages/480p/<seq>/00000.jpg
                          Annotations/480p/<seq>/00000.png
                          ImageSets/2017/val.txt
    ytvos                 JPEGImages/<seq>/*.jpg
                          Annotations/<seq>/*.png
                          meta.json  {"videos": {seq: {"objects": {id: {"category", "frames"}}}}}
    exported-synthetic    the davis layout (lossless PNG frames) plus Scripts/<seq>.toml
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import tomli_w
from PIL import Image

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .labelpng import read_label_png, write_label_png
from .synthetic import SceneScript, render_frame

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


class DatasetError(ValueError):
    """Missing or malformed dataset content."""


@dataclass
class SequenceSpec:
    name: str
    frame_paths: list[Path]
    annotation_paths: dict[int, Path]  # frame index -> label PNG
    first_frames: dict[int, int]  # object id -> first annotated frame
    image_size: tuple[int, int]  # (W, H)
    categories: dict[int, str] | None = None
    script_path: Path | None = None

    def __post_init__(self):
        if not self.frame_paths:
            raise DatasetError(f"{self.name}: no frames")

    @property
    def frame_count(self) -> int:
        return len(self.frame_paths)


def _images(folder: Path, suffixes=IMAGE_SUFFIXES) -> list[Path]:
    if not folder.is_dir():
        raise DatasetError(f"missing directory {folder}")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in suffixes)


def _image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as im:
        return im.size


def _annotations_by_frame(frames: list[Path], ann_dir: Path) -> dict[int, Path]:
    index = {p.stem: t for t, p in enumerate(frames)}
    out = {}
    for p in _images(ann_dir, (".png",)):
        if p.stem not in index:
            raise DatasetError(f"annotation {p} has no matching frame")
        out[index[p.stem]] = p
    return out


def _davis_like(root: Path, name: str) -> SequenceSpec:
    frames = _images(root / "JPEGImages" / "480p" / name)
    if not frames:
        raise DatasetError(f"{name}: no frames under {root / 'JPEGImages' / '480p' / name}")
    anns = _annotations_by_frame(frames, root / "Annotations" / "480p" / name)
    if 0 not in anns:
        raise DatasetError(f"{name}: missing annotation for frame 0")
    first = {}
    for t in sorted(anns):
        for obj_id in np.unique(read_label_png(anns[t])):
            if obj_id != 0:
                first.setdefault(int(obj_id), t)
    return SequenceSpec(name, frames, anns, first, _image_size(frames[0]))


def _ytvos(root: Path, name: str) -> SequenceSpec:
    meta_path = root / "meta.json"
    try:
        meta = json.loads(meta_path.read_text())
        objects = meta["videos"][name]["objects"]
    except FileNotFoundError:
        raise DatasetError(f"missing metadata file {meta_path}") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"{meta_path}: malformed metadata for {name!r} ({exc})") from None
    frames = _images(root / "JPEGImages" / name)
    if not frames:
        raise DatasetError(f"{name}: no frames")
    anns = _annotations_by_frame(frames, root / "Annotations" / name)
    stems = {p.stem: t for t, p in enumerate(frames)}
    first, cats = {}, {}
    for key, info in objects.items():
        try:
            obj_id = int(key)
            listed = info["frames"]
            cats[obj_id] = str(info.get("category", ""))
        except (ValueError, KeyError, TypeError):
            raise DatasetError(f"{meta_path}: malformed entry for object {key!r}") from None
        if not listed:
            raise DatasetError(f"object {obj_id}: no frames listed")
        stem = str(listed[0])
        if stem not in stems:
            raise DatasetError(f"object {obj_id}: first frame {stem!r} not found")
        t = stems[stem]
        if t not in anns:
            raise DatasetError(f"object {obj_id}: missing annotation for first frame {stem!r}")
        if not np.any(read_label_png(anns[t]) == obj_id):
            raise DatasetError(f"object {obj_id}: absent from its first-frame annotation {stem!r}")
        first[obj_id] = t
    return SequenceSpec(name, frames, anns, first, _image_size(frames[0]), categories=cats)


def load_sequence(root, kind: str, name: str) -> SequenceSpec:
    root = Path(root)
    if kind == "davis":
        return _davis_like(root, name)
    if kind == "exported-synthetic":
        spec = _davis_like(root, name)
        script = root / "Scripts" / f"{name}.toml"
        if not script.is_file():
            raise DatasetError(f"{name}: missing scene script {script}")
        spec.script_path = script
        return spec
    if kind == "ytvos":
        return _ytvos(root, name)
    raise DatasetError(f"unknown dataset kind {kind!r}")


def list_sequences(root, kind: str) -> list[str]:
    root = Path(root)
    if kind == "ytvos":
        meta = json.loads((root / "meta.json").read_text())
        return sorted(meta["videos"])
    listing = root / "ImageSets" / "2017" / "val.txt"
    if listing.is_file():
        return [ln.strip() for ln in listing.read_text().splitlines() if ln.strip()]
    return sorted(p.name for p in (root / "JPEGImages" / "480p").iterdir() if p.is_dir())


def load_frames(spec: SequenceSpec) -> list[np.ndarray]:
    out = []
    for p in spec.frame_paths:
        with Image.open(p) as im:
            out.append(np.asarray(im.convert("RGB")))
    return out


def load_annotations(spec: SequenceSpec) -> list[np.ndarray | None]:
    return [
        read_label_png(spec.annotation_paths[t]) if t in spec.annotation_paths else None
        for t in range(spec.frame_count)
    ]


def initial_objects(spec: SequenceSpec) -> list[tuple[int, np.ndarray, int]]:
    """``(id, mask, first_frame)`` for every object, read from its first
    annotated frame."""
    out = []
    for obj_id, t in sorted(spec.first_frames.items()):
        mask = read_label_png(spec.annotation_paths[t]) == obj_id
        if not mask.any():
            raise DatasetError(f"object {obj_id}: empty mask at its first frame {t}")
        out.append((obj_id, mask, t))
    return out


# scene scripts


def save_script(script: SceneScript, path) -> None:
    Path(path).write_text(tomli_w.dumps(script.to_dict()))


def load_script(path) -> SceneScript:
    try:
        return SceneScript.from_dict(tomllib.loads(Path(path).read_text()))
    except (tomllib.TOMLDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"{path}: malformed scene script ({exc})") from None


def write_rgb_png(image: np.ndarray, path) -> None:
    # fixed settings keep the bytes reproducible
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(path, format="PNG", compress_level=6)


def export_sequence(script: SceneScript, root, name: str) -> SequenceSpec:
    """Render ``script`` into the exported-synthetic layout under ``root``."""
    root = Path(root)
    img_dir = root / "JPEGImages" / "480p" / name
    ann_dir = root / "Annotations" / "480p" / name
    for d in (img_dir, ann_dir, root / "ImageSets" / "2017", root / "Scripts"):
        d.mkdir(parents=True, exist_ok=True)
    for t in range(script.duration):
        rgb, labels = render_frame(script, t)
        write_rgb_png(rgb, img_dir / f"{t:05d}.png")
        write_label_png(labels, ann_dir / f"{t:05d}.png")
    save_script(script, root / "Scripts" / f"{name}.toml")
    listing = root / "ImageSets" / "2017" / "val.txt"
    names = set(listing.read_text().split()) if listing.is_file() else set()
    names.add(name)
    listing.write_text("".join(f"{n}\n" for n in sorted(names)))
    return load_sequence(root, "exported-synthetic", name)


# reports


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_label_maps(label_maps: Sequence[np.ndarray], out_dir, names: Sequence[str] | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, lm in enumerate(label_maps):
        stem = names[t] if names is not None else f"{t:05d}"
        write_label_png(lm, out_dir / f"{stem}.png")


def write_diagnostics(path, outputs) -> None:
    """One row per (frame, object): semantic score, area-normalised score and
    predicted IoU of the selected mask."""
    rows = []
    for out in outputs:
        for obj_id in sorted(out.diagnostics):
            d = out.diagnostics[obj_id]
            rows.append((out.index, obj_id, d.semantic_score, d.area_normalized_score, d.iou_prediction))
    write_csv(path, ("frame", "object", "semantic_score", "area_normalized_score", "iou_prediction"), rows)


def write_sequence_report(path, per_sequence: Mapping[str, Mapping[int, tuple[float, float]]]) -> None:
    rows = []
    for seq in sorted(per_sequence):
        for obj_id, (j, f) in sorted(per_sequence[seq].items()):
            rows.append((seq, obj_id, j, f, (j + f) / 2))
    write_csv(path, ("seq", "object", "J", "F", "J&F"), rows)


def write_global_report(path, summary: Mapping) -> None:
    def clean(v):
        if isinstance(v, float) and math.isnan(v):
            return None
        if isinstance(v, dict):
            return {str(k): clean(x) for k, x in v.items()}
        return v

    Path(path).write_text(json.dumps(clean(dict(summary)), indent=2, sort_keys=True) + "\n")


def write_oracle_report(path, cells: Mapping[tuple[float, float], float]) -> None:
    rows = [(tx, s, v) for (tx, s), v in sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][0]))]
    write_csv(path, ("tx", "s", "J&F"), rows)
