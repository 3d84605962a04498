"""Command-line entry point.

Exit status: 0 on success, 1 on invalid arguments, configuration or dataset
content, 2 on runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import datasets
from .backend import Backend, RecordingBackend, ReplayBackend, check_replay_cache
from .config import DATASET_KINDS, ConfigError, RunConfig, load_config
from .datasets import DatasetError
from .metrics import sequence_scores
from .oracle_grid import OracleSequence, run_oracle_grid
from .synthetic import SceneScript, SyntheticBackend, make_benchmark_scripts, render_frame
from .tracker import (
    first_frame_output,
    heatmap_peaks,
    init_automatic,
    init_from_masks,
    track_step,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# sequence sources


@dataclasses.dataclass
class _Loaded:
    name: str
    frames: list[np.ndarray]
    labels: list[np.ndarray | None]
    objects: list[tuple[int, np.ndarray, int]]
    script: SceneScript | None
    frame_names: list[str]


def _load(cfg: RunConfig, name: str) -> _Loaded:
    if cfg.dataset_root:
        spec = datasets.load_sequence(cfg.dataset_root, cfg.dataset_kind, name)
        script = datasets.load_script(spec.script_path) if spec.script_path else None
        return _Loaded(
            name,
            datasets.load_frames(spec),
            datasets.load_annotations(spec),
            datasets.initial_objects(spec),
            script,
            [p.stem for p in spec.frame_paths],
        )
    suites = make_benchmark_scripts(cfg.seed)
    if name not in suites:
        raise ConfigError(f"seq: unknown synthetic suite {name!r}; choose from {sorted(suites)}")
    script = suites[name]
    rendered = [render_frame(script, t) for t in range(script.duration)]
    labels = [lab for _, lab in rendered]
    first: dict[int, int] = {}
    for t, lab in enumerate(labels):
        for i in np.unique(lab):
            if i:
                first.setdefault(int(i), t)
    objects = [(i, labels[t] == i, t) for i, t in sorted(first.items())]
    return _Loaded(
        name, [img for img, _ in rendered], labels, objects, script, [f"{t:05d}" for t in range(len(rendered))]
    )


def _backend(cfg: RunConfig, seq: _Loaded) -> Backend:
    if cfg.backend == "replay":
        backend: Backend = ReplayBackend(Path(cfg.replay_dir) / seq.name)
    else:
        if seq.script is None:
            raise ConfigError(
                f"backend.kind: the synthetic backend needs a scene script, {seq.name!r} has none"
            )
        backend = SyntheticBackend(seq.script, cfg.oracle_params)
    if cfg.record_dir:
        provenance = f"{cfg.backend}:{seq.name}:seed={cfg.seed}"
        backend = RecordingBackend(backend, Path(cfg.record_dir) / seq.name, provenance)
    return backend


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        "backend": getattr(args, "backend", None),
        "replay_dir": getattr(args, "replay_dir", None),
        "record_dir": getattr(args, "record_dir", None),
        "dataset_root": getattr(args, "root", None),
        "output_dir": getattr(args, "out", None),
    }
    if getattr(args, "kind", None):
        overrides["dataset_kind"] = args.kind
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


def _sequences(cfg: RunConfig, args) -> list[str]:
    names = list(args.seq or cfg.sequences)
    if not names:
        raise ConfigError("seq: no sequence given (use --seq or run.sequences)")
    return names


# subcommands


def cmd_track(args) -> int:
    cfg = _run_config(args)
    tcfg = cfg.tracker
    for name in _sequences(cfg, args):
        seq = _load(cfg, name)
        backend = _backend(cfg, seq)
        out_dir = Path(cfg.output_dir) / name
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.automatic:
            state, first = init_automatic(seq.frames[0], backend, tcfg)
        else:
            state = init_from_masks(seq.frames[0], seq.objects, tcfg)
            backend.encode_frame(seq.frames[0], 0)
            first = first_frame_output(state, 0)
        outputs = [first]
        peaks = []
        for t in range(1, len(seq.frames)):
            if args.heatmap_diag:
                for obj_id, (cx, cy, score) in heatmap_peaks(state, seq.frames[t], tcfg).items():
                    peaks.append((t, obj_id, cx, cy, score))
            outputs.append(track_step(state, seq.frames[t], t, backend, tcfg))
        datasets.write_label_maps([o.label_map for o in outputs], out_dir, seq.frame_names)
        datasets.write_diagnostics(out_dir / "diagnostics.csv", outputs)
        if args.heatmap_diag:
            datasets.write_csv(out_dir / "heatmap_peaks.csv", ("frame", "object", "cell_x", "cell_y", "score"), peaks)
        print(f"{name}: {len(outputs)} frames -> {out_dir}")
    return EXIT_OK


def _label_tree(folder: Path) -> dict[str, np.ndarray]:
    if not folder.is_dir():
        raise DatasetError(f"missing directory {folder}")
    return {p.stem: datasets.read_label_png(p) for p in sorted(folder.glob("*.png"))}


def cmd_eval(args) -> int:
    pred_root, gt_root = Path(args.pred), Path(args.gt)
    names = args.seq or sorted(p.name for p in gt_root.iterdir() if p.is_dir())
    if not names:
        raise DatasetError(f"no sequences under {gt_root}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_seq: dict[str, dict[int, tuple[float, float]]] = {}
    for name in names:
        gt = _label_tree(gt_root / name)
        pred = _label_tree(pred_root / name)
        if not gt:
            raise DatasetError(f"{name}: no ground-truth frames")
        stems = sorted(gt)
        missing = [s for s in stems if s not in pred]
        if missing:
            raise DatasetError(f"{name}: predictions missing for frames {missing[:5]}")
        gts = [gt[s] for s in stems]
        first: dict[int, int] = {}
        for t, lab in enumerate(gts):
            for i in np.unique(lab):
                if i:
                    first.setdefault(int(i), t)
        ev = sequence_scores([pred[s] for s in stems], gts, first)
        per_seq[name] = ev.object_scores()
    datasets.write_sequence_report(out_dir / "per_sequence.csv", per_seq)
    rows = [v for seq in per_seq.values() for v in seq.values()]
    j = float(np.mean([r[0] for r in rows])) if rows else float("nan")
    f = float(np.mean([r[1] for r in rows])) if rows else float("nan")
    summary = {
        "J": j,
        "F": f,
        "J&F": (j + f) / 2,
        "sequences": {
            s: {"J": float(np.mean([v[0] for v in o.values()])), "F": float(np.mean([v[1] for v in o.values()]))}
            for s, o in per_seq.items() if o
        },
    }
    datasets.write_global_report(out_dir / "global.json", summary)
    print(json.dumps({"J": j, "F": f, "J&F": (j + f) / 2}))
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _run_config(args)
    g = cfg.oracle_grid
    multiprompt = args.multiprompt or g.multiprompt
    seqs, loaded = [], {}
    for name in _sequences(cfg, args):
        seq = _load(cfg, name)
        if any(lab is None for lab in seq.labels):
            raise DatasetError(f"{name}: the oracle grid needs ground truth on every frame")
        loaded[name] = seq
        seqs.append(OracleSequence(name, seq.frames, seq.labels))
    cells = run_oracle_grid(
        seqs,
        lambda s: _backend(cfg, loaded[s.name]),
        g.translations,
        g.scales,
        multiprompt,
        cfg.tracker,
        g.mp_grid_n,
        g.mp_step,
        g.mp_scales,
    )
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "oracle.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    datasets.write_oracle_report(out, cells)
    print(f"{len(cells)} cells -> {out}")
    return EXIT_OK


def cmd_synth_gen(args) -> int:
    suites = make_benchmark_scripts(args.seed)
    names = args.suite or sorted(suites)
    for name in names:
        if name not in suites:
            raise ConfigError(f"suite: unknown synthetic suite {name!r}; choose from {sorted(suites)}")
        datasets.export_sequence(suites[name], args.out, name)
        print(f"{name} -> {args.out}")
    return EXIT_OK


def cmd_trace_check(args) -> int:
    problems = check_replay_cache(args.cache_dir)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        return EXIT_INVALID
    print(f"{args.cache_dir}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="promptrack", description="Box-prompt propagation tracker.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def dataset_args(p):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--backend", choices=("synthetic", "replay"))
        p.add_argument("--seq", action="append", help="sequence name (repeatable)")
        p.add_argument("--root", help="dataset root; synthetic suites are rendered in memory when omitted")
        p.add_argument("--kind", choices=DATASET_KINDS)
        p.add_argument("--seed", type=int)
        p.add_argument("--replay-dir")
        p.add_argument("--record-dir")

    p = sub.add_parser("track", help="track sequences and write label PNGs and diagnostics")
    dataset_args(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--automatic", action="store_true", help="seed tracks from automatic mask generation")
    p.add_argument("--heatmap-diag", action="store_true", help="also write template heatmap peaks")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a prediction tree against a ground-truth tree")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--seq", action="append")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="run the perturbation grid without tracking")
    dataset_args(p)
    p.add_argument("--multiprompt", action="store_true")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("synth-gen", help="export synthetic suites in the DAVIS layout")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--suite", action="append")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("trace-check", help="validate a replay cache")
    p.add_argument("cache_dir")
    p.set_defaults(func=cmd_trace_check)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_main())
