"""Run configuration stored as TOML.

Every tracker hyperparameter and ablation switch is a key, so an ablation
is a config diff::

    [tracker]
    grid_n = 3
    step_frac = 0.1
    scales = [1.0, 1.05]
    selection_mode = "semantic"     # or "iou_prev"
    refine_mode = "max_area"        # or "max_iou_prev"
    enable_multiprompt = true
    enable_refine = true

    [backend]
    kind = "synthetic"              # or "replay"
    clip_slack = 2

    [run]
    seed = 0
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .synthetic import OracleParams
from .tracker import TrackerConfig

BACKENDS = ("synthetic", "replay")
DATASET_KINDS = ("davis", "ytvos", "exported-synthetic")

ORACLE_TRANSLATIONS = (-0.18, -0.12, -0.06, 0.0, 0.06, 0.12, 0.18)
ORACLE_SCALES = (0.92, 1.00, 1.08)
MULTIPROMPT_GRID_N = 3
MULTIPROMPT_STEP = 0.1
MULTIPROMPT_SCALES = (0.95, 1.00, 1.05)


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""


@dataclass
class OracleGridConfig:
    translations: tuple[float, ...] = ORACLE_TRANSLATIONS
    scales: tuple[float, ...] = ORACLE_SCALES
    multiprompt: bool = False
    mp_grid_n: int = MULTIPROMPT_GRID_N
    mp_step: float = MULTIPROMPT_STEP
    mp_scales: tuple[float, ...] = MULTIPROMPT_SCALES

    def validate(self) -> None:
        if not self.translations:
            raise ConfigError("oracle.translations: must not be empty")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ConfigError("oracle.scales: must be non-empty and positive")
        if self.mp_grid_n < 1 or self.mp_grid_n % 2 == 0:
            raise ConfigError("oracle.mp_grid_n: must be a positive odd integer")
        if not 0.0 <= self.mp_step <= 1.0:
            raise ConfigError("oracle.mp_step: must lie in [0, 1]")
        if not self.mp_scales or any(s <= 0 for s in self.mp_scales):
            raise ConfigError("oracle.mp_scales: must be non-empty and positive")


@dataclass
class RunConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    oracle_params: OracleParams = field(default_factory=OracleParams)
    oracle_grid: OracleGridConfig = field(default_factory=OracleGridConfig)
    backend: str = "synthetic"
    replay_dir: str | None = None
    record_dir: str | None = None
    dataset_root: str | None = None
    dataset_kind: str = "exported-synthetic"
    sequences: tuple[str, ...] = ()
    seed: int = 0
    output_dir: str = "output"

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend.kind: must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend == "replay" and not self.replay_dir:
            raise ConfigError("backend.replay_dir: required for the replay backend")
        if self.dataset_kind not in DATASET_KINDS:
            raise ConfigError(f"run.dataset_kind: must be one of {DATASET_KINDS}, got {self.dataset_kind!r}")
        self.oracle_grid.validate()


_SECTIONS = {
    "tracker": {f.name for f in dataclasses.fields(TrackerConfig)},
    "backend": {"kind", "replay_dir", "record_dir"} | {f.name for f in dataclasses.fields(OracleParams)},
    "run": {"dataset_root", "dataset_kind", "sequences", "seed", "output_dir"},
    "oracle": {f.name for f in dataclasses.fields(OracleGridConfig)},
}


def _build(cls, section: str, values: dict):
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        key = msg.split(":", 1)[0] if ":" in msg else ""
        if key in _SECTIONS.get(section, ()):
            raise ConfigError(f"{section}.{msg}") from None
        raise ConfigError(f"{section}: {msg}") from None


def config_from_dict(data: dict) -> RunConfig:
    for section, values in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"{section}: unknown section")
        if not isinstance(values, dict):
            raise ConfigError(f"{section}: expected a table")
        for key in values:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
    tracker_kw = dict(data.get("tracker", {}))
    if "scales" in tracker_kw:
        tracker_kw["scales"] = tuple(tracker_kw["scales"])
    tracker = _build(TrackerConfig, "tracker", tracker_kw)

    backend = dict(data.get("backend", {}))
    oracle_kw = {k: backend.pop(k) for k in list(backend) if k in {f.name for f in dataclasses.fields(OracleParams)}}
    oracle_params = _build(OracleParams, "backend", oracle_kw)

    grid_kw = dict(data.get("oracle", {}))
    for k in ("translations", "scales", "mp_scales"):
        if k in grid_kw:
            grid_kw[k] = tuple(float(v) for v in grid_kw[k])
    oracle_grid = _build(OracleGridConfig, "oracle", grid_kw)

    run = dict(data.get("run", {}))
    cfg = RunConfig(
        tracker=tracker,
        oracle_params=oracle_params,
        oracle_grid=oracle_grid,
        backend=backend.get("kind", "synthetic"),
        replay_dir=backend.get("replay_dir"),
        record_dir=backend.get("record_dir"),
        dataset_root=run.get("dataset_root"),
        dataset_kind=run.get("dataset_kind", "exported-synthetic"),
        sequences=tuple(run.get("sequences", ())),
        seed=int(run.get("seed", 0)),
        output_dir=run.get("output_dir", "output"),
    )
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        data = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)
