"""Experiment configuration: a human-editable YAML tree with named presets.

Presets embed the published split sizes and epoch budgets (digits / cifar
analogs) on desk-scale stand-in data; `desk-blobs` is the fast default.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields

import yaml

from .errors import ConfigError
from .pipeline import TrainConfig

METHODS = ("wal", "bwa", "bt", "bf1", "bf2", "bdirect")
SWEEP_AXES = ("target_quantity", "annotator_accuracy", "noise_mean")


@dataclass
class DataSpec:
    kind: str = "blobs"
    num_classes: int = 10
    dim: int = 16
    per_class: int = 800
    modes_per_class: int = 1
    noise_dims: int = 0
    shift_kind: str = "mean_offset"
    shift_magnitude: float = 2.0
    cluster_sigma: float = 1.0
    mean_spread: float = 1.0
    n_source: int = 5000
    n_target: int = 200
    n_val: int = 2000
    noise_mean: float = 0.0
    noise_sigma: float = 5.0
    image: bool = False


@dataclass
class AnnotatorSpec:
    kind: str = "noise"
    accuracy: float = 0.55
    sharpness: float = 0.85
    rule_scope: str = "per_class"
    epochs: int = 2
    train_samples: int = 2000


@dataclass
class SweepSpec:
    axis: str
    values: list[float]


@dataclass
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    annotator: AnnotatorSpec = field(default_factory=AnnotatorSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    sweep: SweepSpec | None = None
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "runs/out"
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; valid: {METHODS}")
        if self.data.kind not in ("blobs", "digits"):
            raise ConfigError(f"unknown data kind {self.data.kind!r}")
        if self.annotator.kind not in ("noise", "rule", "earlystop"):
            raise ConfigError(f"unknown annotator kind {self.annotator.kind!r}")
        if self.sweep is not None:
            if self.sweep.axis not in SWEEP_AXES:
                raise ConfigError(
                    f"unknown sweep axis {self.sweep.axis!r}; valid: {SWEEP_AXES}")
            values = list(self.sweep.values)
            if len(values) < 2:
                raise ConfigError("sweep needs at least two values")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ConfigError("sweep values must be strictly increasing")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


PRESETS: dict[str, dict] = {
    # Fast CPU default: blob domains, minutes on one core.
    "desk-blobs": {
        "data": {"kind": "blobs", "num_classes": 10, "dim": 32, "per_class": 800,
                 "shift_kind": "mean_offset", "shift_magnitude": 3.0,
                 "cluster_sigma": 1.3, "n_source": 5000, "n_target": 200,
                 "n_val": 2000},
        "annotator": {"kind": "rule", "accuracy": 0.55, "sharpness": 0.85,
                      "rule_scope": "per_class"},
        "train": {"alpha": 1e-4, "ep1": 30, "ep2": 30, "ep3": 240, "ep4": 30,
                  "lr": 1e-3, "batch_size": 128, "bt_epochs": 90,
                  "bf_source_epochs": 30, "bf_target_epochs": 40},
    },
    # Published digit-benchmark operating point on stand-in data.
    "paper-digits": {
        "data": {"kind": "blobs", "num_classes": 10, "dim": 16, "per_class": 2000,
                 "shift_kind": "mean_offset", "shift_magnitude": 2.0,
                 "n_source": 15000, "n_target": 1000, "n_val": 2000},
        "annotator": {"kind": "earlystop", "epochs": 4, "train_samples": 10000},
        "train": {"alpha": 1e-4, "ep1": 90, "ep2": 90, "ep3": 40, "ep4": 180,
                  "lr": 1e-5, "batch_size": 128, "bt_epochs": 90,
                  "bf_source_epochs": 90, "bf_target_epochs": 90},
    },
    # Published no-discrepancy operating point (annotator at ~49%).
    "paper-cifar": {
        "data": {"kind": "blobs", "num_classes": 10, "dim": 16, "per_class": 1500,
                 "shift_kind": "mean_offset", "shift_magnitude": 0.0,
                 "n_source": 10000, "n_target": 1000, "n_val": 2000},
        "annotator": {"kind": "noise", "accuracy": 0.49, "sharpness": 0.85},
        "train": {"alpha": 1e-4, "ep1": 40, "ep2": 30, "ep3": 70, "ep4": 70,
                  "lr": 1e-3, "batch_size": 128, "bt_epochs": 70,
                  "bf_source_epochs": 30, "bf_target_epochs": 40},
    },
}


def _deep_update(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_update(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _build_section(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r} section: {sorted(unknown)}")
    try:
        return cls(**values)
    except Exception as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def config_from_dict(tree: dict) -> ExperimentConfig:
    if not isinstance(tree, dict):
        raise ConfigError(f"config root must be a mapping, got {type(tree).__name__}")
    tree = dict(tree)
    preset_name = tree.pop("preset", None)
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset_name!r}; available: {sorted(PRESETS)}")
        tree = _deep_update(PRESETS[preset_name], tree)

    known = {"data", "annotator", "train", "methods", "sweep", "seeds",
             "out_dir", "workers"}
    unknown = set(tree) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")

    train_values = dict(tree.get("train", {}))
    for key in ("backbone_widths", "phi1_widths", "phi2_widths"):
        if key in train_values:
            train_values[key] = tuple(train_values[key])
    sweep = None
    if tree.get("sweep") is not None:
        sweep = _build_section(SweepSpec, dict(tree["sweep"]), "sweep")
    config = ExperimentConfig(
        data=_build_section(DataSpec, dict(tree.get("data", {})), "data"),
        annotator=_build_section(AnnotatorSpec, dict(tree.get("annotator", {})),
                                 "annotator"),
        train=_build_section(TrainConfig, train_values, "train"),
        methods=list(tree.get("methods", METHODS)),
        sweep=sweep,
        seeds=[int(s) for s in tree.get("seeds", [0, 1, 2, 3, 4])],
        out_dir=str(tree.get("out_dir", "runs/out")),
        workers=int(tree.get("workers", 1)),
    )
    return config.validate()


def load_config(path, preset: str | None = None) -> ExperimentConfig:
    """Parse a YAML config file; parse errors carry line/column."""
    try:
        with open(path) as fh:
            tree = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            raise ConfigError(f"cannot parse {path}: {exc.problem}",
                              line=mark.line + 1, column=mark.column + 1) from exc
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if preset is not None:
        tree.setdefault("preset", preset)
    return config_from_dict(tree)


def preset_config(name: str) -> ExperimentConfig:
    return config_from_dict({"preset": name})


def config_to_dict(config: ExperimentConfig) -> dict:
    out = asdict(config)
    for key in ("backbone_widths", "phi1_widths", "phi2_widths"):
        out["train"][key] = list(out["train"][key])
    return out
