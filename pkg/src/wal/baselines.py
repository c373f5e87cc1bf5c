"""Comparison methods: the raw annotator, target-only training, the two
fine-tuning baselines, and the direct-relabeling ablation.

Every baseline consumes the same ExperimentData and the same seed wiring
as the main procedure (identical initial weights, identical splits), so
comparisons are fair by construction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .annotate import WeakAnnotator, annotate_dataset
from .data import ExperimentData
from .errors import DataError
from .nets import build_model
from .pipeline import (
    F1Classifier,
    TrainConfig,
    evaluate,
    run_wal,
    train_f1_supervised,
)
from .seeding import derive_seed

BASELINE_NAMES = ("bwa", "bt", "bf1", "bf2", "bdirect")


@dataclass
class BaselineResult:
    name: str
    accuracy: float
    per_class_accuracy: list[float]
    seed: int
    config: dict


def _result(name: str, classifier, exp: ExperimentData, cfg: TrainConfig) -> BaselineResult:
    accuracy, per_class = evaluate(classifier, exp.validation)
    return BaselineResult(
        name=name, accuracy=accuracy,
        per_class_accuracy=[float(v) for v in per_class],
        seed=cfg.seed, config=asdict(cfg),
    )


def run_bwa(annotator: WeakAnnotator, validation, seed: int = 0) -> BaselineResult:
    """The weak annotator itself, evaluated on the validation split."""
    accuracy, per_class = evaluate(annotator, validation)
    return BaselineResult(
        name="bwa", accuracy=accuracy,
        per_class_accuracy=[float(v) for v in per_class],
        seed=seed, config={},
    )


def run_bt(exp: ExperimentData, cfg: TrainConfig) -> BaselineResult:
    """Predictor trained on the labeled target only."""
    model = build_model(cfg.arch_for(exp.target), derive_seed(cfg.seed, "init"))
    train_f1_supervised(model, exp.target, epochs=cfg.resolved_bt_epochs(),
                        lr=cfg.lr, batch_size=cfg.batch_size,
                        seed=derive_seed(cfg.seed, "bt"),
                        direction=cfg.kl_direction)
    return _result("bt", F1Classifier(model), exp, cfg)


def _finetune(exp: ExperimentData, annotator: WeakAnnotator, cfg: TrainConfig,
              name: str, tune: tuple[str, ...]) -> BaselineResult:
    weak_source = annotate_dataset(annotator, exp.source, hard=cfg.hard_weak_labels)
    src_epochs, tgt_epochs = cfg.resolved_bf_epochs()
    model = build_model(cfg.arch_for(exp.source), derive_seed(cfg.seed, "init"))
    train_f1_supervised(model, weak_source, epochs=src_epochs, lr=cfg.lr,
                        batch_size=cfg.batch_size,
                        seed=derive_seed(cfg.seed, name, "source"),
                        direction=cfg.kl_direction)
    train_f1_supervised(model, exp.target, epochs=tgt_epochs, lr=cfg.lr,
                        batch_size=cfg.batch_size,
                        seed=derive_seed(cfg.seed, name, "target"),
                        trainable=tune, direction=cfg.kl_direction)
    return _result(name, F1Classifier(model), exp, cfg)


def run_bf1(exp: ExperimentData, annotator: WeakAnnotator,
            cfg: TrainConfig) -> BaselineResult:
    """Train on weak-labeled source, then fine-tune only the prediction
    head (the last three FC layers) on the target."""
    return _finetune(exp, annotator, cfg, "bf1", tune=("phi1",))


def run_bf2(exp: ExperimentData, annotator: WeakAnnotator,
            cfg: TrainConfig) -> BaselineResult:
    """Train on weak-labeled source, then fine-tune all parameters on the
    target."""
    return _finetune(exp, annotator, cfg, "bf2", tune=("phi0", "phi1"))


def run_bdirect(exp: ExperimentData, annotator: WeakAnnotator, cfg: TrainConfig,
                out_dir=None) -> BaselineResult:
    """Ablation: the correction head consumes extractor features only,
    learns the target task directly, and relabeling uses its raw output
    as the new label. Stages 1 and 4 are unchanged."""
    _, report = run_wal(exp, annotator, cfg, out_dir=out_dir, direct_correction=True)
    return BaselineResult(
        name="bdirect", accuracy=report.final_accuracy,
        per_class_accuracy=report.per_class_accuracy,
        seed=cfg.seed, config=report.config,
    )


def run_baseline(name: str, exp: ExperimentData, annotator: WeakAnnotator,
                 cfg: TrainConfig, out_dir=None) -> BaselineResult:
    if name == "bwa":
        return run_bwa(annotator, exp.validation, seed=cfg.seed)
    if name == "bt":
        return run_bt(exp, cfg)
    if name == "bf1":
        return run_bf1(exp, annotator, cfg)
    if name == "bf2":
        return run_bf2(exp, annotator, cfg)
    if name == "bdirect":
        return run_bdirect(exp, annotator, cfg, out_dir=out_dir)
    raise DataError(f"unknown baseline {name!r}, expected one of {BASELINE_NAMES}")
