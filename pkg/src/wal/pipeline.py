"""The four-stage weak adaptation training procedure.

Stage 1 learns a cross-domain representation from the weak-labeled union
(KL + scaled classified-MMD), then fine-tunes on the labeled target.
Stage 2 freezes the prediction head and regresses the gap between ground
truth and the weak label with the correction head. Stage 3 relabels every
source and target sample with weak label + predicted correction. Stage 4
re-initializes everything, freezes the correction head and retrains the
predictor on the relabeled data.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .annotate import WeakAnnotator, annotate_dataset
from .data import DOMAIN_SOURCE, DOMAIN_TARGET, Dataset, ExperimentData, concat_datasets
from .errors import DataError, TrainingAbort
from .losses import cmmd_loss, discrepancy_loss, kl_loss_from_logits
from .nets import (
    ArchConfig,
    ModelTriple,
    build_model,
    f2_forward,
    phi0_features,
    predict_proba,
    reinitialize,
    save_checkpoint,
    set_trainable,
    to_tensor,
)
from .seeding import derive_seed, rng_for


@dataclass
class TrainConfig:
    """Training hyperparameters. Desk-scale epoch defaults; the published
    per-benchmark values ship as config presets."""

    alpha: float = 1e-4
    ep1: int = 30
    ep2: int = 30
    ep3: int = 240
    ep4: int = 30
    lr: float = 1e-3
    batch_size: int = 128
    delta: float = 0.05
    sigma_h2: float = 1.0
    seed: int = 0
    bt_epochs: int | None = None
    bf_source_epochs: int | None = None
    bf_target_epochs: int | None = None
    kl_direction: str = "pred-target"
    cmmd_on: str = "outputs"
    hard_weak_labels: bool = False
    feature_dim: int = 64
    backbone_widths: tuple[int, ...] = (64, 64)
    phi1_widths: tuple[int, ...] = (128, 64)
    phi2_widths: tuple[int, ...] = (64,)

    def __post_init__(self):
        if self.alpha < 0:
            raise DataError(f"alpha must be >= 0, got {self.alpha}")
        for name in ("ep1", "ep2", "ep3", "ep4"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.cmmd_on not in ("outputs", "features"):
            raise DataError(f"cmmd_on must be 'outputs' or 'features', got {self.cmmd_on}")

    def resolved_bt_epochs(self) -> int:
        return self.ep4 if self.bt_epochs is None else self.bt_epochs

    def resolved_bf_epochs(self) -> tuple[int, int]:
        src = self.ep1 if self.bf_source_epochs is None else self.bf_source_epochs
        tgt = self.ep2 if self.bf_target_epochs is None else self.bf_target_epochs
        return src, tgt

    def arch_for(self, ds: Dataset, direct_correction: bool = False) -> ArchConfig:
        return ArchConfig(
            num_classes=ds.num_classes,
            input_shape=ds.feature_shape,
            feature_dim=self.feature_dim,
            backbone_widths=tuple(self.backbone_widths),
            phi1_widths=tuple(self.phi1_widths),
            phi2_widths=tuple(self.phi2_widths),
            direct_correction=direct_correction,
        )


@dataclass
class StageReport:
    stage: int
    epochs_run: int
    final_train_loss: float | None
    wall_time: float
    frozen_components: list[str]
    aborted: bool = False


@dataclass
class RunReport:
    stage_reports: list[StageReport]
    relabel_stats: dict
    final_accuracy: float
    per_class_accuracy: list[float]
    seed: int
    config: dict


class F1Classifier:
    """The trained predictor: batched softmax probabilities over classes."""

    def __init__(self, model: ModelTriple):
        self.model = model
        self.num_classes = model.arch.num_classes

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self.model, np.asarray(X, dtype=np.float32))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def __call__(self, X) -> np.ndarray:
        return self.predict_proba(X)


class _NonFinite(Exception):
    def __init__(self, epochs_done: int):
        self.epochs_done = epochs_done


def _cycler(indices: np.ndarray, batch_size: int, rng: np.random.Generator):
    """Endless stream of exact-size batches; reshuffles on every pass."""
    buf = rng.permutation(indices)
    while True:
        while len(buf) < batch_size:
            buf = np.concatenate([buf, rng.permutation(indices)])
        yield buf[:batch_size]
        buf = buf[batch_size:]


def _check_finite(loss: torch.Tensor, epochs_done: int) -> None:
    if not bool(torch.isfinite(loss)):
        raise _NonFinite(epochs_done)


def _train_combined(model: ModelTriple, union: Dataset, cfg: TrainConfig,
                    epochs: int, trainable: tuple[str, ...], seed_tags: tuple) -> float | None:
    """KL + alpha*CMMD over paired source/target batches. An epoch covers
    the larger split once; the smaller split cycles."""
    params = set_trainable(model, trainable)
    if epochs == 0:
        return None
    src_idx = np.flatnonzero(union.domains == DOMAIN_SOURCE)
    tgt_idx = np.flatnonzero(union.domains == DOMAIN_TARGET)
    X = to_tensor(union.X)
    Y = to_tensor(union.Y)
    classes = union.class_labels
    opt = torch.optim.Adam(params, lr=cfg.lr)
    rng = rng_for(cfg.seed, *seed_tags)
    pair_batches = len(src_idx) > 0 and len(tgt_idx) > 0
    larger = max(len(src_idx), len(tgt_idx), 1)
    steps = math.ceil(larger / cfg.batch_size)
    if pair_batches:
        src_stream = _cycler(src_idx, cfg.batch_size, rng)
        tgt_stream = _cycler(tgt_idx, cfg.batch_size, rng)
    else:
        only = src_idx if len(src_idx) else tgt_idx
        src_stream = _cycler(only, cfg.batch_size, rng)
    last = None
    for epoch in range(epochs):
        epoch_losses = []
        for _ in range(steps):
            sb = next(src_stream)
            tb = next(tgt_stream) if pair_batches else np.empty(0, dtype=np.int64)
            idx = np.concatenate([sb, tb])
            feats = model.phi0(X[idx])
            logits = model.phi1(feats)
            loss = kl_loss_from_logits(logits, Y[idx], direction=cfg.kl_direction)
            if pair_batches and cfg.alpha > 0:
                repr_all = torch.softmax(logits, dim=-1) if cfg.cmmd_on == "outputs" else feats
                cmmd = cmmd_loss(repr_all[: len(sb)], classes[sb],
                                 repr_all[len(sb):], classes[tb], union.num_classes)
                loss = loss + cfg.alpha * cmmd
            _check_finite(loss, epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        last = float(np.mean(epoch_losses))
    return last


def _train_single(model: ModelTriple, ds: Dataset, cfg: TrainConfig, epochs: int,
                  trainable: tuple[str, ...], seed_tags: tuple, loss_step) -> float | None:
    """Plain shuffled epochs over one dataset; loss_step(xb, yb) -> scalar."""
    params = set_trainable(model, trainable)
    if epochs == 0 or len(ds) == 0:
        return None
    X = to_tensor(ds.X)
    Y = to_tensor(ds.Y)
    opt = torch.optim.Adam(params, lr=cfg.lr)
    rng = rng_for(cfg.seed, *seed_tags)
    last = None
    for epoch in range(epochs):
        order = rng.permutation(len(ds))
        epoch_losses = []
        for start in range(0, len(ds), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = loss_step(X[idx], Y[idx], idx)
            _check_finite(loss, epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        last = float(np.mean(epoch_losses))
    return last


def train_f1_supervised(model: ModelTriple, ds: Dataset, epochs: int, lr: float,
                        batch_size: int, seed: int,
                        trainable: tuple[str, ...] = ("phi0", "phi1"),
                        direction: str = "pred-target") -> float | None:
    """KL training of the predictor against the dataset's labels (one-hot
    ground truth or weak vectors). Shared by baselines and annotators."""
    cfg = TrainConfig(lr=lr, batch_size=batch_size, seed=seed, kl_direction=direction)

    def step(xb, yb, _idx):
        return kl_loss_from_logits(model.phi1(model.phi0(xb)), yb, direction=direction)

    try:
        return _train_single(model, ds, cfg, epochs, trainable,
                             ("supervised", seed), step)
    except _NonFinite as exc:
        raise TrainingAbort(
            f"non-finite loss after {exc.epochs_done} epochs of supervised training"
        ) from exc


def _stage_report(stage: int, epochs: int, loss: float | None, t0: float,
                  frozen: tuple[str, ...], aborted: bool = False) -> StageReport:
    return StageReport(
        stage=stage, epochs_run=epochs, final_train_loss=loss,
        wall_time=time.perf_counter() - t0, frozen_components=list(frozen),
        aborted=aborted,
    )


def stage1_train(m: ModelTriple, D: Dataset, target: Dataset,
                 cfg: TrainConfig) -> tuple[ModelTriple, StageReport]:
    """Cross-domain representation: ep1 epochs of KL + alpha*CMMD on the
    weak-labeled union, then ep2 epochs of KL on the labeled target.
    The correction head stays bitwise frozen."""
    t0 = time.perf_counter()
    frozen = ("phi2",)
    try:
        loss_a = _train_combined(m, D, cfg, cfg.ep1, ("phi0", "phi1"), ("stage1", "A"))

        def step(xb, yb, _idx):
            return kl_loss_from_logits(m.phi1(m.phi0(xb)), yb,
                                       direction=cfg.kl_direction)

        loss_b = _train_single(m, target, cfg, cfg.ep2, ("phi0", "phi1"),
                               ("stage1", "B"), step)
    except _NonFinite as exc:
        report = _stage_report(1, exc.epochs_done, float("nan"), t0, frozen, aborted=True)
        raise TrainingAbort("stage 1 aborted on non-finite loss", report) from exc
    loss = loss_b if loss_b is not None else loss_a
    return m, _stage_report(1, cfg.ep1 + cfg.ep2, loss, t0, frozen)


def stage2_train(m: ModelTriple, target: Dataset, annotator: WeakAnnotator,
                 cfg: TrainConfig) -> tuple[ModelTriple, StageReport]:
    """Correction-head regression on the labeled target: fit the gap
    between ground truth and the weak label. The prediction head stays
    bitwise frozen; the extractor remains trainable."""
    t0 = time.perf_counter()
    frozen = ("phi1",)
    if m.arch.direct_correction:
        yw = np.zeros_like(target.Y)
    else:
        yw = annotator.predict_batch(target.X).astype(np.float32)
    yw_t = to_tensor(yw)

    def step(xb, yb, idx):
        ywb = yw_t[idx]
        correction = f2_forward(m, xb, ywb)
        return discrepancy_loss(correction, yb, ywb)

    try:
        loss = _train_single(m, target, cfg, cfg.ep3, ("phi0", "phi2"),
                             ("stage2",), step)
    except _NonFinite as exc:
        report = _stage_report(2, exc.epochs_done, float("nan"), t0, frozen, aborted=True)
        raise TrainingAbort("stage 2 aborted on non-finite loss", report) from exc
    return m, _stage_report(2, cfg.ep3, loss, t0, frozen)


def stage3_relabel(m: ModelTriple, annotator: WeakAnnotator, xs: Dataset) -> Dataset:
    """New labels for every sample: weak label plus predicted correction,
    stored raw (clamping happens inside the KL loss at use time)."""
    if m.arch.direct_correction:
        yw = np.zeros((len(xs), xs.num_classes), dtype=np.float32)
    else:
        yw = annotator.predict_batch(xs.X).astype(np.float32)
    with torch.no_grad():
        correction = f2_forward(m, to_tensor(xs.X), to_tensor(yw)).numpy()
    return xs.with_labels(yw + correction, name="relabeled")


def stage4_train(fresh: ModelTriple, D_new: Dataset,
                 cfg: TrainConfig) -> tuple[ModelTriple, StageReport]:
    """Final training on the relabeled union with KL + alpha*CMMD, classes
    grouped by relabeled argmax. The correction head stays bitwise frozen."""
    t0 = time.perf_counter()
    frozen = ("phi2",)
    try:
        loss = _train_combined(fresh, D_new, cfg, cfg.ep4, ("phi0", "phi1"),
                               ("stage4",))
    except _NonFinite as exc:
        report = _stage_report(4, exc.epochs_done, float("nan"), t0, frozen, aborted=True)
        raise TrainingAbort("stage 4 aborted on non-finite loss", report) from exc
    return fresh, _stage_report(4, cfg.ep4, loss, t0, frozen)


def _predict_fn(classifier):
    if isinstance(classifier, ModelTriple):
        return lambda X: predict_proba(classifier, X)
    if isinstance(classifier, WeakAnnotator):
        return classifier.predict_batch
    if hasattr(classifier, "predict_proba"):
        return classifier.predict_proba
    if callable(classifier):
        return classifier
    raise DataError(f"cannot evaluate object of type {type(classifier).__name__}")


def evaluate(classifier, ds: Dataset) -> tuple[float, np.ndarray]:
    """Overall and per-class argmax match rate (lowest index on ties).
    Classes absent from ds get a NaN per-class entry."""
    if len(ds) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    proba = np.asarray(_predict_fn(classifier)(ds.X))
    pred = np.argmax(proba, axis=1)
    truth = ds.class_labels
    overall = float(np.mean(pred == truth))
    per_class = np.full(ds.num_classes, np.nan)
    for c in range(ds.num_classes):
        mask = truth == c
        if mask.any():
            per_class[c] = float(np.mean(pred[mask] == c))
    return overall, per_class


def weak_union(exp: ExperimentData, annotator: WeakAnnotator,
               hard: bool = False) -> Dataset:
    """The weak-labeled union of source and target (source rows first)."""
    return concat_datasets(
        annotate_dataset(annotator, exp.source, hard=hard),
        annotate_dataset(annotator, exp.target, hard=hard),
        name="weak-union",
    )


def run_wal(exp: ExperimentData, annotator: WeakAnnotator, cfg: TrainConfig,
            out_dir=None, direct_correction: bool = False) -> tuple[F1Classifier, RunReport]:
    """The full procedure; writes stage checkpoints and the run report when
    out_dir is given. Completed checkpoints survive an aborted stage."""
    import json
    import pathlib

    out = pathlib.Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def checkpoint(model, stage):
        if out is not None:
            save_checkpoint(model, out / f"stage{stage}.ckpt")

    model = build_model(cfg.arch_for(exp.source, direct_correction),
                        derive_seed(cfg.seed, "init"))
    D = weak_union(exp, annotator, hard=cfg.hard_weak_labels)

    model, rep1 = stage1_train(model, D, exp.target, cfg)
    checkpoint(model, 1)
    model, rep2 = stage2_train(model, exp.target, annotator, cfg)
    checkpoint(model, 2)

    D_new = stage3_relabel(model, annotator, D)
    checkpoint(model, 3)
    rep3 = StageReport(stage=3, epochs_run=0, final_train_loss=None,
                       wall_time=0.0, frozen_components=["phi0", "phi1", "phi2"])

    weak_argmax = D.class_labels
    new_argmax = D_new.class_labels
    relabel_stats = {
        "fraction_argmax_changed_vs_weak": float(np.mean(new_argmax != weak_argmax)),
    }
    n_src = len(exp.source)
    if exp.source.has_one_hot_labels():
        relabel_stats["relabel_accuracy_on_source"] = float(
            np.mean(new_argmax[:n_src] == exp.source.class_labels))
        relabel_stats["weak_accuracy_on_source"] = float(
            np.mean(weak_argmax[:n_src] == exp.source.class_labels))

    fresh = reinitialize(model, derive_seed(cfg.seed, "stage4-init"))
    fresh, rep4 = stage4_train(fresh, D_new, cfg)
    checkpoint(fresh, 4)

    classifier = F1Classifier(fresh)
    if len(exp.validation) > 0:
        accuracy, per_class = evaluate(classifier, exp.validation)
    else:
        accuracy, per_class = float("nan"), np.full(exp.num_classes, np.nan)

    report = RunReport(
        stage_reports=[rep1, rep2, rep3, rep4],
        relabel_stats=relabel_stats,
        final_accuracy=accuracy,
        per_class_accuracy=[float(v) for v in per_class],
        seed=cfg.seed,
        config=asdict(cfg),
    )
    if out is not None:
        payload = {
            "stage_reports": [asdict(r) for r in report.stage_reports],
            "relabel_stats": report.relabel_stats,
            "final_accuracy": report.final_accuracy,
            "per_class_accuracy": report.per_class_accuracy,
            "seed": report.seed,
            "config": report.config,
        }
        (out / "run_report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    return classifier, report


def f1_kl_loss_spec(direction: str = "pred-target"):
    """Per-sample loss of the predictor against the dataset label, for
    gradient statistics."""
    def spec(model, x_row, y_row):
        return kl_loss_from_logits(model.phi1(model.phi0(x_row)), y_row,
                                   direction=direction)

    return spec


def f2_gap_loss_spec(annotator: WeakAnnotator):
    """Per-sample correction regression loss (vs ground truth minus weak
    label), for gradient statistics."""
    def spec(model, x_row, y_row):
        if model.arch.direct_correction:
            yw = torch.zeros_like(y_row)
        else:
            yw = to_tensor(annotator.predict_batch(x_row.numpy())).to(y_row.dtype)
        correction = f2_forward(model, x_row, yw)
        return discrepancy_loss(correction, y_row, yw)

    return spec
