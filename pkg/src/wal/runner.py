"""Experiment orchestration: builds seeded experiments from a config,
executes (method, seed) cells, aggregates metrics and sweeps, and
evaluates bound reports from run directories."""

from __future__ import annotations

import json
import math
import pathlib
import time
from dataclasses import asdict, replace

import numpy as np

from . import bound as bound_mod
from .annotate import (
    WeakAnnotator,
    make_earlystop_annotator,
    make_noise_annotator,
    make_rule_annotator,
)
from .baselines import run_baseline
from .config import ExperimentConfig, config_to_dict
from .data import (
    Dataset,
    ExperimentData,
    SynthConfig,
    concat_datasets,
    digits_domain_pair,
    sample_splits,
    shift_domain,
    synth_domain_pair,
)
from .errors import TrainingAbort, WalError
from .nets import load_checkpoint
from .pipeline import f1_kl_loss_spec, f2_gap_loss_spec, run_wal, weak_union
from .seeding import derive_seed, rng_for


def build_pools(config: ExperimentConfig, seed: int,
                noise_mean: float | None = None) -> tuple[Dataset, Dataset]:
    """Source/target sample pools for one seed; optionally push extra
    Gaussian noise onto the source pool (the domain-discrepancy axis)."""
    d = config.data
    if d.kind == "digits":
        source, target = digits_domain_pair(d.shift_kind, d.shift_magnitude,
                                            seed=derive_seed(seed, "data"),
                                            image=d.image)
    else:
        source, target = synth_domain_pair(SynthConfig(
            M=d.num_classes, dim=d.dim, per_class_count=d.per_class,
            shift_kind=d.shift_kind, shift_magnitude=d.shift_magnitude,
            seed=derive_seed(seed, "data"), cluster_sigma=d.cluster_sigma,
            mean_spread=d.mean_spread, modes_per_class=d.modes_per_class,
            noise_dims=d.noise_dims,
        ))
    mean = d.noise_mean if noise_mean is None else noise_mean
    if mean != 0.0:
        source = shift_domain(source, mean, d.noise_sigma,
                              derive_seed(seed, "domain-noise"))
    return source, target


def build_annotator(config: ExperimentConfig, exp: ExperimentData,
                    source_pool: Dataset, target_pool: Dataset, seed: int,
                    accuracy: float | None = None) -> WeakAnnotator:
    spec = config.annotator
    if spec.kind in ("noise", "rule"):
        reference = concat_datasets(
            concat_datasets(exp.source, exp.target, "ref"), exp.validation, "ref")
        acc = spec.accuracy if accuracy is None else accuracy
        ann_seed = derive_seed(seed, "annotator")
        if spec.kind == "noise":
            return make_noise_annotator(reference, target_accuracy=acc,
                                        sharpness=spec.sharpness, seed=ann_seed)
        return make_rule_annotator(reference, target_accuracy=acc,
                                   sharpness=spec.sharpness, seed=ann_seed,
                                   scope=spec.rule_scope)
    rng = rng_for(seed, "annotator-train")
    n_src = min(spec.train_samples, len(source_pool))
    n_tgt = min(100, len(target_pool))
    train = concat_datasets(
        source_pool.subset(rng.choice(len(source_pool), n_src, replace=False)),
        target_pool.subset(rng.choice(len(target_pool), n_tgt, replace=False)),
        "annotator-train",
    )
    return make_earlystop_annotator(train, epochs=spec.epochs,
                                    seed=derive_seed(seed, "annotator"))


def build_experiment(config: ExperimentConfig, seed: int, axis: str | None = None,
                     value: float | None = None) -> tuple[ExperimentData, WeakAnnotator]:
    """Deterministic (experiment, annotator) for one sweep cell."""
    d = config.data
    n_target = d.n_target
    annotator_acc = None
    noise_mean = None
    if axis == "target_quantity":
        n_target = int(value)
    elif axis == "annotator_accuracy":
        annotator_acc = float(value)
    elif axis == "noise_mean":
        noise_mean = float(value)
    source_pool, target_pool = build_pools(config, seed, noise_mean=noise_mean)
    exp = sample_splits(source_pool, target_pool, d.n_source, n_target, d.n_val,
                        seed=derive_seed(seed, "split"))
    annotator = build_annotator(config, exp, source_pool, target_pool, seed,
                                accuracy=annotator_acc)
    return exp, annotator


def cell_name(method: str, seed: int, axis: str | None = None,
              value: float | None = None) -> str:
    if axis is None:
        return f"{method}_seed{seed}"
    return f"{method}_{axis}{value:g}_seed{seed}"


def run_cell(config: ExperimentConfig, method: str, seed: int,
             axis: str | None = None, value: float | None = None,
             out_root=None) -> dict:
    """Execute one (method, seed[, axis value]) cell and return its row."""
    t0 = time.perf_counter()
    exp, annotator = build_experiment(config, seed, axis, value)
    cfg = replace(config.train, seed=seed)
    cell_dir = None
    if out_root is not None:
        cell_dir = pathlib.Path(out_root) / cell_name(method, seed, axis, value)
    try:
        if method == "wal":
            _, report = run_wal(exp, annotator, cfg, out_dir=cell_dir)
            accuracy = report.final_accuracy
            per_class = report.per_class_accuracy
        else:
            result = run_baseline(method, exp, annotator, cfg, out_dir=cell_dir)
            accuracy = result.accuracy
            per_class = result.per_class_accuracy
            if cell_dir is not None:
                cell_dir.mkdir(parents=True, exist_ok=True)
                (cell_dir / "result.json").write_text(
                    json.dumps(asdict(result), indent=2, sort_keys=True))
    except TrainingAbort as exc:
        raise TrainingAbort(
            f"cell {cell_name(method, seed, axis, value)} aborted: {exc}",
            getattr(exc, "stage_report", None),
        ) from exc
    return {
        "method": method,
        "seed": seed,
        "axis_value": value,
        "accuracy": accuracy,
        "per_class": list(per_class),
        "wall_time": time.perf_counter() - t0,
    }


def _cell_worker(args) -> dict:
    config_dict, method, seed, axis, value, out_root = args
    from .config import config_from_dict

    return run_cell(config_from_dict(config_dict), method, seed, axis, value, out_root)


def run_cells(config: ExperimentConfig, cells: list[tuple], out_root=None) -> list[dict]:
    """Run (method, seed, axis, value) cells, optionally in worker
    processes. Row order is normalized afterwards, so scheduling does not
    affect outputs."""
    if config.workers > 1 and len(cells) > 1:
        import multiprocessing as mp

        payload = [(config_to_dict(config), m, s, a, v, str(out_root) if out_root else None)
                   for (m, s, a, v) in cells]
        ctx = mp.get_context("spawn")
        with ctx.Pool(config.workers) as pool:
            rows = pool.map(_cell_worker, payload)
    else:
        rows = [run_cell(config, m, s, a, v, out_root) for (m, s, a, v) in cells]
    rows.sort(key=lambda r: (r["method"],
                             r["axis_value"] if r["axis_value"] is not None else -math.inf,
                             r["seed"]))
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path, rows: list[dict], num_classes: int) -> None:
    """Stable schema: method, seed, axis_value, accuracy, per-class
    accuracies, wall_time. The wall_time column stays empty so identical
    (config, seed) invocations produce byte-identical files; timings live
    in the JSON reports."""
    header = ["method", "seed", "axis_value", "accuracy"]
    header += [f"per_class_{c}" for c in range(num_classes)]
    header += ["wall_time"]
    lines = [",".join(header)]
    for row in rows:
        cells = [row["method"], str(row["seed"]), _fmt(row["axis_value"]),
                 _fmt(float(row["accuracy"]))]
        cells += [_fmt(float(v)) for v in row["per_class"]]
        cells += [""]
        lines.append(",".join(cells))
    pathlib.Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_experiment(config: ExperimentConfig, methods=None, out_dir=None) -> list[dict]:
    """The plain (method x seed) grid; writes metrics.csv and per-cell
    reports under out_dir."""
    methods = list(methods or config.methods)
    out_root = pathlib.Path(out_dir or config.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    cells = [(m, s, None, None) for m in methods for s in config.seeds]
    rows = run_cells(config, cells, out_root)
    write_metrics_csv(out_root / "metrics.csv", rows, config.data.num_classes)
    return rows


def run_sweep(config: ExperimentConfig, out_dir=None) -> list[dict]:
    """The method grid per sweep value; emits sweep.csv (seed mean ± std)
    and a plot per axis alongside the raw metrics."""
    if config.sweep is None:
        raise WalError("config has no sweep section")
    axis = config.sweep.axis
    out_root = pathlib.Path(out_dir or config.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    cells = [(m, s, axis, float(v))
             for v in config.sweep.values
             for m in config.methods
             for s in config.seeds]
    rows = run_cells(config, cells, out_root)
    write_metrics_csv(out_root / "metrics.csv", rows, config.data.num_classes)

    aggregated = []
    for method in sorted(set(config.methods)):
        for value in config.sweep.values:
            accs = [r["accuracy"] for r in rows
                    if r["method"] == method and r["axis_value"] == float(value)]
            aggregated.append({
                "method": method, "axis": axis, "axis_value": float(value),
                "mean_accuracy": float(np.mean(accs)),
                "std_accuracy": float(np.std(accs)),
                "n_seeds": len(accs),
            })
    header = ["method", "axis", "axis_value", "mean_accuracy", "std_accuracy", "n_seeds"]
    lines = [",".join(header)]
    for agg in aggregated:
        lines.append(",".join(_fmt(agg[k]) for k in header))
    (out_root / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _plot_sweep(aggregated, axis, out_root / f"sweep_{axis}.png")
    return rows


def _plot_sweep(aggregated: list[dict], axis: str, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for method in sorted({a["method"] for a in aggregated}):
        points = [a for a in aggregated if a["method"] == method]
        xs = [p["axis_value"] for p in points]
        means = [p["mean_accuracy"] for p in points]
        stds = [p["std_accuracy"] for p in points]
        ax.errorbar(xs, means, yerr=stds, marker="o", capsize=3, label=method)
    ax.set_xlabel(axis.replace("_", " "))
    ax.set_ylabel("accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def bound_report_for_run(config: ExperimentConfig, run_dir, seed: int,
                         pool_size: int = 8) -> bound_mod.BoundReport:
    """Evaluate the error-bound decomposition from a finished run directory
    (needs stage1/stage2 checkpoints; data is rebuilt from config+seed)."""
    run_dir = pathlib.Path(run_dir)
    stage1 = run_dir / "stage1.ckpt"
    stage2 = run_dir / "stage2.ckpt"
    for ckpt in (stage1, stage2):
        if not ckpt.exists():
            raise WalError(f"missing checkpoint {ckpt}")
    exp, annotator = build_experiment(config, seed)
    cfg = replace(config.train, seed=seed)

    from .nets import build_model

    h_model = load_checkpoint(stage1)
    d_model = load_checkpoint(stage2)
    # pre-training parameter states: h starts from the run's init seed;
    # d starts from the stage-1 weights (its head was frozen there).
    h_pre = build_model(h_model.arch, derive_seed(seed, "init"))
    d_pre = load_checkpoint(stage1)

    weak_source = weak_union(exp, annotator).subset(np.arange(len(exp.source)),
                                                    "weak-source")
    stats_h = bound_mod.grad_stats(h_pre, weak_source,
                                   f1_kl_loss_spec(cfg.kl_direction),
                                   components=("phi0", "phi1"))
    stats_d = bound_mod.grad_stats(d_pre, exp.target, f2_gap_loss_spec(annotator),
                                   components=("phi0", "phi2"))
    pool = bound_mod.make_classifier_pool(
        [weak_source, exp.target], h_model.arch, size=pool_size,
        seed=derive_seed(seed, "pool"))
    return bound_mod.error_bound_report(
        h_model, d_model, annotator, exp, stats_h, stats_d, pool,
        delta=cfg.delta, sigma_h2=cfg.sigma_h2,
    )


def write_bound_report(report: bound_mod.BoundReport, out_dir) -> None:
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "bound_report.json").write_text(
        json.dumps(asdict(report), indent=2, sort_keys=True))
    lines = ["term,group,value"]
    for name, value in report.delta_terms.items():
        lines.append(f"{name},delta,{_fmt(float(value))}")
    for name, value in report.quantity_terms.items():
        lines.append(f"{name},quantity,{_fmt(float(value))}")
    lines.append(f"total,total,{_fmt(report.total)}")
    (out_dir / "bound_report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
