"""Weak annotators: black-box labelers of controllable accuracy.

Two constructions: a corruption annotator that flips a reference pool's
ground truth to hit a requested accuracy, and an early-stopped small
classifier. Both emit probability vectors (the hard one-hot variant is a
switch on annotate_dataset, kept for ablation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import container
from .data import Dataset, one_hot
from .errors import AnnotatorError, DataError, SchemaError
from .seeding import hash_int, hash_unit, rng_for
from .validation import check_positive_int


@dataclass
class WeakAnnotator:
    """Opaque sample -> probability-vector labeler with a descriptor.

    predict maps a single feature tensor to a length-M probability vector;
    predict_batch maps (N, ...) features to (N, M). Annotators are immutable
    after construction and predict is pure.
    """

    predict: Callable[[np.ndarray], np.ndarray]
    descriptor: str
    kind: str
    num_classes: int
    payload: dict = field(default_factory=dict, repr=False)

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        batch = self.payload.get("predict_batch")
        if batch is not None:
            return batch(X)
        return np.stack([self.predict(x) for x in X])


def annotate_dataset(a: WeakAnnotator, xs: Dataset, hard: bool = False) -> Dataset:
    """Replace every label with the annotator's output. Features, ordering
    and domain tags are untouched. hard=True one-hots the argmax."""
    if a.num_classes != xs.num_classes:
        raise AnnotatorError(
            f"annotator emits {a.num_classes} classes, dataset has {xs.num_classes}"
        )
    labels = a.predict_batch(xs.X).astype(np.float32)
    if labels.shape != (len(xs), xs.num_classes):
        raise AnnotatorError(f"annotator produced labels of shape {labels.shape}")
    if hard:
        labels = one_hot(np.argmax(labels, axis=1), xs.num_classes)
    return xs.with_labels(labels, name=f"{xs.name}@{a.descriptor}")


def annotator_accuracy(a: WeakAnnotator, ds: Dataset) -> float:
    """Fraction of samples whose predicted argmax matches the ground-truth
    argmax (lowest class index on ties)."""
    if len(ds) == 0:
        raise DataError("cannot measure annotator accuracy on an empty dataset")
    pred = np.argmax(a.predict_batch(ds.X), axis=1)
    return float(np.mean(pred == ds.class_labels))


def make_noise_annotator(reference: Dataset, target_accuracy: float,
                         sharpness: float = 0.85, seed: int = 0) -> WeakAnnotator:
    """Corruption annotator over a ground-truth reference pool.

    Each sample keeps its true class with probability target_accuracy and
    is assigned a uniformly chosen wrong class otherwise. The decision is
    a pure function of (feature bytes, seed), so re-annotation is stable.
    The output puts `sharpness` mass on the chosen class and spreads the
    rest uniformly. Samples outside the reference pool are rejected.
    """
    M = reference.num_classes
    if not reference.has_one_hot_labels():
        raise DataError("noise annotator needs a reference with one-hot ground truth")
    if not (1.0 / M < target_accuracy <= 1.0):
        raise DataError(
            f"target_accuracy={target_accuracy} is at or below chance for M={M}"
        )
    if not (1.0 / M < sharpness <= 1.0):
        raise DataError(f"sharpness must lie in (1/M, 1], got {sharpness}")

    truth = {x.tobytes(): int(c) for x, c in zip(reference.X, reference.class_labels)}

    def choose_class(x: np.ndarray) -> int:
        key = np.ascontiguousarray(x, dtype=np.float32).tobytes()
        true_class = truth.get(key)
        if true_class is None:
            raise AnnotatorError("sample is outside the annotator's reference pool")
        if hash_unit(key, seed, "keep") < target_accuracy:
            return true_class
        wrong = hash_int(key, seed, M - 1, "wrong")
        return wrong + (wrong >= true_class)

    off_mass = (1.0 - sharpness) / (M - 1)

    def predict(x: np.ndarray) -> np.ndarray:
        vec = np.full(M, off_mass, dtype=np.float32)
        vec[choose_class(x)] = sharpness
        return vec

    return WeakAnnotator(
        predict=predict,
        descriptor=f"noise(acc={target_accuracy:g},sharp={sharpness:g})",
        kind="noise_corruptor",
        num_classes=M,
        payload={
            "reference_X": reference.X,
            "reference_classes": reference.class_labels.astype(np.int64),
            "target_accuracy": float(target_accuracy),
            "sharpness": float(sharpness),
            "seed": int(seed),
        },
    )


def make_rule_annotator(reference: Dataset, target_accuracy: float,
                        sharpness: float = 0.85, seed: int = 0,
                        scope: str = "global") -> WeakAnnotator:
    """Heuristic labeler with systematic, feature-dependent mistakes.

    Unlike the uniform corruptor, errors concentrate in contiguous
    feature regions with a consistent class-confusion pattern, the way a
    weak trained model or a hand-written labeling rule fails.

    scope='global': one corrupted half-space (the reference samples
    furthest along a seeded random direction, sized 1 - target_accuracy);
    inside it every sample is labeled as its true class's confusion
    partner (the class with the nearest centroid). scope='per_class'
    draws a separate direction and quantile per class and mislabels to
    the nearest other centroid of each sample. Accuracy on the reference
    pool equals target_accuracy up to rounding in both cases.
    """
    M = reference.num_classes
    if not reference.has_one_hot_labels():
        raise DataError("rule annotator needs a reference with one-hot ground truth")
    if not (1.0 / M < target_accuracy <= 1.0):
        raise DataError(
            f"target_accuracy={target_accuracy} is at or below chance for M={M}"
        )
    if not (1.0 / M < sharpness <= 1.0):
        raise DataError(f"sharpness must lie in (1/M, 1], got {sharpness}")
    if scope not in ("global", "per_class"):
        raise DataError(f"scope must be 'global' or 'per_class', got {scope!r}")

    flat = reference.X.reshape(len(reference), -1).astype(np.float64)
    classes = reference.class_labels
    centroids = np.stack([flat[classes == c].mean(axis=0) for c in range(M)])
    rng = rng_for(seed, "rule-directions")

    assigned: dict[bytes, int] = {}
    if scope == "global":
        direction = rng.normal(size=flat.shape[1])
        direction /= np.linalg.norm(direction)
        centroid_dists = np.linalg.norm(
            centroids[:, None, :] - centroids[None, :, :], axis=2)
        np.fill_diagonal(centroid_dists, np.inf)
        partner = np.argmin(centroid_dists, axis=1)
        scores = (flat - flat.mean(axis=0)) @ direction
        n_wrong = int(round((1.0 - target_accuracy) * len(flat)))
        wrong = np.zeros(len(flat), dtype=bool)
        wrong[np.argsort(scores)[len(flat) - n_wrong:]] = True
        for i in range(len(flat)):
            c = int(classes[i])
            assigned[reference.X[i].tobytes()] = int(partner[c]) if wrong[i] else c
    else:
        directions = rng.normal(size=(M, flat.shape[1]))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        for c in range(M):
            idx = np.flatnonzero(classes == c)
            if len(idx) == 0:
                continue
            scores = (flat[idx] - centroids[c]) @ directions[c]
            n_wrong = int(round((1.0 - target_accuracy) * len(idx)))
            wrong_local = np.argsort(scores)[len(idx) - n_wrong:]
            wrong_set = set(idx[wrong_local])
            dists = np.linalg.norm(flat[idx][:, None, :] - centroids[None, :, :], axis=2)
            dists[:, c] = np.inf
            nearest_other = np.argmin(dists, axis=1)
            for local, i in enumerate(idx):
                key = reference.X[i].tobytes()
                assigned[key] = int(nearest_other[local]) if i in wrong_set else int(c)

    off_mass = (1.0 - sharpness) / (M - 1)

    def predict(x: np.ndarray) -> np.ndarray:
        key = np.ascontiguousarray(x, dtype=np.float32).tobytes()
        chosen = assigned.get(key)
        if chosen is None:
            raise AnnotatorError("sample is outside the annotator's reference pool")
        vec = np.full(M, off_mass, dtype=np.float32)
        vec[chosen] = sharpness
        return vec

    return WeakAnnotator(
        predict=predict,
        descriptor=f"rule(acc={target_accuracy:g},sharp={sharpness:g},{scope})",
        kind="rule_based",
        num_classes=M,
        payload={
            "reference_X": reference.X,
            "assigned_classes": np.array(
                [assigned[x.tobytes()] for x in reference.X], dtype=np.int64),
            "target_accuracy": float(target_accuracy),
            "sharpness": float(sharpness),
            "seed": int(seed),
            "scope": scope,
        },
    )


def make_earlystop_annotator(train: Dataset, arch=None, epochs: int = 2,
                             seed: int = 0) -> WeakAnnotator:
    """Small classifier trained for exactly `epochs` epochs, wrapped as an
    annotator. Weak accuracy comes from stopping early."""
    from .nets import ArchConfig, build_model, f1_forward
    from .pipeline import train_f1_supervised

    check_positive_int(epochs, "epochs")
    if arch is None:
        arch = ArchConfig.for_dataset(train)
    model = build_model(arch, seed)
    train_f1_supervised(model, train, epochs=epochs, lr=1e-3, batch_size=128,
                        seed=seed, trainable=("phi0", "phi1"))

    import torch

    def predict_batch(X: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            out = f1_forward(model, torch.as_tensor(X, dtype=torch.float32))
        return out.numpy()

    def predict(x: np.ndarray) -> np.ndarray:
        return predict_batch(x[None, ...])[0]

    return WeakAnnotator(
        predict=predict,
        descriptor=f"earlystop(epochs={epochs})",
        kind="trained_earlystop",
        num_classes=train.num_classes,
        payload={"model": model, "predict_batch": predict_batch},
    )


def save_annotator(a: WeakAnnotator, path) -> None:
    """Persist an annotator (noise: corruption table; earlystop: weights)."""
    if a.kind == "noise_corruptor":
        container.write(
            path, "noise_annotator",
            {
                "reference_X": a.payload["reference_X"],
                "reference_classes": a.payload["reference_classes"],
            },
            meta={
                "num_classes": a.num_classes,
                "target_accuracy": a.payload["target_accuracy"],
                "sharpness": a.payload["sharpness"],
                "seed": a.payload["seed"],
            },
        )
        return
    if a.kind == "rule_based":
        container.write(
            path, "rule_annotator",
            {
                "reference_X": a.payload["reference_X"],
                "assigned_classes": a.payload["assigned_classes"],
            },
            meta={
                "num_classes": a.num_classes,
                "target_accuracy": a.payload["target_accuracy"],
                "sharpness": a.payload["sharpness"],
                "seed": a.payload["seed"],
                "scope": a.payload.get("scope", "global"),
            },
        )
        return
    if a.kind == "trained_earlystop":
        from .nets import model_state_arrays

        model = a.payload["model"]
        container.write(
            path, "annotator_weights", model_state_arrays(model),
            meta={"num_classes": a.num_classes, "arch": model.arch.to_meta(),
                  "descriptor": a.descriptor},
        )
        return
    raise SchemaError(f"annotator kind {a.kind!r} is not persistable")


def load_annotator(path) -> WeakAnnotator:
    kind, arrays, meta = container.read(path)
    if kind == "noise_annotator":
        reference = Dataset(
            arrays["reference_X"],
            one_hot(arrays["reference_classes"], int(meta["num_classes"])),
            np.zeros(len(arrays["reference_X"]), np.uint8),
            int(meta["num_classes"]), "annotator-reference",
        )
        return make_noise_annotator(reference, meta["target_accuracy"],
                                    meta["sharpness"], int(meta["seed"]))
    if kind == "rule_annotator":
        M = int(meta["num_classes"])
        assigned = {x.tobytes(): int(c) for x, c in
                    zip(arrays["reference_X"], arrays["assigned_classes"])}
        off_mass = (1.0 - meta["sharpness"]) / (M - 1)

        def rule_predict(x: np.ndarray) -> np.ndarray:
            key = np.ascontiguousarray(x, dtype=np.float32).tobytes()
            chosen = assigned.get(key)
            if chosen is None:
                raise AnnotatorError("sample is outside the annotator's reference pool")
            vec = np.full(M, off_mass, dtype=np.float32)
            vec[chosen] = meta["sharpness"]
            return vec

        return WeakAnnotator(
            predict=rule_predict,
            descriptor=(f"rule(acc={meta['target_accuracy']:g},"
                        f"sharp={meta['sharpness']:g},{meta.get('scope', 'global')})"),
            kind="rule_based",
            num_classes=M,
            payload={
                "reference_X": arrays["reference_X"],
                "assigned_classes": arrays["assigned_classes"],
                "target_accuracy": float(meta["target_accuracy"]),
                "sharpness": float(meta["sharpness"]),
                "seed": int(meta["seed"]),
            },
        )
    if kind == "annotator_weights":
        import torch

        from .nets import ArchConfig, build_model, f1_forward, load_state_arrays

        arch = ArchConfig.from_meta(meta["arch"])
        model = build_model(arch, seed=0)
        load_state_arrays(model, arrays)

        def predict_batch(X: np.ndarray) -> np.ndarray:
            with torch.no_grad():
                out = f1_forward(model, torch.as_tensor(X, dtype=torch.float32))
            return out.numpy()

        return WeakAnnotator(
            predict=lambda x: predict_batch(x[None, ...])[0],
            descriptor=meta.get("descriptor", "earlystop"),
            kind="trained_earlystop",
            num_classes=int(meta["num_classes"]),
            payload={"model": model, "predict_batch": predict_batch},
        )
    raise SchemaError(f"not an annotator container: kind={kind!r}")
