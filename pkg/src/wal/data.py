"""Datasets: synthetic domain pairs, shifts, splits and `.wds` serialization.

Desk-scale stand-ins for the full-size benchmark domains: Gaussian blob
class clusters in feature space, plus an optional 8x8 digit pair. All
generators are pure functions of (config, seed).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import container
from .errors import DataError, SchemaError, SplitError
from .seeding import rng_for
from .validation import check_positive_int

DOMAIN_SOURCE = 0
DOMAIN_TARGET = 1
_DOMAIN_NAMES = {DOMAIN_SOURCE: "source", DOMAIN_TARGET: "target"}

SHIFT_KINDS = ("rotation", "mean_offset", "gaussian_noise")


@dataclass(frozen=True)
class Sample:
    """One observation: feature tensor, label vector, domain tag."""

    x: np.ndarray
    y: np.ndarray
    domain: str


@dataclass
class Dataset:
    """A bag of samples with a fixed class count.

    Features are float32 with identical shape across samples; labels are
    length-M float vectors (one-hot when ground truth, probability vectors
    when weak-annotated, possibly unnormalized after relabeling).
    """

    X: np.ndarray
    Y: np.ndarray
    domains: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float32)
        self.Y = np.ascontiguousarray(self.Y, dtype=np.float32)
        self.domains = np.ascontiguousarray(self.domains, dtype=np.uint8)
        if not (len(self.X) == len(self.Y) == len(self.domains)):
            raise DataError(
                f"inconsistent lengths: X={len(self.X)} Y={len(self.Y)} domains={len(self.domains)}"
            )
        if self.Y.ndim != 2 or self.Y.shape[1] != self.num_classes:
            raise DataError(
                f"labels have shape {self.Y.shape}, expected (N, {self.num_classes})"
            )

    def __len__(self) -> int:
        return len(self.X)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.X[i], self.Y[i], _DOMAIN_NAMES[int(self.domains[i])])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.num_classes == other.num_classes
            and self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.Y, other.Y)
            and np.array_equal(self.domains, other.domains)
        )

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return tuple(self.X.shape[1:])

    @property
    def class_labels(self) -> np.ndarray:
        """Argmax class per sample, lowest index on ties."""
        return np.argmax(self.Y, axis=1)

    def has_one_hot_labels(self) -> bool:
        if len(self) == 0:
            return False
        ones = np.isclose(self.Y, 1.0)
        zeros = np.isclose(self.Y, 0.0)
        return bool((ones.sum(axis=1) == 1).all() and (ones | zeros).all())

    def subset(self, indices, name=None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.X[idx], self.Y[idx], self.domains[idx],
            self.num_classes, name or self.name,
        )

    def with_labels(self, Y, name=None) -> "Dataset":
        return Dataset(self.X, Y, self.domains, self.num_classes, name or self.name)

    def with_domain(self, domain: int) -> "Dataset":
        return Dataset(
            self.X, self.Y, np.full(len(self), domain, dtype=np.uint8),
            self.num_classes, self.name,
        )


@dataclass
class ExperimentData:
    """The three disjoint splits one run consumes."""

    source: Dataset
    target: Dataset
    validation: Dataset

    def __post_init__(self):
        classes = {ds.num_classes for ds in (self.source, self.target, self.validation)}
        if len(classes) != 1:
            raise DataError(f"splits disagree on num_classes: {sorted(classes)}")
        if len(self.target) >= len(self.source) > 0:
            warnings.warn(
                f"N_t={len(self.target)} >= N_s={len(self.source)}; the intended "
                "regime is N_t much smaller than N_s",
                stacklevel=2,
            )
        seen: dict[bytes, str] = {}
        for split_name, ds in (("source", self.source), ("target", self.target),
                               ("validation", self.validation)):
            for row in ds.X:
                key = row.tobytes()
                if key in seen and seen[key] != split_name:
                    raise DataError(
                        f"splits are not disjoint: a {split_name} sample also "
                        f"appears in {seen[key]}"
                    )
                seen[key] = split_name

    @property
    def num_classes(self) -> int:
        return self.source.num_classes


@dataclass(frozen=True)
class SynthConfig:
    """Blob domain-pair generator settings.

    modes_per_class > 1 scatters each class over several separated blobs,
    so a small labeled draw cannot cover every mode (the data-starved
    regime the method targets)."""

    M: int = 10
    dim: int = 16
    per_class_count: int = 700
    shift_kind: str = "mean_offset"
    shift_magnitude: float = 2.0
    seed: int = 0
    cluster_sigma: float = 1.0
    mean_spread: float = 1.0
    modes_per_class: int = 1
    noise_dims: int = 0


def one_hot(classes, num_classes: int) -> np.ndarray:
    classes = np.asarray(classes, dtype=np.int64)
    out = np.zeros((len(classes), num_classes), dtype=np.float32)
    out[np.arange(len(classes)), classes] = 1.0
    return out


def synth_domain_pair(cfg: SynthConfig) -> tuple[Dataset, Dataset]:
    """Generate a (source, target) blob pair with a controlled domain gap.

    Both domains share class semantics; the target draws from the source
    generative process pushed through the configured shift. Deterministic
    given cfg.seed.
    """
    check_positive_int(cfg.M, "M", minimum=2)
    check_positive_int(cfg.dim, "dim", minimum=2)
    check_positive_int(cfg.per_class_count, "per_class_count", minimum=1)
    if cfg.shift_kind not in SHIFT_KINDS:
        raise DataError(f"unknown shift_kind {cfg.shift_kind!r}, expected one of {SHIFT_KINDS}")

    k = check_positive_int(cfg.modes_per_class, "modes_per_class", minimum=1)
    means = rng_for(cfg.seed, "class-means").normal(
        0.0, cfg.mean_spread, (cfg.M, k, cfg.dim))

    def draw(domain_tag: str) -> np.ndarray:
        rng = rng_for(cfg.seed, "samples", domain_tag)
        classes = np.repeat(np.arange(cfg.M), cfg.per_class_count)
        modes = rng.integers(k, size=len(classes))
        feats = means[classes, modes] + rng.normal(
            0.0, cfg.cluster_sigma, (len(classes), cfg.dim))
        if cfg.noise_dims > 0:
            # class-free nuisance coordinates; small labeled draws overfit them
            feats = np.concatenate(
                [feats, rng.normal(0.0, 1.0, (len(classes), cfg.noise_dims))], axis=1)
        return feats, classes

    src_X, src_c = draw("source")
    tgt_X, tgt_c = draw("target")
    tgt_X = _apply_shift(tgt_X, cfg)

    source = Dataset(src_X, one_hot(src_c, cfg.M),
                     np.zeros(len(src_X), np.uint8), cfg.M, "synth-source")
    target = Dataset(tgt_X, one_hot(tgt_c, cfg.M),
                     np.ones(len(tgt_X), np.uint8), cfg.M, "synth-target")
    return source, target


def _apply_shift(X: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    rng = rng_for(cfg.seed, "shift")
    if cfg.shift_kind == "mean_offset":
        direction = rng.normal(size=X.shape[1])
        direction /= np.linalg.norm(direction)
        return X + cfg.shift_magnitude * direction
    if cfg.shift_kind == "rotation":
        # rotate by shift_magnitude radians in a fixed random 2-D plane
        basis = np.linalg.qr(rng.normal(size=(X.shape[1], 2)))[0]
        theta = cfg.shift_magnitude
        rot2 = np.array([[np.cos(theta) - 1.0, -np.sin(theta)],
                         [np.sin(theta), np.cos(theta) - 1.0]])
        return X + (X @ basis) @ rot2 @ basis.T
    # gaussian_noise
    return X + rng.normal(0.0, cfg.shift_magnitude, X.shape)


def digits_domain_pair(shift_kind="gaussian_noise", shift_magnitude=2.0, seed=0,
                       image=False) -> tuple[Dataset, Dataset]:
    """Optional 8x8 digit domain pair (two disjoint halves, target shifted).

    With image=True features are (1, 8, 8) tensors, exercising the conv
    backbone; otherwise flat 64-vectors.
    """
    from sklearn.datasets import load_digits

    raw = load_digits()
    X = raw.data.astype(np.float32) / 16.0
    classes = raw.target
    order = rng_for(seed, "digits-order").permutation(len(X))
    half = len(X) // 2
    src_idx, tgt_idx = order[:half], order[half:]

    cfg = SynthConfig(M=10, dim=X.shape[1], shift_kind=shift_kind,
                      shift_magnitude=shift_magnitude, seed=seed)
    if shift_kind not in ("mean_offset", "gaussian_noise"):
        raise DataError("digit pair supports mean_offset or gaussian_noise shifts")
    tgt_X = _apply_shift(X[tgt_idx], cfg)

    def shape(feats):
        return feats.reshape(-1, 1, 8, 8) if image else feats

    source = Dataset(shape(X[src_idx]), one_hot(classes[src_idx], 10),
                     np.zeros(len(src_idx), np.uint8), 10, "digits-source")
    target = Dataset(shape(tgt_X), one_hot(classes[tgt_idx], 10),
                     np.ones(len(tgt_idx), np.uint8), 10, "digits-target")
    return source, target


def shift_domain(ds: Dataset, noise_mean: float, noise_sigma: float, seed: int) -> Dataset:
    """Copy of ds with i.i.d. Gaussian N(noise_mean, noise_sigma^2) added
    to every feature entry. Labels, ordering and domain tags unchanged."""
    if noise_sigma < 0:
        raise DataError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rng = rng_for(seed, "domain-shift")
    noise = rng.normal(noise_mean, noise_sigma, ds.X.shape) if noise_sigma > 0 \
        else np.full(ds.X.shape, noise_mean)
    return Dataset(ds.X + noise.astype(np.float32), ds.Y.copy(), ds.domains.copy(),
                   ds.num_classes, f"{ds.name}+shift")


def sample_splits(source: Dataset, target: Dataset, N_s: int, N_t: int, N_val: int,
                  seed: int) -> ExperimentData:
    """Disjoint draws without replacement: N_s from source, N_t + N_val
    from target. Target and validation indices never collide."""
    if N_s > len(source):
        raise SplitError(f"source has {len(source)} samples, cannot draw N_s={N_s}")
    if N_t + N_val > len(target):
        raise SplitError(
            f"target has {len(target)} samples, cannot draw N_t={N_t} + N_val={N_val}"
        )
    rng = rng_for(seed, "splits")
    src_idx = rng.choice(len(source), size=N_s, replace=False)
    tgt_idx = rng.choice(len(target), size=N_t + N_val, replace=False)
    return ExperimentData(
        source=source.subset(src_idx, "source-split").with_domain(DOMAIN_SOURCE),
        target=target.subset(tgt_idx[:N_t], "target-split").with_domain(DOMAIN_TARGET),
        validation=target.subset(tgt_idx[N_t:], "validation-split").with_domain(DOMAIN_TARGET),
    )


def concat_datasets(a: Dataset, b: Dataset, name="union") -> Dataset:
    if a.num_classes != b.num_classes:
        raise DataError("cannot concatenate datasets with different class counts")
    if a.feature_shape != b.feature_shape:
        raise DataError("cannot concatenate datasets with different feature shapes")
    return Dataset(
        np.concatenate([a.X, b.X]), np.concatenate([a.Y, b.Y]),
        np.concatenate([a.domains, b.domains]), a.num_classes, name,
    )


def save_dataset(ds: Dataset, path) -> None:
    container.write(
        path, "dataset",
        {"features": ds.X, "labels": ds.Y, "domains": ds.domains},
        meta={
            "num_classes": ds.num_classes,
            "name": ds.name,
            "feature_shape": list(ds.feature_shape),
        },
    )


def load_dataset(path) -> Dataset:
    kind, arrays, meta = container.read(path)
    if kind != "dataset":
        raise SchemaError(f"expected a dataset container, found kind={kind!r}")
    for key in ("features", "labels", "domains"):
        if key not in arrays:
            raise SchemaError(f"dataset container missing array {key!r}")
    labels = arrays["labels"]
    M = int(meta["num_classes"])
    if labels.ndim != 2 or labels.shape[1] != M:
        raise SchemaError(
            f"label width {labels.shape[1] if labels.ndim == 2 else labels.shape} "
            f"does not match header num_classes={M}"
        )
    declared = tuple(meta.get("feature_shape", arrays["features"].shape[1:]))
    if tuple(arrays["features"].shape[1:]) != declared:
        raise SchemaError(
            f"feature shape {arrays['features'].shape[1:]} does not match header {declared}"
        )
    return Dataset(arrays["features"], labels, arrays["domains"], M, meta.get("name", ""))
