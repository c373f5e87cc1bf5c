"""Scikit-learn style estimators wrapping the training procedures.

All estimators take hyperparameters in __init__ (so get_params/set_params
and clone work), consume numpy arrays in fit, and expose
predict/predict_proba/score. Methods that adapt across domains take a
per-row domain tag, following the convention of domain-adaptation
estimator libraries.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .annotate import WeakAnnotator
from .data import DOMAIN_SOURCE, DOMAIN_TARGET, Dataset, ExperimentData, one_hot
from .errors import DataError
from .nets import build_model
from .pipeline import F1Classifier, TrainConfig, run_wal, train_f1_supervised
from .seeding import derive_seed
from .validation import check_features


def _as_class_array(y, num_classes=None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 2:
        return np.argmax(y, axis=1).astype(np.int64)
    if y.ndim != 1:
        raise DataError(f"labels must be 1-D class indices or 2-D one-hot, got {y.shape}")
    return y.astype(np.int64)


def _domain_mask(domain, n) -> np.ndarray:
    domain = np.asarray(domain)
    if domain.shape != (n,):
        raise DataError(f"domain must have shape ({n},), got {domain.shape}")
    if domain.dtype.kind in "US":
        known = {"source", "target"}
        bad = set(np.unique(domain)) - known
        if bad:
            raise DataError(f"unknown domain tags {sorted(bad)}")
        return domain == "target"
    return domain.astype(np.int64) == DOMAIN_TARGET


class _TripleNetMixin:
    """Shared prediction surface over a fitted model triple."""

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        return self.classifier_.predict_proba(check_features(X))

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return self.classifier_.predict(check_features(X))

    def score(self, X, y) -> float:
        return float(np.mean(self.predict(X) == _as_class_array(y)))

    def _check_fitted(self):
        if not hasattr(self, "classifier_"):
            raise DataError(f"{type(self).__name__} is not fitted yet")

    def _train_config(self, **overrides) -> TrainConfig:
        base = dict(
            alpha=self.alpha, ep1=self.ep1, ep2=self.ep2, ep3=self.ep3,
            ep4=self.ep4, lr=self.lr, batch_size=self.batch_size,
            seed=self.random_state, kl_direction=self.kl_direction,
            cmmd_on=self.cmmd_on, hard_weak_labels=self.hard_weak_labels,
            feature_dim=self.feature_dim,
            backbone_widths=tuple(self.backbone_widths),
            phi1_widths=tuple(self.phi1_widths),
            phi2_widths=tuple(self.phi2_widths),
        )
        base.update(overrides)
        return TrainConfig(**base)


def _experiment_from_arrays(X, y, domain, num_classes) -> ExperimentData:
    X = check_features(X).astype(np.float32)
    classes = _as_class_array(y)
    is_target = _domain_mask(domain, len(X))
    if not is_target.any():
        raise DataError("no target rows: at least one sample must be tagged target")
    if is_target.all():
        raise DataError("no source rows: at least one sample must be tagged source")
    if num_classes is None:
        num_classes = int(classes.max()) + 1
    labels = one_hot(np.clip(classes, 0, None), num_classes)
    labels[classes < 0] = 0.0  # unlabeled source rows carry an empty vector
    src = ~is_target
    if (classes[is_target] < 0).any():
        raise DataError("target rows must be labeled")
    empty = Dataset(np.empty((0, *X.shape[1:]), np.float32),
                    np.empty((0, num_classes), np.float32),
                    np.empty(0, np.uint8), num_classes, "validation")
    return ExperimentData(
        source=Dataset(X[src], labels[src],
                       np.full(src.sum(), DOMAIN_SOURCE, np.uint8),
                       num_classes, "source"),
        target=Dataset(X[is_target], labels[is_target],
                       np.full(is_target.sum(), DOMAIN_TARGET, np.uint8),
                       num_classes, "target"),
        validation=empty,
    )


class WeakAdaptationClassifier(_TripleNetMixin, ClassifierMixin, BaseEstimator):
    """The full four-stage procedure as an estimator.

    Parameters
    ----------
    annotator : WeakAnnotator
        Black-box weak labeler used for the source rows (and the
        correction target on the target rows).
    alpha : float
        Scale of the classified-MMD term in the combined loss.
    ep1..ep4 : int
        Epoch budget of each stage.
    random_state : int
        Master seed; everything derives from it.
    """

    def __init__(self, annotator=None, alpha=1e-4, ep1=20, ep2=10, ep3=20,
                 ep4=30, lr=1e-3, batch_size=128, feature_dim=64,
                 backbone_widths=(64, 64), phi1_widths=(128, 64),
                 phi2_widths=(64,), kl_direction="pred-target",
                 cmmd_on="outputs", hard_weak_labels=False, random_state=0):
        self.annotator = annotator
        self.alpha = alpha
        self.ep1 = ep1
        self.ep2 = ep2
        self.ep3 = ep3
        self.ep4 = ep4
        self.lr = lr
        self.batch_size = batch_size
        self.feature_dim = feature_dim
        self.backbone_widths = backbone_widths
        self.phi1_widths = phi1_widths
        self.phi2_widths = phi2_widths
        self.kl_direction = kl_direction
        self.cmmd_on = cmmd_on
        self.hard_weak_labels = hard_weak_labels
        self.random_state = random_state

    _direct_correction = False

    def fit(self, X, y, domain):
        """Fit from a mixed sample: rows tagged target must carry labels;
        source rows may be unlabeled (y = -1), the annotator labels them."""
        if not isinstance(self.annotator, WeakAnnotator):
            raise DataError("annotator must be a WeakAnnotator instance")
        exp = _experiment_from_arrays(X, y, domain, self.annotator.num_classes)
        cfg = self._train_config()
        self.classifier_, self.report_ = run_wal(
            exp, self.annotator, cfg, direct_correction=self._direct_correction)
        self.classes_ = np.arange(self.annotator.num_classes)
        return self


class DirectRelabelClassifier(WeakAdaptationClassifier):
    """Ablation variant: the correction head reads features only, learns
    the target task directly, and its raw output becomes the new label."""

    _direct_correction = True


class TargetOnlyClassifier(_TripleNetMixin, ClassifierMixin, BaseEstimator):
    """Plain supervised training on the labeled rows (the target-only
    comparison method)."""

    def __init__(self, num_classes=None, epochs=30, lr=1e-3, batch_size=128,
                 feature_dim=64, backbone_widths=(64, 64),
                 phi1_widths=(128, 64), phi2_widths=(64,),
                 kl_direction="pred-target", random_state=0):
        self.num_classes = num_classes
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.feature_dim = feature_dim
        self.backbone_widths = backbone_widths
        self.phi1_widths = phi1_widths
        self.phi2_widths = phi2_widths
        self.kl_direction = kl_direction
        self.random_state = random_state

    alpha = 1e-4
    ep1 = ep2 = ep3 = ep4 = 0
    cmmd_on = "outputs"
    hard_weak_labels = False

    def fit(self, X, y):
        X = check_features(X).astype(np.float32)
        classes = _as_class_array(y)
        M = self.num_classes or int(classes.max()) + 1
        ds = Dataset(X, one_hot(classes, M),
                     np.full(len(X), DOMAIN_TARGET, np.uint8), M, "fit")
        cfg = self._train_config()
        model = build_model(cfg.arch_for(ds), derive_seed(self.random_state, "init"))
        train_f1_supervised(model, ds, epochs=self.epochs, lr=self.lr,
                            batch_size=self.batch_size,
                            seed=derive_seed(self.random_state, "bt"),
                            direction=self.kl_direction)
        self.classifier_ = F1Classifier(model)
        self.classes_ = np.arange(M)
        return self


class FineTuneClassifier(_TripleNetMixin, ClassifierMixin, BaseEstimator):
    """Weak-source pre-training followed by target fine-tuning; tune_all
    selects between head-only and full fine-tuning."""

    def __init__(self, annotator=None, tune_all=False, source_epochs=20,
                 target_epochs=10, lr=1e-3, batch_size=128, feature_dim=64,
                 backbone_widths=(64, 64), phi1_widths=(128, 64),
                 phi2_widths=(64,), kl_direction="pred-target",
                 hard_weak_labels=False, random_state=0):
        self.annotator = annotator
        self.tune_all = tune_all
        self.source_epochs = source_epochs
        self.target_epochs = target_epochs
        self.lr = lr
        self.batch_size = batch_size
        self.feature_dim = feature_dim
        self.backbone_widths = backbone_widths
        self.phi1_widths = phi1_widths
        self.phi2_widths = phi2_widths
        self.kl_direction = kl_direction
        self.hard_weak_labels = hard_weak_labels
        self.random_state = random_state

    alpha = 1e-4
    ep1 = ep2 = ep3 = ep4 = 0
    cmmd_on = "outputs"

    def fit(self, X, y, domain):
        from .baselines import run_bf1, run_bf2  # noqa: F401 (engine shared below)
        from .annotate import annotate_dataset

        if not isinstance(self.annotator, WeakAnnotator):
            raise DataError("annotator must be a WeakAnnotator instance")
        exp = _experiment_from_arrays(X, y, domain, self.annotator.num_classes)
        cfg = self._train_config()
        weak_source = annotate_dataset(self.annotator, exp.source,
                                       hard=self.hard_weak_labels)
        model = build_model(cfg.arch_for(exp.source),
                            derive_seed(self.random_state, "init"))
        train_f1_supervised(model, weak_source, epochs=self.source_epochs,
                            lr=self.lr, batch_size=self.batch_size,
                            seed=derive_seed(self.random_state, "ft", "source"),
                            direction=self.kl_direction)
        tune = ("phi0", "phi1") if self.tune_all else ("phi1",)
        train_f1_supervised(model, exp.target, epochs=self.target_epochs,
                            lr=self.lr, batch_size=self.batch_size,
                            seed=derive_seed(self.random_state, "ft", "target"),
                            trainable=tune, direction=self.kl_direction)
        self.classifier_ = F1Classifier(model)
        self.classes_ = np.arange(self.annotator.num_classes)
        return self
