"""Weak adaptation learning: train an accurate target-domain classifier
from weak-annotated source data and a small labeled target set, and
evaluate every term of the accompanying error-bound analysis."""

from .annotate import (
    WeakAnnotator,
    annotate_dataset,
    annotator_accuracy,
    load_annotator,
    make_earlystop_annotator,
    make_noise_annotator,
    save_annotator,
)
from .baselines import (
    BaselineResult,
    run_baseline,
    run_bdirect,
    run_bf1,
    run_bf2,
    run_bt,
    run_bwa,
)
from .bound import (
    BoundReport,
    GaussianStats,
    classification_distance,
    classifier_diff,
    classifier_sum,
    composed_risk_check,
    cross_term_sign_check,
    discrepancy_distance_estimate,
    error_bound_report,
    gaussian_kl,
    grad_stats,
    make_classifier_pool,
    pac_bayes_bound,
    posterior_kl_bound,
)
from .config import ExperimentConfig, load_config, preset_config
from .data import (
    Dataset,
    ExperimentData,
    Sample,
    SynthConfig,
    concat_datasets,
    digits_domain_pair,
    load_dataset,
    sample_splits,
    save_dataset,
    shift_domain,
    synth_domain_pair,
)
from .errors import (
    AnnotatorError,
    ConfigError,
    DataError,
    ParseError,
    SchemaError,
    SplitError,
    TrainingAbort,
    WalError,
)
from .estimators import (
    DirectRelabelClassifier,
    FineTuneClassifier,
    TargetOnlyClassifier,
    WeakAdaptationClassifier,
)
from .losses import LossValue, cmmd_loss, combined_loss, discrepancy_loss, kl_loss
from .nets import (
    ArchConfig,
    ModelTriple,
    build_model,
    f1_forward,
    f2_forward,
    load_checkpoint,
    reinitialize,
    save_checkpoint,
)
from .pipeline import (
    F1Classifier,
    RunReport,
    StageReport,
    TrainConfig,
    evaluate,
    run_wal,
    stage1_train,
    stage2_train,
    stage3_relabel,
    stage4_train,
)
from .seeding import derive_seed

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
