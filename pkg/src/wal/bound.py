"""Numeric toolkit for the classifier error-bound analysis: Gaussian KL,
gradient statistics, PAC-Bayes terms, classification/discrepancy
distances, classifier composition operators, and executable versions of
the proofs (sign-table and additive risk decomposition checks).

Classifiers here are plain callables mapping a feature batch (N, ...) to
an output matrix (N, M).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import Dataset
from .errors import DataError
from .seeding import rng_for

LOSS_KINDS = ("l1", "l2")


def _rowwise_loss(a: np.ndarray, b: np.ndarray, loss_kind: str) -> np.ndarray:
    if loss_kind not in LOSS_KINDS:
        raise DataError(f"loss_kind must be one of {LOSS_KINDS}, got {loss_kind!r}")
    if a.shape != b.shape:
        raise DataError(f"classifier output widths differ: {a.shape} vs {b.shape}")
    diff = a - b
    if loss_kind == "l1":
        return np.abs(diff).sum(axis=-1)
    return (diff**2).sum(axis=-1)


# ---------------------------------------------------------------------------
# Gaussian KL and PAC-Bayes terms


@dataclass(frozen=True)
class GaussianStats:
    """Aggregated per-sample gradient statistics: mean and variance of a
    single training sample's gradient, plus the sample count."""

    mu: float
    sigma2: float
    m: int

    def __post_init__(self):
        if self.sigma2 < 0:
            raise DataError(f"sigma2 must be >= 0, got {self.sigma2}")
        if self.m < 1:
            raise DataError(f"sample count must be >= 1, got {self.m}")


def gaussian_kl(mu1: float, sigma1: float, mu2: float, sigma2: float) -> float:
    """Closed-form KL divergence between N(mu1, sigma1^2) and N(mu2, sigma2^2)."""
    if sigma1 <= 0 or sigma2 <= 0:
        raise DataError(f"standard deviations must be positive, got {sigma1}, {sigma2}")
    return math.log(sigma2 / sigma1) + (sigma1**2 + (mu1 - mu2) ** 2) / (2 * sigma2**2) - 0.5


def posterior_kl_bound(stats: GaussianStats, sigma_h2: float, m: int | None = None) -> float:
    """Upper bound on KL(posterior || prior) for a zero-mean Gaussian prior
    with variance sigma_h2, given gradient statistics: (sigma^2/m + mu^2)
    / (2 sigma_h2). m defaults to the stats' own sample count."""
    if sigma_h2 <= 0:
        raise DataError(f"sigma_h2 must be positive, got {sigma_h2}")
    m = stats.m if m is None else m
    if m < 1:
        raise DataError(f"sample count must be >= 1, got {m}")
    return (stats.sigma2 / m + stats.mu**2) / (2 * sigma_h2)


def pac_bayes_bound(train_loss: float, kl: float, m: int, delta: float) -> float:
    """Empirical loss plus the sample-quantity complexity term:
    train_loss + 4 sqrt((kl + ln(2m/delta)) / m)."""
    if m < 2:
        raise DataError(f"sample count must be >= 2, got {m}")
    if not (0 < delta <= 1):
        raise DataError(f"delta must lie in (0, 1], got {delta}")
    if train_loss < 0 or kl < 0:
        raise DataError("train_loss and kl must be non-negative")
    return train_loss + 4.0 * math.sqrt((kl + math.log(2 * m / delta)) / m)


# ---------------------------------------------------------------------------
# Per-sample gradient statistics


def per_sample_grad_stats(per_sample_loss, params, n_samples: int) -> GaussianStats:
    """Gradient statistics over individual samples at the current params.

    per_sample_loss(i) must return the scalar loss of sample i at the
    model's present (pre-training) parameters. mu is the gradient mean
    over samples then over parameters; sigma2 the per-parameter population
    variance over samples, then the mean over parameters.
    """
    if n_samples < 1:
        raise DataError("need at least one sample for gradient statistics")
    params = [p for p in params if p.requires_grad]
    if not params:
        raise DataError("no trainable parameters to differentiate")
    sum_g = None
    sum_g2 = None
    for i in range(n_samples):
        loss = per_sample_loss(i)
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        flat = torch.cat([
            g.reshape(-1) if g is not None else torch.zeros(p.numel(), dtype=p.dtype)
            for g, p in zip(grads, params)
        ]).detach().to(torch.float64)
        if not torch.isfinite(flat).all():
            raise DataError(f"non-finite gradient at sample index {i}")
        if sum_g is None:
            sum_g = flat.clone()
            sum_g2 = flat**2
        else:
            sum_g += flat
            sum_g2 += flat**2
    mean_vec = sum_g / n_samples
    var_vec = (sum_g2 / n_samples - mean_vec**2).clamp_min(0.0)
    return GaussianStats(
        mu=float(mean_vec.mean()), sigma2=float(var_vec.mean()), m=n_samples,
    )


def grad_stats(model, ds: Dataset, loss_spec, components=None) -> GaussianStats:
    """Gradient statistics of a model triple on a dataset.

    loss_spec(model, x_row, y_row) -> scalar tensor, evaluated per sample
    at the model's current parameters. components restricts the parameter
    set (defaults to all parameters that receive gradient).
    """
    if len(ds) == 0:
        raise DataError("gradient statistics need a nonempty dataset")
    modules = model.modules()
    names = components or tuple(modules)
    params = [p for name in names for p in modules[name].parameters()]
    X = torch.as_tensor(ds.X, dtype=torch.float32)
    Y = torch.as_tensor(ds.Y, dtype=torch.float32)

    def loss_at(i: int):
        return loss_spec(model, X[i:i + 1], Y[i:i + 1])

    return per_sample_grad_stats(loss_at, params, len(ds))


# ---------------------------------------------------------------------------
# Classification / discrepancy distances and composition operators


def classification_distance(h1, h2, xs, loss_kind: str = "l1") -> float:
    """Expected elementwise loss between two classifiers' outputs over a
    sample set: mean over xs of sum_c L(h1(x)_c, h2(x)_c)."""
    X = xs.X if isinstance(xs, Dataset) else np.asarray(xs)
    if len(X) == 0:
        raise DataError("classification distance needs at least one sample")
    return float(_rowwise_loss(_call(h1, X), _call(h2, X), loss_kind).mean())


def _call(h, X: np.ndarray) -> np.ndarray:
    out = h(X)
    out = np.asarray(out, dtype=np.float64)
    if out.ndim != 2 or out.shape[0] != len(X):
        raise DataError(f"classifier returned shape {out.shape} for {len(X)} samples")
    return out


def discrepancy_distance_estimate(xs_p, xs_q, pool, loss_kind: str = "l1") -> float:
    """Domain discrepancy estimated over a finite classifier pool:
    max over ordered pairs of |CD_P(h1,h2) - CD_Q(h1,h2)|.

    A lower estimate of the true supremum: widening the pool can only
    increase it.
    """
    if len(pool) < 2:
        raise DataError(f"classifier pool must have >= 2 members, got {len(pool)}")
    Xp = xs_p.X if isinstance(xs_p, Dataset) else np.asarray(xs_p)
    Xq = xs_q.X if isinstance(xs_q, Dataset) else np.asarray(xs_q)
    outs_p = [_call(h, Xp) for h in pool]
    outs_q = [_call(h, Xq) for h in pool]
    best = 0.0
    for i in range(len(pool)):
        for j in range(len(pool)):
            cd_p = float(_rowwise_loss(outs_p[i], outs_p[j], loss_kind).mean())
            cd_q = float(_rowwise_loss(outs_q[i], outs_q[j], loss_kind).mean())
            best = max(best, abs(cd_p - cd_q))
    return best


@dataclass
class ComposedClassifier:
    """Signed pointwise combination of classifiers, evaluated lazily:
    output(x) = sum_i sign_i * part_i(x)."""

    parts: list

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X)
        total = None
        for sign, h in self.parts:
            out = sign * _call(h, X)
            if total is None:
                total = out
            elif total.shape != out.shape:
                raise DataError(
                    f"composed classifiers disagree on output width: "
                    f"{total.shape} vs {out.shape}"
                )
            else:
                total = total + out
        return total


def _parts_of(h) -> list:
    return list(h.parts) if isinstance(h, ComposedClassifier) else [(1.0, h)]


def classifier_sum(h1, h2) -> ComposedClassifier:
    """Pointwise sum of two classifiers' outputs."""
    return ComposedClassifier(_parts_of(h1) + _parts_of(h2))


def classifier_diff(h1, h2) -> ComposedClassifier:
    """Pointwise difference of two classifiers' outputs."""
    negated = [(-sign, h) for sign, h in _parts_of(h2)]
    return ComposedClassifier(_parts_of(h1) + negated)


# ---------------------------------------------------------------------------
# Executable proof checks


@dataclass
class RiskCheck:
    holds: bool
    lhs: float
    rhs: float


def composed_risk_check(h, d, hw, hot, xs, loss_kind: str = "l1",
                        tolerance: float = 1e-9) -> RiskCheck:
    """Check the additive risk split for the corrected classifier:

        E L(h + d, hw + hot - hw)  <=  E L(h, hw) + E L(d, hot - hw)

    Holds unconditionally for L1; for L2 it requires d to approximate
    hot - h (the cross term must not be positive), which callers enforce
    by construction.
    """
    lhs = classification_distance(
        classifier_sum(h, d),
        classifier_diff(classifier_sum(hw, hot), hw),
        xs, loss_kind,
    )
    rhs = classification_distance(h, hw, xs, loss_kind) \
        + classification_distance(d, classifier_diff(hot, hw), xs, loss_kind)
    return RiskCheck(holds=lhs <= rhs + tolerance, lhs=lhs, rhs=rhs)


@dataclass
class SignTableCase:
    condition: str
    trials: int
    violations: int
    worst_product: float


def cross_term_sign_check(n_trials: int, seed: int = 0) -> list[SignTableCase]:
    """Exhaustive sign check of the cross term behind the squared-error
    risk split.

    For scalar values with d = hot - h (the closeness premise taken
    exactly), t1 = h - hw and t2 = d - hot + hw must satisfy t1*t2 <= 0
    in all 6 orderings of (hot, h, hw). Returns per-ordering violation
    counts over random triples.
    """
    if n_trials < 1:
        raise DataError("need at least one trial")
    rng = rng_for(seed, "sign-table")
    orderings = [
        ("hot >= h >= hw", (0, 1, 2)),
        ("hot >= hw >= h", (0, 2, 1)),
        ("h >= hot >= hw", (1, 0, 2)),
        ("h >= hw >= hot", (2, 0, 1)),
        ("hw >= hot >= h", (1, 2, 0)),
        ("hw >= h >= hot", (2, 1, 0)),
    ]
    report = []
    for condition, positions in orderings:
        draws = np.sort(rng.uniform(-3.0, 3.0, size=(n_trials, 3)), axis=1)[:, ::-1]
        hot = draws[:, positions[0]]
        h = draws[:, positions[1]]
        hw = draws[:, positions[2]]
        d = hot - h
        t1 = h - hw
        t2 = d - hot + hw
        product = t1 * t2
        report.append(SignTableCase(
            condition=condition,
            trials=n_trials,
            violations=int((product > 0).sum()),
            worst_product=float(product.max()),
        ))
    return report


# ---------------------------------------------------------------------------
# Classifier pools and the full bound report


def dataset_labeler(ds: Dataset):
    """Wrap a dataset's labels as a classifier defined on exactly its own
    feature matrix (row-aligned lookup)."""
    X_ref = ds.X
    Y_ref = ds.Y.astype(np.float64)

    def lookup(X):
        X = np.asarray(X)
        if X.shape != X_ref.shape or not np.array_equal(
                X.astype(np.float32), X_ref):
            raise DataError("label lookup called on features it does not cover")
        return Y_ref

    return lookup


def model_classifier(model):
    """F1 softmax output of a model triple as a pool classifier."""
    from .nets import predict_proba

    return lambda X: predict_proba(model, X)


def correction_classifier(model, annotator):
    """The trained correction head as a classifier d(x)."""
    from .nets import f2_forward, to_tensor

    def run(X):
        X = np.asarray(X, dtype=np.float32)
        if model.arch.direct_correction:
            with torch.no_grad():
                return f2_forward(model, to_tensor(X)).numpy()
        yw = annotator.predict_batch(X)
        with torch.no_grad():
            return f2_forward(model, to_tensor(X), to_tensor(yw)).numpy()

    return run


def annotator_classifier(annotator):
    return lambda X: annotator.predict_batch(np.asarray(X, dtype=np.float32))


def make_classifier_pool(train_sets: list[Dataset], arch, size: int = 8,
                         seed: int = 0, epochs: int = 2, lr: float = 1e-3,
                         batch_size: int = 128) -> list:
    """Hypothesis pool for the discrepancy estimate: half freshly
    initialized models, half briefly trained on the provided datasets
    (cycled)."""
    from .nets import build_model
    from .pipeline import train_f1_supervised

    if size < 2:
        raise DataError("pool size must be >= 2")
    pool = []
    for k in range(size):
        model = build_model(arch, seed=rng_for(seed, "pool", k).integers(2**31))
        if k % 2 == 1 and train_sets:
            ds = train_sets[(k // 2) % len(train_sets)]
            train_f1_supervised(model, ds, epochs=epochs, lr=lr,
                                batch_size=batch_size, seed=seed + k)
        pool.append(model_classifier(model))
    return pool


@dataclass
class BoundReport:
    """Every evaluated term of the error-bound decomposition. total is
    exactly the sum of the delta and quantity terms."""

    delta_terms: dict
    quantity_terms: dict
    total: float
    N_s: int
    N_t: int
    delta: float
    sigma_h2: float
    loss_kind: str
    kl_h: float
    kl_d: float

    @classmethod
    def assemble(cls, delta_terms, quantity_terms, **context) -> "BoundReport":
        total = float(sum(delta_terms.values()) + sum(quantity_terms.values()))
        return cls(delta_terms=dict(delta_terms), quantity_terms=dict(quantity_terms),
                   total=total, **context)


def quantity_terms(stats_h: GaussianStats, stats_d: GaussianStats, N_s: int,
                   N_t: int, delta: float, sigma_h2: float) -> tuple[dict, float, float]:
    """The four sample-quantity terms of the decomposition, with the KL
    bounds evaluated at the given split sizes."""
    if not (0 < delta <= 1):
        raise DataError(f"delta must lie in (0, 1], got {delta}")
    kl_h = posterior_kl_bound(stats_h, sigma_h2, m=N_s)
    kl_d = posterior_kl_bound(stats_d, sigma_h2, m=N_t)
    terms = {
        "kl_d_sample_term": 4.0 * math.sqrt(kl_d / N_t),
        "kl_h_sample_term": 4.0 * math.sqrt(kl_h / N_s),
        "log_target_term": 12.0 * math.sqrt(math.log(2 * N_t / delta) / N_t),
        "log_source_term": 8.0 * math.sqrt(math.log(2 * N_s / delta) / N_s),
    }
    return terms, kl_h, kl_d


def error_bound_report(h_model, d_model, annotator, exp, stats_h: GaussianStats,
                       stats_d: GaussianStats, pool, *, delta: float = 0.05,
                       sigma_h2: float = 1.0, loss_kind: str = "l2",
                       N_s: int | None = None, N_t: int | None = None) -> BoundReport:
    """Evaluate the full decomposition on trained run artifacts.

    Delta terms are empirical losses over the splits; quantity terms use
    N_s/N_t (defaulting to the split sizes — overridable so sweeps can
    vary the sample counts with the gradient statistics held fixed).
    """
    missing = [name for name, value in
               (("h", h_model), ("d", d_model), ("annotator", annotator),
                ("stats_h", stats_h), ("stats_d", stats_d), ("pool", pool))
               if value is None]
    if missing:
        raise DataError(f"bound report is missing constituents: {missing}")
    N_s = len(exp.source) if N_s is None else N_s
    N_t = len(exp.target) if N_t is None else N_t

    hw = annotator_classifier(annotator)
    h = model_classifier(h_model)
    d = correction_classifier(d_model, annotator)
    target_truth = dataset_labeler(exp.target)
    source_truth = dataset_labeler(exp.source)
    gap_on_target = classifier_diff(target_truth, hw)

    delta_terms = {
        "annotator_target_risk_x2": 2.0 * classification_distance(
            hw, target_truth, exp.target, loss_kind),
        "correction_target_risk": classification_distance(
            d, gap_on_target, exp.target, loss_kind),
        "model_source_risk": classification_distance(
            h, hw, exp.source, loss_kind),
        "annotator_source_risk": classification_distance(
            hw, source_truth, exp.source, loss_kind),
        "domain_discrepancy": discrepancy_distance_estimate(
            exp.target, exp.source, pool, loss_kind),
    }
    q_terms, kl_h, kl_d = quantity_terms(stats_h, stats_d, N_s, N_t, delta, sigma_h2)
    return BoundReport.assemble(
        delta_terms, q_terms, N_s=N_s, N_t=N_t, delta=delta, sigma_h2=sigma_h2,
        loss_kind=loss_kind, kl_h=kl_h, kl_d=kl_d,
    )
