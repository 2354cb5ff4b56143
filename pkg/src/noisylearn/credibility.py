"""Label triage on top of a frozen representation.

A linear classifier is trained on the frozen encoder output with the
observed (noisy) labels, and two per-sample statistics are collected:
the cross-entropy loss of each sample under its observed label, and the
confidence the classifier assigns to its own predicted class. A
two-component 1-D Gaussian mixture is fit to each statistic by EM. The
posterior of the low-mean loss component scores how likely an observed
label is clean; the posterior of the high-mean confidence component
scores how likely the prediction is right. Thresholding the two scores
partitions the training set into kept, corrected, and unknown samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numnet
from .data import LabeledDataset
from .errors import ConfigError, DegenerateMixtureError, NumericError
from .numnet import MlpParams

Array = np.ndarray


# ---------------------------------------------------------------------------
# Frozen-representation classifier
# ---------------------------------------------------------------------------

@dataclass
class ProbeTrainResult:
    classifier: MlpParams        # empty encoder, single linear layer
    loss_curve: list[float]
    train_accuracy: list[float]  # against the observed labels it trains on
    test_accuracy: list[float]   # against clean labels; empty without a test set


def train_frozen_classifier(encoder: MlpParams, dataset: LabeledDataset,
                            epochs: int, lr: float = 0.002, seed: int = 0,
                            momentum: float = 0.9,
                            batch_size: int = 128,
                            test_dataset: LabeledDataset | None = None
                            ) -> ProbeTrainResult:
    """Fit a linear head on frozen embeddings against the observed labels.

    The encoder is applied once up front; only the head's weights move.
    """
    if epochs < 1:
        raise ConfigError("train_frozen_classifier: epochs must be >= 1")
    from .ssrl import embed
    Z = embed(encoder, dataset.X)
    Zt = embed(encoder, test_dataset.X) if test_dataset is not None else None
    rng = np.random.default_rng(seed)
    params = numnet.init_mlp([], [Z.shape[1], dataset.n_classes],
                             seed=int(rng.integers(2**31)))
    targets = numnet.one_hot(dataset.y_noisy, dataset.n_classes)
    opt = numnet.sgd(lr, momentum=momentum)
    n = len(dataset)
    steps = math.ceil(n / batch_size)
    loss_curve = []
    train_acc = []
    test_acc = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for s in range(steps):
            take = order[s * batch_size:(s + 1) * batch_size]
            zb, tb = Z[take], targets[take]

            def loss_fn(tape):
                _, _, P = tape.forward(zb)
                return numnet.cross_entropy_rows(P, tb)

            value, grads = numnet.grad(params, loss_fn)
            numnet.optimizer_step(opt, params, grads)
            epoch_losses.append(value)
        loss_curve.append(float(np.mean(epoch_losses)))
        _, _, P = numnet.mlp_forward(params, Z)
        train_acc.append(float(np.mean(numnet.predict(P) == dataset.y_noisy)))
        if Zt is not None:
            _, _, P = numnet.mlp_forward(params, Zt)
            test_acc.append(float(np.mean(
                numnet.predict(P) == test_dataset.y_clean)))
    return ProbeTrainResult(classifier=params, loss_curve=loss_curve,
                            train_accuracy=train_acc, test_accuracy=test_acc)


def per_sample_stats(encoder: MlpParams, classifier: MlpParams,
                     dataset: LabeledDataset) -> tuple[Array, Array, Array]:
    """Per-sample (loss under observed label, predicted confidence, prediction)."""
    from .ssrl import embed
    Z = embed(encoder, dataset.X)
    _, _, P = numnet.mlp_forward(classifier, Z)
    clamped = np.maximum(P, numnet.LOG_FLOOR)
    losses = -np.log(clamped[np.arange(len(dataset)), dataset.y_noisy])
    y_pred = numnet.predict(P)
    confidences = P[np.arange(len(dataset)), y_pred]
    return losses, confidences, y_pred


# ---------------------------------------------------------------------------
# Two-component 1-D Gaussian mixture
# ---------------------------------------------------------------------------

VAR_FLOOR = 1e-6


@dataclass
class Gmm1D:
    """Two-component univariate mixture, components ordered by mean."""

    means: Array
    variances: Array
    weights: Array
    log_likelihood_trace: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not (self.means.shape == self.variances.shape
                == self.weights.shape == (2,)):
            raise ValueError("Gmm1D holds exactly two components")
        if self.means[0] > self.means[1]:
            raise ValueError("components must be ordered by mean")


def _log_gauss(values: Array, mean: float, var: float) -> Array:
    return -0.5 * (np.log(2.0 * np.pi * var) + (values - mean) ** 2 / var)


def fit_gmm_em(values: Array, tol: float = 1e-6, max_iter: int = 200,
               seed: int | None = None) -> Gmm1D:
    """EM fit of a two-component 1-D Gaussian mixture.

    Initialization is deterministic: component means at the 10th and 90th
    percentiles, equal weights, both variances set to the pooled variance.
    (`seed` is accepted for interface stability but unused.)
    Responsibilities are computed in log space; variances are floored at
    1e-6. Iteration stops when the mean log-likelihood improves by less
    than `tol`. The returned components are sorted by mean.
    """
    del seed
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 4:
        raise ConfigError("fit_gmm_em: need at least 4 observations")
    if not np.all(np.isfinite(values)):
        raise NumericError("fit_gmm_em: non-finite observations")
    if np.ptp(values) == 0.0:
        raise DegenerateMixtureError(
            "all observations identical; a two-component mixture fit is undefined")

    means = np.percentile(values, [10.0, 90.0]).astype(np.float64)
    if means[0] == means[1]:
        means = np.array([values.min(), values.max()], dtype=np.float64)
    pooled = max(float(values.var()), VAR_FLOOR)
    variances = np.array([pooled, pooled])
    weights = np.array([0.5, 0.5])

    trace: list[float] = []
    for _ in range(max_iter):
        # E-step in log space
        log_joint = np.stack([
            np.log(weights[k]) + _log_gauss(values, means[k], variances[k])
            for k in range(2)
        ], axis=1)
        row_max = log_joint.max(axis=1, keepdims=True)
        log_norm = row_max[:, 0] + np.log(
            np.exp(log_joint - row_max).sum(axis=1))
        resp = np.exp(log_joint - log_norm[:, None])
        ll = float(log_norm.mean())
        trace.append(ll)

        # M-step
        counts = resp.sum(axis=0)
        counts = np.maximum(counts, 1e-12)
        weights = counts / values.size
        means = (resp * values[:, None]).sum(axis=0) / counts
        variances = (resp * (values[:, None] - means) ** 2).sum(axis=0) / counts
        variances = np.maximum(variances, VAR_FLOOR)

        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < tol:
            break

    order = np.argsort(means, kind="stable")
    return Gmm1D(means=means[order], variances=variances[order],
                 weights=weights[order], log_likelihood_trace=trace)


def gmm_posterior(gmm: Gmm1D, values, component: str):
    """Posterior probability of one component, evaluated in log space.

    `component` selects "low_mean" or "high_mean". A scalar input yields
    a float; an array yields an array of the same shape.
    """
    if component not in ("low_mean", "high_mean"):
        raise ConfigError(f"unknown component selector: {component!r}")
    k = 0 if component == "low_mean" else 1
    arr = np.asarray(values, dtype=np.float64)
    log_joint = np.stack([
        np.log(gmm.weights[j]) + _log_gauss(arr, gmm.means[j], gmm.variances[j])
        for j in range(2)
    ], axis=-1)
    row_max = log_joint.max(axis=-1, keepdims=True)
    log_norm = row_max[..., 0] + np.log(
        np.exp(log_joint - row_max).sum(axis=-1))
    post = np.exp(log_joint[..., k] - log_norm)
    return float(post) if np.isscalar(values) or arr.ndim == 0 else post


# ---------------------------------------------------------------------------
# Label transfer
# ---------------------------------------------------------------------------

@dataclass
class CredibilityScores:
    """Per-sample clean/right posteriors plus the fitted mixtures."""

    p_clean: Array
    p_right: Array
    losses: Array
    confidences: Array
    loss_gmm: Gmm1D | None = None
    confidence_gmm: Gmm1D | None = None


@dataclass
class TransferEntry:
    index: int
    label: int
    origin: str   # "kept" | "corrected"


@dataclass
class TransferredLabels:
    """Partition of training rows into labeled (L) and unlabeled (U) sets."""

    labeled: list[TransferEntry]
    unlabeled: list[int]
    tau_clean: float
    tau_right: float
    n_classes: int

    def labeled_indices(self) -> Array:
        return np.array([e.index for e in self.labeled], dtype=np.int64)

    def labeled_targets(self) -> Array:
        """One-hot targets for the labeled set, in `labeled` order."""
        out = np.zeros((len(self.labeled), self.n_classes))
        for row, entry in enumerate(self.labeled):
            out[row, entry.label] = 1.0
        return out

    def unlabeled_indices(self) -> Array:
        return np.array(self.unlabeled, dtype=np.int64)


def _minmax(values: Array) -> Array:
    span = np.ptp(values)
    if span == 0.0:
        return np.zeros_like(values)
    return (values - values.min()) / span


@dataclass
class Stage2Result:
    """Everything the stage produces: probe, scores, predictions, transfer."""

    probe: ProbeTrainResult
    scores: CredibilityScores
    y_pred: Array
    transfer: "TransferredLabels"


def assess_credibility(losses: Array, confidences: Array) -> CredibilityScores:
    """Fit both mixtures and score every sample.

    Losses are min-max normalized before the fit so the mixture geometry
    does not depend on the loss scale. p_clean is the posterior of the
    low-mean loss component; p_right the posterior of the high-mean
    confidence component. If a statistic is degenerate (constant across
    samples) its posterior falls back to all-ones, leaving the decision
    to the other statistic.
    """
    losses = np.asarray(losses, dtype=np.float64)
    confidences = np.asarray(confidences, dtype=np.float64)
    norm_losses = _minmax(losses)
    try:
        loss_gmm = fit_gmm_em(norm_losses)
        p_clean = gmm_posterior(loss_gmm, norm_losses, "low_mean")
    except DegenerateMixtureError:
        loss_gmm = None
        p_clean = np.ones_like(losses)
    try:
        confidence_gmm = fit_gmm_em(confidences)
        p_right = gmm_posterior(confidence_gmm, confidences, "high_mean")
    except DegenerateMixtureError:
        confidence_gmm = None
        p_right = np.ones_like(confidences)
    return CredibilityScores(p_clean=p_clean, p_right=p_right,
                             losses=losses, confidences=confidences,
                             loss_gmm=loss_gmm, confidence_gmm=confidence_gmm)


def transfer_labels(y_noisy: Array, y_pred: Array, scores: CredibilityScores,
                    tau_clean: float = 0.5, tau_right: float = 0.5,
                    n_classes: int | None = None) -> TransferredLabels:
    """Partition samples by the two credibility scores.

    A sample whose observed label looks clean (p_clean >= tau_clean) keeps
    that label. Otherwise, if the classifier's own prediction looks right
    (p_right >= tau_right), the sample is relabeled with the prediction.
    Everything else becomes unlabeled. Both thresholds are inclusive.
    """
    if not (0.0 <= tau_clean <= 1.0 and 0.0 <= tau_right <= 1.0):
        raise ConfigError("thresholds must lie in [0, 1]")
    y_noisy = np.asarray(y_noisy)
    y_pred = np.asarray(y_pred)
    if y_noisy.shape != y_pred.shape or y_noisy.shape != scores.p_clean.shape:
        raise ConfigError("transfer_labels: misaligned inputs")
    if n_classes is None:
        n_classes = int(max(y_noisy.max(), y_pred.max())) + 1
    labeled: list[TransferEntry] = []
    unlabeled: list[int] = []
    for i in range(y_noisy.shape[0]):
        if scores.p_clean[i] >= tau_clean:
            labeled.append(TransferEntry(index=i, label=int(y_noisy[i]),
                                         origin="kept"))
        elif scores.p_right[i] >= tau_right:
            labeled.append(TransferEntry(index=i, label=int(y_pred[i]),
                                         origin="corrected"))
        else:
            unlabeled.append(i)
    return TransferredLabels(labeled=labeled, unlabeled=unlabeled,
                             tau_clean=tau_clean, tau_right=tau_right,
                             n_classes=n_classes)
