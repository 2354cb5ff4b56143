"""Self-supervised contrastive pretraining of the encoder.

Trains the encoder (through a small projection head) with the normalized
temperature-scaled cross-entropy objective on pairs of augmented views, so
the learned representation depends only on inputs, never on labels. The
projection head is discarded after training; downstream stages consume
the encoder output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numnet
from .data import AugmentationSpec, augment_batch
from .errors import ConfigError
from .numnet import MlpParams, Tensor

Array = np.ndarray

NEG_MASK = -1e12  # additive mask for self-similarity terms


def nt_xent_loss(Z, temperature: float):
    """Contrastive loss over an interleaved batch of paired rows.

    Rows 2k and 2k+1 must be the two views of the same example. Accepts a
    plain ndarray (returns float) or a tape Tensor (returns a scalar Tensor
    for backprop). Each row is L2-normalized, all pairwise cosine
    similarities are scaled by `temperature`, the self term is masked out,
    and the loss is the mean cross-entropy of picking the partner row.
    """
    is_tensor = isinstance(Z, Tensor)
    raw = Z.data if is_tensor else np.asarray(Z, dtype=np.float64)
    n = raw.shape[0]
    if n < 4 or n % 2 != 0:
        raise ConfigError(f"nt_xent_loss: need an even batch of >= 4 rows, got {n}")
    if temperature <= 0:
        raise ConfigError("nt_xent_loss: temperature must be positive")
    idx = np.arange(n)
    partner = idx ^ 1  # 2k <-> 2k+1
    eye = np.eye(n) * NEG_MASK

    if is_tensor:
        norms = (Z * Z).sum(axis=1, keepdims=True) ** 0.5
        Zn = Z / norms
        S = (Zn @ Zn.T) * (1.0 / temperature) + eye
        lse = numnet.logsumexp_rows(S).reshape(n)
        pos = S[idx, partner]
        return (lse - pos).mean()

    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    Zn = raw / norms
    S = Zn @ Zn.T / temperature + eye
    row_max = S.max(axis=1, keepdims=True)
    lse = np.log(np.exp(S - row_max).sum(axis=1)) + row_max[:, 0]
    return float((lse - S[idx, partner]).mean())


@dataclass
class ContrastiveConfig:
    """Knobs for the self-supervised stage."""

    temperature: float = 0.5
    batch_size: int = 256
    epochs: int = 200
    learning_rate: float = 1e-3
    eta_min: float = 2e-4
    projection_width: int = 32
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.batch_size < 4 or self.batch_size % 2 != 0:
            raise ConfigError("batch_size must be an even number >= 4")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


@dataclass
class EncoderTrainResult:
    encoder: MlpParams          # trained encoder with empty classifier head
    projection: list            # trained projection layers (rarely needed)
    loss_curve: list[float]     # mean contrastive loss per epoch


def train_encoder(X: Array, config: ContrastiveConfig, seed: int,
                  encoder_widths: list[int] | None = None) -> EncoderTrainResult:
    """Fit the encoder on unlabeled inputs with the contrastive objective.

    Each step draws a batch without labels, produces two augmented views of
    every element, interleaves them, and optimizes encoder + projection
    head jointly with Adam under a cosine schedule. Labels never enter.
    Default architecture: two 64-wide encoder layers.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ConfigError("train_encoder: X must be 2-D with at least 2 rows")
    if encoder_widths is None:
        encoder_widths = [X.shape[1], 64, 64]
    if encoder_widths[0] != X.shape[1]:
        raise ConfigError(
            f"encoder input width {encoder_widths[0]} != data width {X.shape[1]}")
    rng = np.random.default_rng(seed)
    params = numnet.init_mlp(encoder_widths,
                             [encoder_widths[-1], config.projection_width],
                             seed=int(rng.integers(2**31)))
    n = X.shape[0]
    batch = min(config.batch_size, n if n % 2 == 0 else n - 1)
    if batch < 2:
        raise ConfigError("train_encoder: not enough rows for a paired batch")
    steps_per_epoch = math.ceil(n / batch)
    total_steps = steps_per_epoch * config.epochs
    opt = numnet.adam(config.learning_rate)
    step = 0
    loss_curve = []
    for _ in range(config.epochs):
        epoch_losses = []
        for _ in range(steps_per_epoch):
            take = rng.choice(n, size=batch, replace=False)
            v1 = augment_batch(X[take], config.augmentation, rng)
            v2 = augment_batch(X[take], config.augmentation, rng)
            views = np.empty((2 * batch, X.shape[1]))
            views[0::2] = v1
            views[1::2] = v2

            def loss_fn(tape):
                Z = tape.embed(views)
                for i, (w, b) in enumerate(tape.classifier):
                    Z = Z @ w + b
                    if i < len(tape.classifier) - 1:
                        Z = Z.relu()
                return nt_xent_loss(Z, config.temperature)

            value, grads = numnet.grad(params, loss_fn)
            opt.learning_rate = numnet.cosine_lr(
                step, total_steps, config.learning_rate, config.eta_min)
            numnet.optimizer_step(opt, params, grads)
            epoch_losses.append(value)
            step += 1
        loss_curve.append(float(np.mean(epoch_losses)))
    encoder = MlpParams(encoder=params.encoder, classifier=[])
    return EncoderTrainResult(encoder=encoder, projection=list(params.classifier),
                              loss_curve=loss_curve)


def embed(encoder: MlpParams, X: Array) -> Array:
    """Representation of X under a trained encoder (no head applied)."""
    Z, _, _ = numnet.mlp_forward(MlpParams(encoder=encoder.encoder, classifier=[]), X)
    return Z
