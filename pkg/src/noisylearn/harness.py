"""Experiment orchestration: configs, metrics, reference runs, artifacts.

Everything here is deterministic given (config, seed): named RNG streams
are derived from the master seed, runs append to a MetricsLog whose CSV
form is byte-stable, and artifacts round-trip through io. The three
experiment runners reproduce the qualitative studies: the four-regime
decoupling comparison, the full three-stage pipeline against its
baselines, and the 2x2 sampler/regularizer ablation.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numnet
from .credibility import (Stage2Result, TransferredLabels, assess_credibility,
                          per_sample_stats, train_frozen_classifier,
                          transfer_labels)
from .data import (AugmentationSpec, LabeledDataset, NoiseSpec, apply_noise,
                   make_blobs, train_test_split)
from .errors import ConfigError
from .numnet import MlpParams
from .semi import MixMatchConfig, Stage3Result, train_stage3
from .ssrl import ContrastiveConfig, EncoderTrainResult, embed, train_encoder

Array = np.ndarray

# Named RNG streams derived from the master seed, one per consumer.
STREAM_DATA = 0
STREAM_SPLIT = 1
STREAM_NOISE = 2
STREAM_STAGE1 = 3
STREAM_STAGE2 = 4
STREAM_STAGE3 = 5
STREAM_INIT = 6
STREAM_SUPERVISED = 7


def derive_seed(master: int, stream: int) -> int:
    """Independent child seed for a named stream of a master seed."""
    return int(np.random.SeedSequence([master, stream]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

class MetricsLog:
    """Long-format metric rows with a byte-stable CSV rendering."""

    HEADER = ["run_id", "epoch", "split", "metric", "value"]

    def __init__(self):
        self.rows: list[tuple[str, int, str, str, float]] = []
        self._last_epoch: dict[tuple[str, str, str], int] = {}

    def add(self, run_id: str, epoch: int, split: str, metric: str,
            value: float) -> None:
        key = (run_id, split, metric)
        last = self._last_epoch.get(key)
        if last is not None and epoch <= last:
            raise ConfigError(
                f"metrics: epoch {epoch} not increasing for {key}")
        self._last_epoch[key] = epoch
        self.rows.append((run_id, int(epoch), split, metric, float(value)))

    def extend(self, other: "MetricsLog") -> None:
        for run_id, epoch, split, metric, value in other.rows:
            self.add(run_id, epoch, split, metric, value)

    def series(self, run_id: str, metric: str,
               split: str = "test") -> list[float]:
        """Values for one run/metric/split, in epoch order."""
        picked = [(e, v) for r, e, s, m, v in self.rows
                  if r == run_id and m == metric and s == split]
        return [v for _, v in sorted(picked)]

    def run_ids(self) -> list[str]:
        seen = dict.fromkeys(r for r, *_ in self.rows)
        return list(seen)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.HEADER)
            for run_id, epoch, split, metric, value in self.rows:
                writer.writerow([run_id, epoch, split, metric, repr(value)])


def best_last(accuracies: list[float], last_k: int = 10) -> tuple[float, float]:
    """Best = max over epochs; Last = mean of the final min(last_k, n)."""
    if not accuracies:
        raise ConfigError("best_last: empty accuracy sequence")
    tail = accuracies[-last_k:]
    return max(accuracies), float(np.mean(tail))


def evaluate(params: MlpParams, test: LabeledDataset) -> tuple[float, Array]:
    """Top-1 accuracy against clean labels, plus per-class accuracy."""
    if len(test) == 0:
        raise ConfigError("evaluate: empty test set")
    _, _, P = numnet.mlp_forward(params, test.X)
    pred = numnet.predict(P)
    hits = pred == test.y_clean
    per_class = np.zeros(test.n_classes)
    for c in range(test.n_classes):
        members = test.y_clean == c
        per_class[c] = hits[members].mean() if members.any() else 0.0
    return float(hits.mean()), per_class


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class DatasetSpec:
    n_classes: int = 10
    n_per_class: int = 500
    n_features: int = 16
    separation: float = 4.0
    sigma: float = 1.0


@dataclass
class Stage2Config:
    epochs: int = 40
    lr: float = 0.002
    momentum: float = 0.9
    batch_size: int = 128
    tau_clean: float = 0.5
    tau_right: float = 0.5


@dataclass
class SupervisedConfig:
    """End-to-end CE training used by the decoupling study and baselines."""

    epochs: int = 100
    batch_size: int = 128
    lr: float = 0.001
    eta_min: float = 0.001   # default: constant learning rate

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr < self.eta_min:
            raise ConfigError("lr must be >= eta_min")


@dataclass
class ExperimentConfig:
    seed: int
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    test_fraction: float = 0.1
    stage1: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    stage3: MixMatchConfig = field(default_factory=MixMatchConfig)
    supervised: SupervisedConfig = field(default_factory=SupervisedConfig)
    run_stage3: bool = True


def _build_dataclass(cls, data: dict, context: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {context}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(
            f"config section {context}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = known[name].type
        if name == "augmentation":
            value = _build_dataclass(AugmentationSpec, value,
                                     f"{context}.{name}")
        elif name == "pair_map" and value is not None:
            value = {int(k): int(v) for k, v in value.items()}
        elif name == "scale_range":
            value = tuple(value)
        del ftype
        kwargs[name] = value
    return cls(**kwargs)


def load_config(path) -> ExperimentConfig:
    """Parse an experiment config JSON document; the seed is mandatory."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path}: not valid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path}: top level must be an object")
    if "seed" not in data:
        raise ConfigError(f"config file {path}: 'seed' is required")
    return config_from_dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    sections = {
        "dataset": DatasetSpec,
        "noise": NoiseSpec,
        "stage1": ContrastiveConfig,
        "stage2": Stage2Config,
        "stage3": MixMatchConfig,
        "supervised": SupervisedConfig,
    }
    known = {"seed", "test_fraction", "run_stage3", *sections}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    if not isinstance(data.get("seed"), int):
        raise ConfigError("config: 'seed' must be an integer")
    kwargs = {"seed": data["seed"]}
    if "test_fraction" in data:
        kwargs["test_fraction"] = float(data["test_fraction"])
    if "run_stage3" in data:
        kwargs["run_stage3"] = bool(data["run_stage3"])
    for name, cls in sections.items():
        if name in data:
            kwargs[name] = _build_dataclass(cls, data[name], name)
    return ExperimentConfig(**kwargs)


def generate_data(config: ExperimentConfig
                  ) -> tuple[LabeledDataset, LabeledDataset]:
    """Blobs -> stratified split -> noise on the training half only."""
    ds = make_blobs(n_classes=config.dataset.n_classes,
                    n_per_class=config.dataset.n_per_class,
                    n_features=config.dataset.n_features,
                    separation=config.dataset.separation,
                    sigma=config.dataset.sigma,
                    seed=derive_seed(config.seed, STREAM_DATA))
    train, test = train_test_split(ds, config.test_fraction,
                                   derive_seed(config.seed, STREAM_SPLIT))
    noise_rng = np.random.default_rng(derive_seed(config.seed, STREAM_NOISE))
    train = apply_noise(train, config.noise, noise_rng)
    return train, test


# ---------------------------------------------------------------------------
# Supervised reference training (decoupling regimes, CE baseline)
# ---------------------------------------------------------------------------

@dataclass
class SupervisedRunResult:
    params: MlpParams
    train_loss: list[float]
    test_accuracy: list[float]


def train_supervised(params: MlpParams, X: Array, y: Array, n_classes: int,
                     config: SupervisedConfig, seed: int,
                     frozen: tuple[str, ...] = (),
                     test_dataset: LabeledDataset | None = None
                     ) -> SupervisedRunResult:
    """Plain mini-batch CE training of `params` in place.

    `frozen` names parameter groups ("encoder", "classifier") excluded
    from updates; the decoupling regimes use it to pin one half.
    """
    rng = np.random.default_rng(seed)
    targets = numnet.one_hot(y, n_classes)
    n = X.shape[0]
    steps = math.ceil(n / config.batch_size)
    total_steps = steps * config.epochs
    opt = numnet.adam(config.lr)
    train_loss = []
    test_acc = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for s in range(steps):
            take = order[s * config.batch_size:(s + 1) * config.batch_size]
            xb, tb = X[take], targets[take]

            def loss_fn(tape):
                _, _, P = tape.forward(xb)
                return numnet.cross_entropy_rows(P, tb)

            value, grads = numnet.grad(params, loss_fn, frozen=frozen)
            opt.learning_rate = numnet.cosine_lr(step, total_steps,
                                                 config.lr, config.eta_min)
            numnet.optimizer_step(opt, params, grads)
            epoch_losses.append(value)
            step += 1
        train_loss.append(float(np.mean(epoch_losses)))
        if test_dataset is not None:
            acc, _ = evaluate(params, test_dataset)
            test_acc.append(acc)
    return SupervisedRunResult(params=params, train_loss=train_loss,
                               test_accuracy=test_acc)


REGIME_CLEAN = "clean"
REGIME_RETRAIN_REPRESENTATION = "retrain_representation"
REGIME_RETRAIN_CLASSIFIER = "retrain_classifier"
REGIME_NOISY = "noisy"

DECOUPLING_REGIMES = (REGIME_CLEAN, REGIME_RETRAIN_REPRESENTATION,
                      REGIME_RETRAIN_CLASSIFIER, REGIME_NOISY)


def run_decoupling_experiment(config: ExperimentConfig) -> MetricsLog:
    """Four training regimes separating representation and classifier.

    All regimes share one initialization, schedule, and batch order. The
    clean regime trains everything on true labels; the two retrain regimes
    start from its final weights and retrain exactly one half on noisy
    labels (the other half frozen); the noisy regime trains everything on
    noisy labels from scratch.
    """
    if config.noise.kind == "none" or config.noise.ratio == 0.0:
        raise ConfigError("decoupling experiment requires a noise spec")
    train, test = generate_data(config)
    d, C = train.n_features, train.n_classes
    init = numnet.init_mlp([d, 64, 64], [64, C],
                           seed=derive_seed(config.seed, STREAM_INIT))
    loop_seed = derive_seed(config.seed, STREAM_SUPERVISED)
    log = MetricsLog()

    def record(run_id: str, result: SupervisedRunResult) -> None:
        for epoch, value in enumerate(result.train_loss):
            log.add(run_id, epoch, "train", "ce_loss", value)
        for epoch, value in enumerate(result.test_accuracy):
            log.add(run_id, epoch, "test", "accuracy", value)

    clean = train_supervised(init.clone(), train.X, train.y_clean, C,
                             config.supervised, loop_seed,
                             test_dataset=test)
    record(REGIME_CLEAN, clean)

    retrain_repr = MlpParams(encoder=init.clone().encoder,
                             classifier=clean.params.clone().classifier)
    record(REGIME_RETRAIN_REPRESENTATION,
           train_supervised(retrain_repr, train.X, train.y_noisy, C,
                            config.supervised, loop_seed,
                            frozen=("classifier",), test_dataset=test))

    retrain_cls = MlpParams(encoder=clean.params.clone().encoder,
                            classifier=init.clone().classifier)
    record(REGIME_RETRAIN_CLASSIFIER,
           train_supervised(retrain_cls, train.X, train.y_noisy, C,
                            config.supervised, loop_seed,
                            frozen=("encoder",), test_dataset=test))

    record(REGIME_NOISY,
           train_supervised(init.clone(), train.X, train.y_noisy, C,
                            config.supervised, loop_seed, test_dataset=test))
    return log


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    train: LabeledDataset
    test: LabeledDataset
    stage1: EncoderTrainResult
    stage2: "Stage2Result"
    transfer: TransferredLabels
    stage3: Stage3Result | None
    metrics: MetricsLog

    def final_params(self) -> MlpParams:
        """The pipeline's final model: stage-3 result, else the stage-2 probe."""
        if self.stage3 is not None:
            return self.stage3.params
        return MlpParams(encoder=self.stage1.encoder.encoder,
                         classifier=self.stage2.probe.classifier.classifier)


def run_stage2(encoder: MlpParams, train: LabeledDataset,
               config: Stage2Config, seed: int,
               test_dataset: LabeledDataset | None = None) -> "Stage2Result":
    """Frozen-representation probe, credibility scores, and label transfer."""
    probe = train_frozen_classifier(encoder, train, epochs=config.epochs,
                                    lr=config.lr, seed=seed,
                                    momentum=config.momentum,
                                    batch_size=config.batch_size,
                                    test_dataset=test_dataset)
    losses, confidences, y_pred = per_sample_stats(encoder, probe.classifier,
                                                   train)
    scores = assess_credibility(losses, confidences)
    transfer = transfer_labels(train.y_noisy, y_pred, scores,
                               tau_clean=config.tau_clean,
                               tau_right=config.tau_right,
                               n_classes=train.n_classes)
    return Stage2Result(probe=probe, scores=scores, y_pred=y_pred,
                        transfer=transfer)


def run_pipeline(config: ExperimentConfig) -> PipelineResult:
    """Stage-1 -> Stage-2 -> optional Stage-3 under one derived seed tree."""
    train, test = generate_data(config)
    log = MetricsLog()

    stage1 = train_encoder(train.X, config.stage1,
                           derive_seed(config.seed, STREAM_STAGE1))
    for epoch, value in enumerate(stage1.loss_curve):
        log.add("stage1", epoch, "train", "nt_xent_loss", value)

    stage2 = run_stage2(stage1.encoder, train, config.stage2,
                        derive_seed(config.seed, STREAM_STAGE2),
                        test_dataset=test)
    for epoch, value in enumerate(stage2.probe.loss_curve):
        log.add("stage2", epoch, "train", "ce_loss", value)
    for epoch, value in enumerate(stage2.probe.train_accuracy):
        log.add("stage2", epoch, "train", "accuracy", value)
    for epoch, value in enumerate(stage2.probe.test_accuracy):
        log.add("stage2", epoch, "test", "accuracy", value)

    stage3 = None
    if config.run_stage3:
        stage3 = train_stage3(stage1.encoder, stage2.probe.classifier,
                              stage2.transfer, train, config.stage3,
                              derive_seed(config.seed, STREAM_STAGE3),
                              test_dataset=test)
        for row in stage3.history:
            epoch = row["epoch"]
            for metric in ("l_sup", "l_unsup", "r_graph", "total"):
                log.add("stage3", epoch, "train", metric, row[metric])
            if "test_acc" in row:
                log.add("stage3", epoch, "test", "accuracy", row["test_acc"])
                log.add("stage3", epoch, "test", "accuracy_ema",
                        row["test_acc_ema"])

    return PipelineResult(train=train, test=test, stage1=stage1,
                          stage2=stage2, transfer=stage2.transfer,
                          stage3=stage3, metrics=log)


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------

ABLATION_CELLS = (
    ("cbs_on_gsr_on", True, True),
    ("cbs_on_gsr_off", True, False),
    ("cbs_off_gsr_on", False, True),
    ("cbs_off_gsr_off", False, False),
)


def run_ablation(config: ExperimentConfig) -> MetricsLog:
    """2x2 sampler/regularizer grid over one shared transfer.

    Stages 1 and 2 run once; the four stage-3 cells share that transfer,
    the training seed, and the schedule, toggling only use_cbs/use_gsr.
    Per-epoch test accuracy is logged per cell plus Best/Last summaries.
    """
    train, test = generate_data(config)
    stage1 = train_encoder(train.X, config.stage1,
                           derive_seed(config.seed, STREAM_STAGE1))
    stage2 = run_stage2(stage1.encoder, train, config.stage2,
                        derive_seed(config.seed, STREAM_STAGE2),
                        test_dataset=test)
    stage3_seed = derive_seed(config.seed, STREAM_STAGE3)
    log = MetricsLog()
    for run_id, use_cbs, use_gsr in ABLATION_CELLS:
        cell_config = dataclasses.replace(config.stage3, use_cbs=use_cbs,
                                          use_gsr=use_gsr)
        result = train_stage3(stage1.encoder, stage2.probe.classifier,
                              stage2.transfer, train, cell_config,
                              stage3_seed, test_dataset=test)
        accs = []
        for row in result.history:
            log.add(run_id, row["epoch"], "test", "accuracy", row["test_acc"])
            log.add(run_id, row["epoch"], "test", "accuracy_ema",
                    row["test_acc_ema"])
            accs.append(row["test_acc"])
        best, last = best_last(accs)
        final_epoch = result.history[-1]["epoch"]
        log.add(run_id, final_epoch, "test", "best_accuracy", best)
        log.add(run_id, final_epoch, "test", "last_accuracy", last)
    return log


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------

N_BINS = 50


def _split_histogram(path, values: Array, mask: Array,
                     series_true: str, series_false: str) -> None:
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, N_BINS + 1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "bin_left", "bin_right", "count"])
        for series, sel in ((series_true, mask), (series_false, ~mask)):
            counts, _ = np.histogram(values[sel], bins=edges)
            for b in range(N_BINS):
                writer.writerow([series, repr(float(edges[b])),
                                 repr(float(edges[b + 1])), int(counts[b])])


def emit_histograms(out_dir, train: LabeledDataset, losses: Array,
                    confidences: Array, y_pred: Array,
                    transfer: TransferredLabels) -> dict[str, Path]:
    """Diagnostic CSVs: loss and confidence histograms plus L class counts.

    The loss histogram is split by the hidden clean/noisy ground truth and
    the confidence histogram by prediction correctness, both against
    y_clean, which the pipeline itself never reads.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "loss": out_dir / "loss_histogram.csv",
        "confidence": out_dir / "confidence_histogram.csv",
        "class_counts": out_dir / "labeled_class_counts.csv",
    }
    clean_mask = train.y_noisy == train.y_clean
    _split_histogram(paths["loss"], np.asarray(losses), clean_mask,
                     "clean", "noisy")
    correct_mask = np.asarray(y_pred) == train.y_clean
    _split_histogram(paths["confidence"], np.asarray(confidences),
                     correct_mask, "correct", "wrong")
    counts = np.zeros(transfer.n_classes, dtype=np.int64)
    for entry in transfer.labeled:
        counts[entry.label] += 1
    with open(paths["class_counts"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "bin_left", "bin_right", "count"])
        for c in range(transfer.n_classes):
            writer.writerow(["labeled", c, c + 1, int(counts[c])])
    return paths
