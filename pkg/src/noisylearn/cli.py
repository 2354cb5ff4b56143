"""Command-line interface.

Subcommands cover dataset generation, the three training stages, the full
pipeline, the decoupling study, the sampler/regularizer ablation,
diagnostic histograms, and checkpoint evaluation. Exit codes: 0 on
success, 2 for configuration problems, 3 for numeric failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import harness, io
from .credibility import per_sample_stats
from .data import NoiseSpec, apply_noise, make_blobs, train_test_split
from .errors import ConfigError, NumericError
from .harness import MetricsLog, derive_seed
from .semi import train_stage3
from .ssrl import ContrastiveConfig, train_encoder


def _cmd_gen_data(args) -> int:
    ds = make_blobs(n_classes=args.classes, n_per_class=args.per_class,
                    n_features=args.features, separation=args.separation,
                    sigma=args.sigma, seed=args.seed)
    if args.test_out is not None:
        train, test = train_test_split(
            ds, args.test_fraction,
            derive_seed(args.seed, harness.STREAM_SPLIT))
        io.save_dataset_csv(args.test_out, test)
    else:
        train = ds
    spec = NoiseSpec(kind=args.noise_kind, ratio=args.noise_ratio,
                     exclude_true_class=args.exclude_true_class,
                     seed=derive_seed(args.seed, harness.STREAM_NOISE))
    train = apply_noise(train, spec)
    io.save_dataset_csv(args.out, train)
    print(f"wrote {args.out} ({len(train)} rows)")
    if args.test_out is not None:
        print(f"wrote {args.test_out}")
    return 0


def _stage1_config(args) -> ContrastiveConfig:
    return ContrastiveConfig(temperature=args.temperature,
                             batch_size=args.batch_size,
                             epochs=args.epochs, learning_rate=args.lr)


def _cmd_stage1(args) -> int:
    ds = io.load_dataset_csv(args.data)
    result = train_encoder(ds.X, _stage1_config(args), args.seed)
    io.save_checkpoint(args.out, result.encoder)
    if args.loss_csv is not None:
        log = MetricsLog()
        for epoch, value in enumerate(result.loss_curve):
            log.add("stage1", epoch, "train", "nt_xent_loss", value)
        log.to_csv(args.loss_csv)
    print(f"wrote {args.out} (final loss {result.loss_curve[-1]:.4f})")
    return 0


def _cmd_stage2(args) -> int:
    ds = io.load_dataset_csv(args.data)
    encoder, _ = io.load_checkpoint(args.encoder)
    config = harness.Stage2Config(epochs=args.epochs, lr=args.lr,
                                  tau_clean=args.tau_clean,
                                  tau_right=args.tau_right)
    result = harness.run_stage2(encoder, ds, config, args.seed)
    io.save_transfer(args.out, result.transfer, len(ds))
    if args.classifier_out is not None:
        io.save_checkpoint(args.classifier_out, result.probe.classifier)
    if args.hist_dir is not None:
        harness.emit_histograms(args.hist_dir, ds, result.scores.losses,
                                result.scores.confidences, result.y_pred,
                                result.transfer)
    n_l = len(result.transfer.labeled)
    print(f"wrote {args.out} (|L|={n_l}, |U|={len(ds) - n_l})")
    return 0


def _cmd_stage3(args) -> int:
    config = harness.load_config(args.config)
    ds = io.load_dataset_csv(args.data)
    test = io.load_dataset_csv(args.test_data) if args.test_data else None
    encoder, _ = io.load_checkpoint(args.encoder)
    classifier, _ = io.load_checkpoint(args.classifier)
    transfer, n_samples = io.load_transfer(args.transfer)
    if n_samples != len(ds):
        raise ConfigError(
            f"transfer covers {n_samples} samples but data has {len(ds)}")
    result = train_stage3(encoder, classifier, transfer, ds, config.stage3,
                          derive_seed(config.seed, harness.STREAM_STAGE3),
                          test_dataset=test)
    io.save_checkpoint(args.out, result.params, ema=result.ema)
    _write_stage3_csv(args.metrics, result.history)
    print(f"wrote {args.out}")
    return 0


def _write_stage3_csv(path, history: list[dict]) -> None:
    import csv
    columns = ["epoch", "test_acc", "test_acc_ema", "l_sup", "l_unsup",
               "r_graph"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in history:
            out = [row["epoch"]]
            for key in columns[1:]:
                out.append(repr(float(row[key])) if key in row else "")
            writer.writerow(out)


def _cmd_pipeline(args) -> int:
    config = harness.load_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = harness.run_pipeline(config)
    io.save_dataset_csv(out_dir / "train.csv", result.train)
    io.save_dataset_csv(out_dir / "test.csv", result.test)
    io.save_checkpoint(out_dir / "encoder.json", result.stage1.encoder)
    io.save_checkpoint(out_dir / "classifier.json",
                       result.stage2.probe.classifier)
    io.save_transfer(out_dir / "transfer.json", result.transfer,
                     len(result.train))
    if result.stage3 is not None:
        io.save_checkpoint(out_dir / "model.json", result.stage3.params,
                           ema=result.stage3.ema)
    result.metrics.to_csv(out_dir / "metrics.csv")
    harness.emit_histograms(out_dir / "histograms", result.train,
                            result.stage2.scores.losses,
                            result.stage2.scores.confidences,
                            result.stage2.y_pred, result.transfer)
    acc, _ = harness.evaluate(result.final_params(), result.test)
    print(f"final test accuracy {acc:.4f}; artifacts in {out_dir}")
    return 0


def _cmd_decouple(args) -> int:
    config = harness.load_config(args.config)
    log = harness.run_decoupling_experiment(config)
    log.to_csv(args.metrics)
    for regime in harness.DECOUPLING_REGIMES:
        accs = log.series(regime, "accuracy")
        best, last = harness.best_last(accs)
        print(f"{regime}: best {best:.4f} last {last:.4f}")
    return 0


def _cmd_ablate(args) -> int:
    config = harness.load_config(args.config)
    merged = MetricsLog()
    for i in range(args.seeds):
        seed = config.seed if i == 0 else derive_seed(config.seed, 100 + i)
        run_config = dataclasses.replace(config, seed=seed)
        log = harness.run_ablation(run_config)
        suffix = f"_s{i}" if args.seeds > 1 else ""
        for run_id, epoch, split, metric, value in log.rows:
            merged.add(run_id + suffix, epoch, split, metric, value)
    merged.to_csv(args.metrics)
    for run_id in merged.run_ids():
        best = merged.series(run_id, "best_accuracy")
        last = merged.series(run_id, "last_accuracy")
        print(f"{run_id}: best {best[0]:.4f} last {last[0]:.4f}")
    return 0


def _cmd_histograms(args) -> int:
    ds = io.load_dataset_csv(args.data)
    encoder, _ = io.load_checkpoint(args.encoder)
    classifier, _ = io.load_checkpoint(args.classifier)
    transfer, n_samples = io.load_transfer(args.transfer)
    if n_samples != len(ds):
        raise ConfigError(
            f"transfer covers {n_samples} samples but data has {len(ds)}")
    losses, confidences, y_pred = per_sample_stats(encoder, classifier, ds)
    paths = harness.emit_histograms(args.out_dir, ds, losses, confidences,
                                    y_pred, transfer)
    for path in paths.values():
        print(f"wrote {path}")
    return 0


def _cmd_eval(args) -> int:
    params, ema = io.load_checkpoint(args.model)
    if args.ema:
        if ema is None:
            raise ConfigError(f"checkpoint {args.model} has no ema weights")
        params = ema
    test = io.load_dataset_csv(args.data)
    acc, per_class = harness.evaluate(params, test)
    print(f"top1 {acc:.4f}")
    for c, value in enumerate(per_class):
        print(f"class {c}: {value:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisylearn",
        description="Noisy-label learning pipeline: contrastive encoding, "
                    "GMM label triage, semi-supervised retraining.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a blob dataset CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--features", type=int, default=16)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--noise-kind", default="none",
                   choices=["none", "symmetric", "asymmetric"])
    p.add_argument("--noise-ratio", type=float, default=0.0)
    p.add_argument("--exclude-true-class", action="store_true")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--test-out", help="also write a clean stratified test split")
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("stage1", help="contrastive encoder training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--temperature", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--loss-csv", help="write the per-epoch loss curve here")
    p.set_defaults(func=_cmd_stage1)

    p = sub.add_parser("stage2", help="frozen-probe training and label transfer")
    p.add_argument("--encoder", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="transfer JSON path")
    p.add_argument("--tau-clean", type=float, default=0.5)
    p.add_argument("--tau-right", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--classifier-out", help="save the trained probe here")
    p.add_argument("--hist-dir", help="emit loss/confidence histogram CSVs")
    p.set_defaults(func=_cmd_stage2)

    p = sub.add_parser("stage3", help="semi-supervised retraining")
    p.add_argument("--transfer", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--test-data")
    p.set_defaults(func=_cmd_stage3)

    p = sub.add_parser("pipeline", help="run all stages, persist artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("decouple",
                       help="four-regime representation/classifier study")
    p.add_argument("--config", required=True)
    p.add_argument("--metrics", required=True)
    p.set_defaults(func=_cmd_decouple)

    p = sub.add_parser("ablate", help="2x2 sampler/regularizer ablation")
    p.add_argument("--config", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("histograms", help="stage-2 diagnostic histograms")
    p.add_argument("--encoder", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--transfer", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_histograms)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ema", action="store_true",
                   help="use the EMA weights stored in the checkpoint")
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
