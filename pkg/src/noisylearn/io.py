"""Artifact serialization: checkpoints, transfer partitions, mixtures, datasets.

All JSON artifacts are written canonically (sorted keys, no whitespace,
shortest round-trip float repr), so save -> load -> save is byte-identical.
Every document carries a format_version; unknown versions are rejected.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .credibility import Gmm1D, TransferEntry, TransferredLabels
from .data import LabeledDataset
from .errors import CheckpointError
from .numnet import Layer, MlpParams

FORMAT_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_text(path, text: str) -> None:
    Path(path).write_text(text + "\n", encoding="utf-8")


def _load_document(path, kind: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{kind} file {path}: not valid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise CheckpointError(f"{kind} file {path}: top level must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{kind} file {path}: unsupported format_version {version!r}")
    return doc


# ---------------------------------------------------------------------------
# Model checkpoints
# ---------------------------------------------------------------------------

def _encode_layers(layers: list[Layer]) -> tuple[list, list]:
    shapes = [[int(l.weight.shape[0]), int(l.weight.shape[1])] for l in layers]
    blobs = [{"weight": l.weight.ravel().tolist(), "bias": l.bias.tolist()}
             for l in layers]
    return shapes, blobs


def _decode_layers(shapes, blobs, field: str) -> list[Layer]:
    if not isinstance(shapes, list) or not isinstance(blobs, list):
        raise CheckpointError(f"checkpoint field {field}: malformed")
    if len(shapes) != len(blobs):
        raise CheckpointError(
            f"checkpoint field {field}: {len(shapes)} shapes for "
            f"{len(blobs)} layers")
    layers = []
    for i, (shape, blob) in enumerate(zip(shapes, blobs)):
        if (not isinstance(shape, list) or len(shape) != 2
                or not all(isinstance(s, int) and s > 0 for s in shape)):
            raise CheckpointError(f"checkpoint field shapes.{field}[{i}]: "
                                  f"expected [fan_in, fan_out], got {shape!r}")
        fan_in, fan_out = shape
        w = np.asarray(blob.get("weight"), dtype=np.float64)
        b = np.asarray(blob.get("bias"), dtype=np.float64)
        if w.size != fan_in * fan_out:
            raise CheckpointError(
                f"checkpoint field {field}[{i}].weight: expected "
                f"{fan_in * fan_out} values, got {w.size}")
        if b.shape != (fan_out,):
            raise CheckpointError(
                f"checkpoint field {field}[{i}].bias: expected {fan_out} "
                f"values, got {b.size}")
        layers.append(Layer(w.reshape(fan_in, fan_out), b))
    return layers


def save_checkpoint(path, params: MlpParams, ema: MlpParams | None = None) -> None:
    enc_shapes, enc_blobs = _encode_layers(params.encoder)
    cls_shapes, cls_blobs = _encode_layers(params.classifier)
    doc = {
        "format_version": FORMAT_VERSION,
        "shapes": {"encoder": enc_shapes, "classifier": cls_shapes},
        "encoder": enc_blobs,
        "classifier": cls_blobs,
        "ema": None,
    }
    if ema is not None:
        e_enc_shapes, e_enc_blobs = _encode_layers(ema.encoder)
        e_cls_shapes, e_cls_blobs = _encode_layers(ema.classifier)
        if e_enc_shapes != enc_shapes or e_cls_shapes != cls_shapes:
            raise CheckpointError("ema shapes do not mirror the parameters")
        doc["ema"] = {"encoder": e_enc_blobs, "classifier": e_cls_blobs}
    _write_text(path, canonical_json(doc))


def load_checkpoint(path) -> tuple[MlpParams, MlpParams | None]:
    doc = _load_document(path, "checkpoint")
    shapes = doc.get("shapes")
    if not isinstance(shapes, dict):
        raise CheckpointError(f"checkpoint file {path}: missing shapes")
    params = MlpParams(
        encoder=_decode_layers(shapes.get("encoder"), doc.get("encoder"),
                               "encoder"),
        classifier=_decode_layers(shapes.get("classifier"),
                                  doc.get("classifier"), "classifier"),
    )
    ema = None
    if doc.get("ema") is not None:
        ema_doc = doc["ema"]
        ema = MlpParams(
            encoder=_decode_layers(shapes.get("encoder"),
                                   ema_doc.get("encoder"), "ema.encoder"),
            classifier=_decode_layers(shapes.get("classifier"),
                                      ema_doc.get("classifier"),
                                      "ema.classifier"),
        )
    return params, ema


# ---------------------------------------------------------------------------
# Transfer partitions
# ---------------------------------------------------------------------------

def save_transfer(path, transfer: TransferredLabels, n_samples: int) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "n_samples": n_samples,
        "n_classes": transfer.n_classes,
        "thresholds": {"tau_clean": transfer.tau_clean,
                       "tau_right": transfer.tau_right},
        "L": [{"index": e.index, "label": e.label, "origin": e.origin}
              for e in transfer.labeled],
        "U": list(transfer.unlabeled),
    }
    _write_text(path, canonical_json(doc))


def load_transfer(path) -> tuple[TransferredLabels, int]:
    doc = _load_document(path, "transfer")
    n_classes = doc.get("n_classes")
    n_samples = doc.get("n_samples")
    if not isinstance(n_classes, int) or n_classes < 2:
        raise CheckpointError(f"transfer file {path}: bad n_classes")
    if not isinstance(n_samples, int) or n_samples < 1:
        raise CheckpointError(f"transfer file {path}: bad n_samples")
    thresholds = doc.get("thresholds") or {}
    labeled = []
    for row in doc.get("L", []):
        try:
            entry = TransferEntry(index=int(row["index"]),
                                  label=int(row["label"]),
                                  origin=str(row["origin"]))
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"transfer file {path}: bad L entry "
                                  f"{row!r}") from e
        if entry.origin not in ("kept", "corrected"):
            raise CheckpointError(f"transfer file {path}: bad origin "
                                  f"{entry.origin!r}")
        if not 0 <= entry.label < n_classes:
            raise CheckpointError(f"transfer file {path}: label out of range "
                                  f"in entry {row!r}")
        labeled.append(entry)
    unlabeled = [int(i) for i in doc.get("U", [])]
    seen = {e.index for e in labeled} | set(unlabeled)
    if len(seen) != len(labeled) + len(unlabeled) or seen != set(range(n_samples)):
        raise CheckpointError(
            f"transfer file {path}: L and U must partition [0, {n_samples})")
    transfer = TransferredLabels(
        labeled=labeled, unlabeled=unlabeled,
        tau_clean=float(thresholds.get("tau_clean", 0.5)),
        tau_right=float(thresholds.get("tau_right", 0.5)),
        n_classes=n_classes,
    )
    return transfer, n_samples


# ---------------------------------------------------------------------------
# Mixture snapshots
# ---------------------------------------------------------------------------

def save_gmm(path, gmm: Gmm1D) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "means": gmm.means.tolist(),
        "variances": gmm.variances.tolist(),
        "weights": gmm.weights.tolist(),
    }
    _write_text(path, canonical_json(doc))


def load_gmm(path) -> Gmm1D:
    doc = _load_document(path, "gmm")
    try:
        return Gmm1D(means=np.asarray(doc["means"], dtype=np.float64),
                     variances=np.asarray(doc["variances"], dtype=np.float64),
                     weights=np.asarray(doc["weights"], dtype=np.float64))
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"gmm file {path}: {e}") from e


# ---------------------------------------------------------------------------
# Dataset CSV
# ---------------------------------------------------------------------------

def save_dataset_csv(path, dataset: LabeledDataset) -> None:
    d = dataset.n_features
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{j}" for j in range(d)] + ["y_clean", "y_noisy"])
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.X[i]]
            row += [int(dataset.y_clean[i]), int(dataset.y_noisy[i])]
            writer.writerow(row)


def load_dataset_csv(path, n_classes: int | None = None) -> LabeledDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if (header is None or len(header) < 3
                or header[-2:] != ["y_clean", "y_noisy"]):
            raise CheckpointError(
                f"dataset file {path}: expected x_*,y_clean,y_noisy header")
        d = len(header) - 2
        if header[:d] != [f"x_{j}" for j in range(d)]:
            raise CheckpointError(f"dataset file {path}: malformed x_ columns")
        X, yc, yn = [], [], []
        for row in reader:
            if len(row) != d + 2:
                raise CheckpointError(
                    f"dataset file {path}: row with {len(row)} fields, "
                    f"expected {d + 2}")
            X.append([float(v) for v in row[:d]])
            yc.append(int(row[d]))
            yn.append(int(row[d + 1]))
    if not X:
        raise CheckpointError(f"dataset file {path}: no rows")
    yc = np.asarray(yc, dtype=np.int64)
    yn = np.asarray(yn, dtype=np.int64)
    if n_classes is None:
        n_classes = int(max(yc.max(), yn.max())) + 1
    return LabeledDataset(np.asarray(X, dtype=np.float64), yc, yn, n_classes)
