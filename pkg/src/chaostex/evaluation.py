"""Classification metrics, linear probing and the map-selection ablation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import Tensor, backward, no_grad
from .data import LabeledDataset, kfold_split
from .dynamics import ChaoticMapSpec
from .imaging import center_crop, write_image
from .network import EncoderParams, encoder_forward, init_classifier, classifier_forward
from .training import AdamW, PretrainConfig, cross_entropy, images_to_batch, init_chaos_encoder, pretrain

log = logging.getLogger(__name__)

__all__ = [
    "ConfusionMatrix",
    "confusion",
    "accuracy",
    "macro_f1",
    "per_class_f1",
    "ProbeResult",
    "extract_features",
    "linear_probe",
    "AblationRow",
    "AblationResult",
    "ablate_maps",
    "write_confusion_csv",
    "write_confusion_ppm",
    "format_metric",
    "F1_AVERAGING",
]

# Recorded in metric outputs: F1 is the unweighted mean over classes, with
# a class's F1 taken as 0 when its precision + recall is 0.
F1_AVERAGING = "macro"


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed ``[true, predicted]``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(preds, labels, n: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"preds and labels differ in length: {preds.shape} vs {labels.shape}")
    for name, ids in (("prediction", preds), ("label", labels)):
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise ValueError(f"{name} id out of range [0, {n})")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def _require_nonempty(cm: ConfusionMatrix):
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")


def accuracy(cm: ConfusionMatrix) -> float:
    _require_nonempty(cm)
    return float(np.trace(cm.counts) / cm.total)


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    _require_nonempty(cm)
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    pred_pos = c.sum(axis=0)
    true_pos = c.sum(axis=1)
    precision = np.divide(tp, pred_pos, out=np.zeros_like(tp), where=pred_pos > 0)
    recall = np.divide(tp, true_pos, out=np.zeros_like(tp), where=true_pos > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm: ConfusionMatrix) -> float:
    return float(per_class_f1(cm).mean())


def format_metric(x: float) -> str:
    return f"{x:.4f}"


def write_confusion_csv(path, cm: ConfusionMatrix, class_names: Sequence[str]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(class_names))
        w.writerows(cm.counts.tolist())


def write_confusion_ppm(path, cm: ConfusionMatrix, cell: int = 16) -> None:
    """Row-normalized heatmap, white = 0, dark blue = whole row in one cell."""
    c = cm.counts.astype(np.float64)
    rows = c.sum(axis=1, keepdims=True)
    frac = np.divide(c, rows, out=np.zeros_like(c), where=rows > 0)
    rgb = np.stack([1 - 0.9 * frac, 1 - 0.7 * frac, 1 - 0.3 * frac], axis=-1)
    write_image(path, np.kron(rgb, np.ones((cell, cell, 1))))


# ---------------------------------------------------------------------------
# linear probe

@dataclass
class ProbeResult:
    fold_accuracies: np.ndarray
    fold_f1s: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.fold_accuracies.mean())

    @property
    def std(self) -> float:
        return float(self.fold_accuracies.std())

    @property
    def mean_f1(self) -> float:
        return float(self.fold_f1s.mean())


def extract_features(encoder: EncoderParams, images: Sequence[np.ndarray], crop_size: int, batch_size: int = 64) -> np.ndarray:
    """Pooled encoder features of center crops, float64, no gradients."""
    out = []
    with no_grad():
        for s in range(0, len(images), batch_size):
            batch = images_to_batch([center_crop(im, crop_size) for im in images[s : s + batch_size]])
            out.append(encoder_forward(batch, encoder).data.astype(np.float64))
    return np.concatenate(out)


def linear_probe(
    encoder: EncoderParams,
    dataset: LabeledDataset,
    folds: int = 4,
    seed: int = 7,
    crop_size: int = 28,
    steps: int = 300,
    lr: float = 0.05,
    weight_decay: float = 0.01,
) -> ProbeResult:
    """Frozen-encoder linear classification accuracy, cross-validated.

    Features are standardized with training-fold statistics, then a single
    affine layer is trained full-batch with AdamW for ``steps`` steps.
    """
    feats = extract_features(encoder, dataset.images, crop_size)
    accs, f1s = [], []
    for f, (tr, va) in enumerate(kfold_split(dataset, folds, seed)):
        mu = feats[tr].mean(axis=0)
        sd = feats[tr].std(axis=0) + 1e-8
        xtr = Tensor((feats[tr] - mu) / sd)
        xva = Tensor((feats[va] - mu) / sd)
        head = init_classifier(feats.shape[1], dataset.n_classes, np.random.default_rng([seed, 11, f]), np.float64)
        opt = AdamW([(head.tensors(), lr)], weight_decay)
        for _ in range(steps):
            loss = cross_entropy(classifier_forward(xtr, head), dataset.labels[tr])
            opt.zero_grad()
            backward(loss)
            opt.step()
        with no_grad():
            preds = np.argmax(classifier_forward(xva, head).data, axis=1)
        cm = confusion(preds, dataset.labels[va], dataset.n_classes)
        accs.append(accuracy(cm))
        f1s.append(macro_f1(cm))
    return ProbeResult(np.array(accs), np.array(f1s))


# ---------------------------------------------------------------------------
# map-selection ablation

@dataclass(frozen=True)
class AblationRow:
    map: str
    epochs: int
    accuracy: float
    macro_f1: float
    std_accuracy: float


@dataclass
class AblationResult:
    rows: list[AblationRow]
    baseline: ProbeResult

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epochs", "map", "mean_accuracy", "mean_f1", "std_accuracy"])
            for r in self.rows:
                w.writerow([r.epochs, r.map, format_metric(r.accuracy), format_metric(r.macro_f1), format_metric(r.std_accuracy)])
            w.writerow([0, "random-init", format_metric(self.baseline.mean), format_metric(self.baseline.mean_f1), format_metric(self.baseline.std)])

    def ordering(self) -> list[str]:
        """One line per epoch setting ranking maps by accuracy."""
        lines = []
        for e in sorted({r.epochs for r in self.rows}):
            ranked = sorted((r for r in self.rows if r.epochs == e), key=lambda r: -r.accuracy)
            text = f"{ranked[0].map} ({format_metric(ranked[0].accuracy)})"
            for prev, r in zip(ranked, ranked[1:]):
                sep = " = " if format_metric(r.accuracy) == format_metric(prev.accuracy) else " > "
                text += f"{sep}{r.map} ({format_metric(r.accuracy)})"
            lines.append(f"{e} epochs: {text}")
        return lines


def ablate_maps(
    corpus: LabeledDataset,
    base_cfg: PretrainConfig,
    maps: Sequence[str] = ("sine", "tent", "logistic"),
    epochs: Sequence[int] = (15, 30),
    probe_folds: int = 4,
    probe_steps: int = 300,
) -> AblationResult:
    """Pretrain + linear-probe every (map, epochs) cell.

    All cells share ``base_cfg.seed`` so they start from the same encoder and
    see the same batches; only the chaotic map differs.  Each map is
    pretrained once for ``max(epochs)`` and snapshotted at the shorter
    settings (equivalent to separate runs under a constant learning rate).
    """
    probe = dict(folds=probe_folds, seed=base_cfg.seed, crop_size=base_cfg.crop_size, steps=probe_steps)
    baseline = linear_probe(init_chaos_encoder(corpus.channels, base_cfg), corpus, **probe)
    rows = []
    for name in maps:
        cfg = replace(base_cfg, map=ChaoticMapSpec.from_name(name), epochs=max(epochs))
        run = pretrain(corpus, cfg, snapshot_at=epochs)
        for e in epochs:
            res = linear_probe(run.snapshots[e], corpus, **probe)
            rows.append(AblationRow(name, e, res.mean, res.mean_f1, res.std))
            log.info("ablation %s/%d: accuracy %.4f", name, e, res.mean)
    rows.sort(key=lambda r: (r.epochs, list(maps).index(r.map)))
    result = AblationResult(rows, baseline)
    for line in result.ordering():
        log.info("map ordering, %s", line)
    return result
