"""Contrastive pretraining and supervised ensemble fine-tuning.

Full-scale learning rates (encoder 1e-7 / projector 1e-3 for pretraining,
head 1e-4 / backbone 1e-6 for fine-tuning) assume an ImageNet-initialised
backbone; they are kept in ``FULL_SCALE_PRETRAIN_LR`` / ``FULL_SCALE_FINETUNE_LR``.
The dataclass defaults are the desk-scale values used for randomly
initialised small CNNs.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .autograd import Tensor, backward, no_grad, ops
from .data import LabeledDataset, kfold_split
from .dynamics import ChaoticMapSpec
from .imaging import AugmentConfig, center_crop, image_rng, make_view_pair, standard_augment
from .network import (
    CHAOS_WIDTHS,
    SUP_WIDTHS,
    ClassifierParams,
    EncoderParams,
    SEParams,
    classifier_forward,
    encoder_forward,
    init_classifier,
    init_encoder,
    init_projector,
    init_se,
    projector_forward,
    se_fuse,
)

log = logging.getLogger(__name__)

__all__ = [
    "nt_xent",
    "cross_entropy",
    "OptimState",
    "AdamW",
    "adamw_step",
    "cosine_lr",
    "PretrainConfig",
    "PretrainResult",
    "pretrain",
    "NumericalError",
    "FinetuneConfig",
    "EnsembleModel",
    "FoldMetrics",
    "FinetuneResult",
    "train_supervised_backbone",
    "init_chaos_encoder",
    "with_map",
    "finetune",
    "predict",
    "images_to_batch",
    "standardize",
    "FULL_SCALE_PRETRAIN_LR",
    "FULL_SCALE_FINETUNE_LR",
]

FULL_SCALE_PRETRAIN_LR = {"encoder": 1e-7, "projector": 1e-3}
FULL_SCALE_FINETUNE_LR = {"head": 1e-4, "backbone": 1e-6}


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss; ``diagnostics`` holds batch stats."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# losses

def nt_xent(z: Tensor, tau: float = 0.5) -> Tensor:
    """Normalized temperature-scaled cross entropy over ``2N`` rows.

    Rows ``2t`` and ``2t + 1`` form the positive pair of sample ``t``.  Each
    row is an anchor; the loss is the mean over all ``2N`` anchors of
    ``-log(exp(sim_pos / tau) / sum_{k != i} exp(sim_ik / tau))``.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[0] % 2:
        raise ValueError(f"expected an even number (>= 2) of rows, got shape {z.shape}")
    m = z.shape[0]
    zn = ops.l2_normalize(z)
    logits = ops.scale(ops.matmul(zn, ops.transpose(zn)), 1.0 / tau)
    self_mask = np.where(np.eye(m, dtype=bool), -np.inf, 0.0).astype(z.dtype)
    pos = np.zeros((m, m), dtype=z.dtype)
    pos[np.arange(m), np.arange(m) ^ 1] = 1
    denom = ops.log_sum_exp(ops.add(logits, Tensor(self_mask)), axis=1)
    positive = ops.sum(ops.mul(logits, Tensor(pos)), axis=1)
    return ops.mean(ops.add(denom, ops.neg(positive)))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1
    picked = ops.sum(ops.mul(logits, Tensor(onehot)), axis=1)
    return ops.mean(ops.add(ops.log_sum_exp(logits, axis=1), ops.neg(picked)))


# ---------------------------------------------------------------------------
# optimisation

@dataclass
class OptimState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    base_lr: dict[str, float]
    step: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimState,
    lr_scale: float = 1.0,
) -> None:
    """One AdamW update, in place on ``params`` and ``state``.

    Decay is decoupled: ``p -= lr * wd * p`` happens outside the moment
    estimates, then the bias-corrected Adam step is applied.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        lr = state.base_lr[name] * lr_scale
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr == 0.0:
            continue
        if state.weight_decay:
            p -= (lr * state.weight_decay) * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class AdamW:
    """AdamW over named parameter groups, each with its own base learning rate."""

    def __init__(
        self,
        groups: Sequence[tuple[dict[str, Tensor], float]],
        weight_decay: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params: dict[str, Tensor] = {}
        base_lr = {}
        for tensors, lr in groups:
            for name, t in tensors.items():
                if name in self.params:
                    raise ValueError(f"parameter {name!r} appears in two groups")
                self.params[name] = t
                base_lr[name] = float(lr)
        self.state = OptimState(
            m={k: np.zeros_like(t.data) for k, t in self.params.items()},
            v={k: np.zeros_like(t.data) for k, t in self.params.items()},
            base_lr=base_lr,
            weight_decay=weight_decay,
            beta1=betas[0],
            beta2=betas[1],
            eps=eps,
        )

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self, lr_scale: float = 1.0) -> None:
        grads = {
            k: (t.grad if t.grad is not None else np.zeros_like(t.data)).astype(t.dtype, copy=False)
            for k, t in self.params.items()
        }
        adamw_step({k: t.data for k, t in self.params.items()}, grads, self.state, lr_scale)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Cosine annealing from ``base_lr`` at step 0 to 0 at ``total_steps``."""
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step == total_steps:
        return 0.0
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


# ---------------------------------------------------------------------------
# helpers

STANDARDIZE_EPS = 1e-3


def standardize(arr: np.ndarray) -> np.ndarray:
    """Per-image zero mean / unit variance over all pixels and channels.

    A constant image maps to all zeros.
    """
    arr = np.asarray(arr, dtype=np.float64)
    axes = tuple(range(1, arr.ndim))
    mu = arr.mean(axis=axes, keepdims=True)
    sd = arr.std(axis=axes, keepdims=True)
    return (arr - mu) / (sd + STANDARDIZE_EPS)


def images_to_batch(images: Iterable[np.ndarray], dtype=np.float32) -> Tensor:
    """Stack ``(H, W, C)`` images into a standardized ``(N, C, H, W)`` network input."""
    arr = np.stack([np.asarray(im) for im in images]).transpose(0, 3, 1, 2)
    return Tensor(np.ascontiguousarray(standardize(arr), dtype=dtype))


def _check_finite(loss: Tensor, where: str, batch: Tensor) -> None:
    if not np.isfinite(loss.data).all():
        diag = {
            "where": where,
            "loss": float(loss.data),
            "batch_min": float(batch.data.min()),
            "batch_max": float(batch.data.max()),
            "batch_mean": float(batch.data.mean()),
            "batch_shape": list(batch.shape),
        }
        raise NumericalError(f"non-finite loss at {where}", diag)


# ---------------------------------------------------------------------------
# stage 1: contrastive pretraining

@dataclass(frozen=True)
class PretrainConfig:
    tau: float = 0.5
    batch_size: int = 32
    epochs: int = 15
    lr_encoder: float = 1e-2
    lr_projector: float = 1e-2
    weight_decay: float = 0.01
    map: ChaoticMapSpec = field(default_factory=lambda: ChaoticMapSpec("sine"))
    k_min: int = 1
    k_max: int = 5
    crop_size: int = 28
    flip_prob: float = 0.5
    widths: tuple[int, ...] = CHAOS_WIDTHS
    proj_hidden: int | None = None
    proj_dim: int = 32
    seed: int = 7

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.k_min, self.k_max, self.crop_size, self.flip_prob, self.map)


@dataclass
class PretrainResult:
    encoder: EncoderParams
    epoch_losses: list[float]
    batch_losses: list[tuple[int, int, float]]  # (epoch, batch, loss)
    snapshots: dict[int, EncoderParams] = field(default_factory=dict)


def init_chaos_encoder(channels: int, cfg: PretrainConfig) -> EncoderParams:
    """The encoder ``pretrain`` starts from; also the random-init baseline."""
    return init_encoder(channels, cfg.widths, np.random.default_rng([cfg.seed, 3]))


def pretrain(
    dataset: LabeledDataset,
    cfg: PretrainConfig,
    encoder: EncoderParams | None = None,
    snapshot_at: Iterable[int] = (),
) -> PretrainResult:
    """Chaotic contrastive pretraining; labels are ignored.

    Per epoch the images are shuffled with ``default_rng([seed, 1, epoch])``
    and image ``i`` draws its view pair from ``default_rng([seed, i, 2, epoch])``.
    Only full batches are used (the remainder after shuffling is dropped, so
    every NT-Xent value has the same number of negatives); a dataset smaller
    than ``batch_size`` forms a single batch.

    The learning rate is constant, so the encoder after epoch ``e`` of a long
    run equals the result of an ``e``-epoch run; ``snapshot_at`` keeps copies
    at those epoch counts.
    """
    snapshot_at = set(snapshot_at)
    if len(dataset) < 2:
        raise ValueError("pretraining needs at least 2 images")
    if dataset.min_side < cfg.crop_size:
        raise ValueError(f"images smaller than crop_size={cfg.crop_size}")
    aug = cfg.augment
    encoder = init_chaos_encoder(dataset.channels, cfg) if encoder is None else encoder
    projector = init_projector(
        encoder.feature_dim, cfg.proj_hidden, cfg.proj_dim, np.random.default_rng([cfg.seed, 4])
    )
    opt = AdamW(
        [(encoder.tensors(), cfg.lr_encoder), (projector.tensors(), cfg.lr_projector)],
        weight_decay=cfg.weight_decay,
    )
    n = len(dataset)
    epoch_losses: list[float] = []
    batch_losses: list[tuple[int, int, float]] = []
    snapshots: dict[int, EncoderParams] = {}
    if 0 in snapshot_at:
        snapshots[0] = encoder.copy()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(n)
        losses = []
        bs = min(cfg.batch_size, n)
        for b, start in enumerate(range(0, n - bs + 1, bs)):
            idx = order[start : start + bs]
            views = []
            for i in idx:
                pair = make_view_pair(dataset.images[i], image_rng(cfg.seed, int(i), 2, epoch), aug)
                views.extend((pair.view_i, pair.view_j))
            batch = images_to_batch(views)
            z = projector_forward(encoder_forward(batch, encoder), projector)
            loss = nt_xent(z, cfg.tau)
            _check_finite(loss, f"epoch {epoch} batch {b}", batch)
            opt.zero_grad()
            backward(loss)
            opt.step()
            losses.append(float(loss.data))
            batch_losses.append((epoch, b, float(loss.data)))
        epoch_losses.append(float(np.mean(losses)))
        log.info("pretrain epoch %d loss %.6f", epoch, epoch_losses[-1])
        if epoch + 1 in snapshot_at:
            snapshots[epoch + 1] = encoder.copy()
    return PretrainResult(encoder, epoch_losses, batch_losses, snapshots)


# ---------------------------------------------------------------------------
# stage 2: supervised ensemble fine-tuning

@dataclass(frozen=True)
class FinetuneConfig:
    lr_head: float = 1e-2
    lr_backbone: float = 1e-3
    epochs: int = 20
    folds: int = 4
    batch_size: int = 32
    weight_decay: float = 0.01
    se_ratio: int = 4
    sup_widths: tuple[int, ...] = SUP_WIDTHS
    sup_epochs: int = 20
    sup_lr: float = 3e-3
    crop_size: int = 28
    flip_prob: float = 0.5
    seed: int = 7

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not 4 <= self.folds <= 10:
            warnings.warn(f"folds={self.folds} is outside the 4-10 protocol range", stacklevel=2)
        if self.epochs < 0 or self.sup_epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def augment(self) -> AugmentConfig:
        return AugmentConfig(0, 0, self.crop_size, self.flip_prob)


@dataclass
class EnsembleModel:
    """Supervised and chaos backbones fused by an SE block, then a linear head.

    Either backbone may be ``None`` (single-branch ablation).
    """

    sup: EncoderParams | None
    chaos: EncoderParams | None
    se: SEParams
    cls: ClassifierParams

    def head_tensors(self) -> dict[str, Tensor]:
        return {**self.se.tensors(), **self.cls.tensors()}

    def backbone_tensors(self) -> dict[str, Tensor]:
        out = {}
        if self.sup is not None:
            out.update({f"sup.{k}": v for k, v in self.sup.tensors().items()})
        if self.chaos is not None:
            out.update({f"chaos.{k}": v for k, v in self.chaos.tensors().items()})
        return out

    def features(self, batch: Tensor) -> Tensor:
        parts = [encoder_forward(batch, e) for e in (self.sup, self.chaos) if e is not None]
        return se_fuse(parts[0], parts[1] if len(parts) > 1 else None, self.se)

    def forward(self, batch: Tensor) -> Tensor:
        return classifier_forward(self.features(batch), self.cls)


@dataclass
class FoldMetrics:
    fold: int
    accuracy: float
    macro_f1: float
    confusion: np.ndarray
    train_losses: list[float]


@dataclass
class FinetuneResult:
    folds: list[FoldMetrics]
    models: list[EnsembleModel]

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([f.accuracy for f in self.folds])

    @property
    def f1s(self) -> np.ndarray:
        return np.array([f.macro_f1 for f in self.folds])

    def summary(self) -> dict:
        return {
            "mean_accuracy": float(self.accuracies.mean()),
            "std_accuracy": float(self.accuracies.std()),
            "mean_macro_f1": float(self.f1s.mean()),
            "std_macro_f1": float(self.f1s.std()),
            "folds": len(self.folds),
        }


def predict(forward, images: Sequence[np.ndarray], crop_size: int, batch_size: int = 64) -> np.ndarray:
    """Argmax predictions of ``forward`` on center crops."""
    preds = []
    with no_grad():
        for s in range(0, len(images), batch_size):
            batch = images_to_batch([center_crop(im, crop_size) for im in images[s : s + batch_size]])
            preds.append(np.argmax(forward(batch).data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _supervised_loop(
    train: LabeledDataset,
    forward,
    opt: AdamW,
    epochs: int,
    cfg: FinetuneConfig,
    seed_key: Sequence[int],
) -> list[float]:
    aug = cfg.augment
    n = len(train)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = max(epochs * steps_per_epoch, 1)
    step = 0
    epoch_losses = []
    for epoch in range(epochs):
        order = np.random.default_rng([*seed_key, 1, epoch]).permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            crops = [
                standard_augment(train.images[i], image_rng(cfg.seed, int(i), *seed_key, 2, epoch), aug)
                for i in idx
            ]
            batch = images_to_batch(crops)
            loss = cross_entropy(forward(batch), train.labels[idx])
            _check_finite(loss, f"epoch {epoch} step {step}", batch)
            opt.zero_grad()
            backward(loss)
            opt.step(cosine_lr(step, total, 1.0))
            step += 1
            losses.append(float(loss.data))
        epoch_losses.append(float(np.mean(losses)))
    return epoch_losses


def train_supervised_backbone(train: LabeledDataset, cfg: FinetuneConfig, fold: int = 0) -> EncoderParams:
    """Train the larger supervised branch (with a throwaway linear head) on
    the training split; it stands in for an ImageNet-pretrained backbone."""
    enc = init_encoder(train.channels, cfg.sup_widths, np.random.default_rng([cfg.seed, 5, fold]))
    head = init_classifier(enc.feature_dim, train.n_classes, np.random.default_rng([cfg.seed, 6, fold]))
    opt = AdamW([(enc.tensors(), cfg.sup_lr), (head.tensors(), cfg.sup_lr)], cfg.weight_decay)
    _supervised_loop(
        train,
        lambda b: classifier_forward(encoder_forward(b, enc), head),
        opt,
        cfg.sup_epochs,
        cfg,
        (cfg.seed, 7, fold),
    )
    return enc


def _run_fold(
    dataset: LabeledDataset,
    tr: np.ndarray,
    va: np.ndarray,
    f: int,
    chaos_encoder: EncoderParams | None,
    cfg: FinetuneConfig,
    sup_encoder: EncoderParams | None,
    branches: str,
) -> tuple[FoldMetrics, EnsembleModel]:
    from .evaluation import accuracy, confusion, macro_f1

    train, val = dataset.subset(tr), dataset.subset(va)
    sup = None
    if branches != "chaos":
        sup = sup_encoder.copy() if sup_encoder is not None else train_supervised_backbone(train, cfg, f)
    chaos = chaos_encoder.copy() if branches != "sup" else None
    width = sum(e.feature_dim for e in (sup, chaos) if e is not None)
    model = EnsembleModel(
        sup,
        chaos,
        init_se(width, cfg.se_ratio, np.random.default_rng([cfg.seed, 8, f])),
        init_classifier(width, dataset.n_classes, np.random.default_rng([cfg.seed, 9, f])),
    )
    opt = AdamW(
        [(model.head_tensors(), cfg.lr_head), (model.backbone_tensors(), cfg.lr_backbone)],
        cfg.weight_decay,
    )
    losses = _supervised_loop(train, model.forward, opt, cfg.epochs, cfg, (cfg.seed, 10, f))
    preds = predict(model.forward, val.images, cfg.crop_size)
    cm = confusion(preds, val.labels, dataset.n_classes)
    log.info("fold %d (%s): accuracy %.4f", f, branches, accuracy(cm))
    return FoldMetrics(f, accuracy(cm), macro_f1(cm), cm.counts, losses), model


def finetune(
    dataset: LabeledDataset,
    chaos_encoder: EncoderParams | None,
    cfg: FinetuneConfig,
    sup_encoder: EncoderParams | None = None,
    branches: str = "both",
    jobs: int = 1,
) -> FinetuneResult:
    """k-fold training and evaluation of the SE ensemble.

    ``branches`` is ``"both"``, ``"sup"`` or ``"chaos"``.  Per fold the
    supervised backbone is trained on the training split (unless
    ``sup_encoder`` is given), then the SE block and classifier train at
    ``lr_head`` while both backbones train at ``lr_backbone``, all under one
    cosine schedule.  Folds share nothing but the read-only dataset, so
    ``jobs > 1`` runs them in worker processes with identical results.
    """
    if branches not in ("both", "sup", "chaos"):
        raise ValueError(f"unknown branches {branches!r}")
    if branches != "sup":
        if chaos_encoder is None:
            raise ValueError("chaos encoder required")
        if chaos_encoder.in_channels != dataset.channels:
            from .network import CheckpointMismatchError

            raise CheckpointMismatchError(
                f"chaos encoder expects {chaos_encoder.in_channels} channels, dataset has {dataset.channels}"
            )
    splits = kfold_split(dataset, cfg.folds, cfg.seed)
    args = [(dataset, tr, va, f, chaos_encoder, cfg, sup_encoder, branches) for f, (tr, va) in enumerate(splits)]
    if jobs > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            results = list(pool.map(_run_fold, *zip(*args)))
    else:
        results = [_run_fold(*a) for a in args]
    return FinetuneResult([r[0] for r in results], [r[1] for r in results])


def with_map(cfg: PretrainConfig, spec: ChaoticMapSpec, epochs: int | None = None) -> PretrainConfig:
    return replace(cfg, map=spec, epochs=cfg.epochs if epochs is None else epochs)
