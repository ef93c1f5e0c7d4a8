"""Desk-scale encoder, projector, SE fusion block and classifier head.

Dense layers use row-vector batches: ``y = x @ W.T + b`` with ``W`` stored
as ``(out, in)``, so the SE matrices keep the ``W1: (D/r, D)``,
``W2: (D, D/r)`` orientation of the gating formula.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autograd import ShapeError, Tensor, load_checkpoint, ops, save_checkpoint
from .autograd.ops import conv_output_size

__all__ = [
    "ConvStage",
    "EncoderParams",
    "ProjectorParams",
    "SEParams",
    "ClassifierParams",
    "CheckpointMismatchError",
    "init_encoder",
    "init_projector",
    "init_se",
    "init_classifier",
    "encoder_forward",
    "projector_forward",
    "se_gates",
    "se_fuse",
    "classifier_forward",
    "save_encoder",
    "load_encoder",
    "SUP_WIDTHS",
    "CHAOS_WIDTHS",
    "FULL_SCALE_SE_RATIO",
]

SUP_WIDTHS = (16, 32, 64)
CHAOS_WIDTHS = (8, 16)
# Reduction ratio for full-scale widths; at desk scale (D = 80) it would leave
# a 5-unit bottleneck, so the default there is 4.
FULL_SCALE_SE_RATIO = 16


class CheckpointMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ConvStage:
    out_channels: int
    kernel: int = 3
    stride: int = 2
    padding: int = 1


def _param(data: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


@dataclass
class EncoderParams:
    """Stack of conv + bias + ReLU stages followed by global average pooling."""

    in_channels: int
    stages: tuple[ConvStage, ...]
    weights: dict[str, Tensor] = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.stages[-1].out_channels

    def tensors(self) -> dict[str, Tensor]:
        return self.weights

    def min_input_size(self) -> int:
        size = 1
        for st in reversed(self.stages):
            size = (size - 1) * st.stride + st.kernel - 2 * st.padding
        return max(size, 1)

    def output_size(self, size: int) -> int:
        for st in self.stages:
            size = conv_output_size(size, st.kernel, st.stride, st.padding)
        return size

    def arch(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "stages": [[s.out_channels, s.kernel, s.stride, s.padding] for s in self.stages],
        }

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.in_channels,
            self.stages,
            {k: _param(v.data.copy(), v.dtype) for k, v in self.weights.items()},
        )


@dataclass
class ProjectorParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"proj.w1": self.w1, "proj.b1": self.b1, "proj.w2": self.w2, "proj.b2": self.b2}


@dataclass
class SEParams:
    w1: Tensor
    w2: Tensor
    ratio: int

    @property
    def width(self) -> int:
        return self.w1.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"se.w1": self.w1, "se.w2": self.w2}


@dataclass
class ClassifierParams:
    w: Tensor
    b: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"cls.w": self.w, "cls.b": self.b}


def init_encoder(
    in_channels: int,
    widths=CHAOS_WIDTHS,
    rng: np.random.Generator | None = None,
    kernel: int = 3,
    stride: int = 2,
    dtype=np.float32,
) -> EncoderParams:
    rng = np.random.default_rng(0) if rng is None else rng
    stages = tuple(ConvStage(int(w), kernel, stride, kernel // 2) for w in widths)
    weights = {}
    c = in_channels
    for i, st in enumerate(stages):
        fan_in = c * st.kernel * st.kernel
        weights[f"stage{i}.weight"] = _param(_he(rng, (st.out_channels, c, st.kernel, st.kernel), fan_in), dtype)
        weights[f"stage{i}.bias"] = _param(np.zeros(st.out_channels), dtype)
        c = st.out_channels
    return EncoderParams(in_channels, stages, weights)


def init_projector(d_in: int, d_hidden: int | None = None, d_out: int = 32, rng=None, dtype=np.float32) -> ProjectorParams:
    rng = np.random.default_rng(0) if rng is None else rng
    d_hidden = d_in if d_hidden is None else d_hidden
    return ProjectorParams(
        _param(_he(rng, (d_hidden, d_in), d_in), dtype),
        _param(np.zeros(d_hidden), dtype),
        _param(_he(rng, (d_out, d_hidden), d_hidden) / np.sqrt(2.0), dtype),
        _param(np.zeros(d_out), dtype),
    )


def init_se(width: int, ratio: int = 4, rng=None, dtype=np.float32) -> SEParams:
    """SE weights for a concatenated feature width; hidden width is floored
    ``width // ratio`` and must be at least 1."""
    rng = np.random.default_rng(0) if rng is None else rng
    hidden = width // ratio
    if hidden < 1:
        raise ValueError(f"SE hidden width {width}//{ratio} is < 1")
    return SEParams(
        _param(_he(rng, (hidden, width), width), dtype),
        _param(rng.normal(0.0, np.sqrt(1.0 / hidden), size=(width, hidden)), dtype),
        ratio,
    )


def init_classifier(d_in: int, n_classes: int, rng=None, dtype=np.float32) -> ClassifierParams:
    rng = np.random.default_rng(0) if rng is None else rng
    return ClassifierParams(
        _param(rng.normal(0.0, np.sqrt(1.0 / d_in), size=(n_classes, d_in)), dtype),
        _param(np.zeros(n_classes), dtype),
    )


def _dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError("dense", x.shape, w.shape)
    y = ops.matmul(x, ops.transpose(w))
    return y if b is None else ops.add(y, b)


def encoder_forward(batch: Tensor, p: EncoderParams) -> Tensor:
    """``(N, C, H, W) -> (N, D_f)``: conv/ReLU stages, then spatial mean."""
    if batch.ndim != 4 or batch.shape[1] != p.in_channels:
        raise ShapeError("encoder", batch.shape, (None, p.in_channels, None, None))
    h = batch
    for i, st in enumerate(p.stages):
        h = ops.conv2d(h, p.weights[f"stage{i}.weight"], p.weights[f"stage{i}.bias"], st.stride, st.padding)
        h = ops.relu(h)
    return ops.mean_pool_spatial(h)


def projector_forward(feat: Tensor, p: ProjectorParams) -> Tensor:
    return _dense(ops.relu(_dense(feat, p.w1, p.b1)), p.w2, p.b2)


def se_gates(u: Tensor, p: SEParams) -> Tensor:
    """Attention weights ``sigmoid(W2 relu(W1 U))`` for each row of ``u``."""
    return ops.sigmoid(_dense(ops.relu(_dense(u, p.w1)), p.w2))


def se_fuse(u_sup: Tensor, u_chaos: Tensor | None, p: SEParams) -> Tensor:
    """Concatenate both feature vectors and reweight them by their SE gates.

    ``u_chaos`` may be ``None`` for single-branch ablations.
    """
    u = u_sup if u_chaos is None else ops.concat([u_sup, u_chaos], axis=-1)
    if u.shape[1] != p.width:
        raise ShapeError("se_fuse", u.shape, p.w1.shape)
    return ops.mul(se_gates(u, p), u)


def classifier_forward(fused: Tensor, p: ClassifierParams) -> Tensor:
    return _dense(fused, p.w, p.b)


def save_encoder(path, p: EncoderParams, extra_meta: dict[str, str] | None = None) -> None:
    meta = {"kind": "encoder", "arch": json.dumps(p.arch(), sort_keys=True)}
    meta.update(extra_meta or {})
    save_checkpoint(path, p.weights, meta)


def load_encoder(path, dtype=np.float32, expect_in_channels: int | None = None) -> EncoderParams:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "encoder" or "arch" not in meta:
        raise CheckpointMismatchError(f"{path}: not an encoder checkpoint")
    arch = json.loads(meta["arch"])
    if expect_in_channels is not None and arch["in_channels"] != expect_in_channels:
        raise CheckpointMismatchError(
            f"{path}: expected {expect_in_channels} input channels, found {arch['in_channels']}"
        )
    stages = tuple(ConvStage(*s) for s in arch["stages"])
    weights = {k: _param(v, dtype) for k, v in arrays.items()}
    expected = {f"stage{i}.{n}" for i in range(len(stages)) for n in ("weight", "bias")}
    if set(weights) != expected:
        raise CheckpointMismatchError(f"{path}: expected tensors {sorted(expected)}, found {sorted(weights)}")
    c = arch["in_channels"]
    for i, st in enumerate(stages):
        want = (st.out_channels, c, st.kernel, st.kernel)
        if weights[f"stage{i}.weight"].shape != want:
            raise CheckpointMismatchError(
                f"{path}: stage{i}.weight expected {want}, found {weights[f'stage{i}.weight'].shape}"
            )
        c = st.out_channels
    return EncoderParams(arch["in_channels"], stages, weights)
