"""Small convolutional classifier standing in for a pre-trained backbone."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import top1
from .autodiff import (
    BnState,
    OptimState,
    ShapeError,
    Tensor,
    adam_step,
    avg_pool2,
    backward,
    batch_norm,
    conv2d_3x3,
    cross_entropy,
    gelu,
    global_avg_pool,
    linear,
    zero_grad,
)

__all__ = ["TinyCnn", "backbone_forward", "pretrain_backbone", "predict_logits", "iterate_minibatches"]


@dataclass
class _Stage:
    weight: Tensor
    bn: BnState


@dataclass
class TinyCnn:
    """``[conv3x3 -> BN -> GELU -> avgpool2] * len(widths)`` then GAP + linear."""

    resolution: tuple[int, int]
    num_classes: int
    widths: tuple[int, ...] = (16, 32, 64)
    seed: int = 0
    head_init: str = "uniform"
    stages: list[_Stage] = field(init=False)
    head_weight: Tensor = field(init=False)
    head_bias: Tensor = field(init=False)

    def __post_init__(self):
        h, w = self.resolution
        factor = 2 ** len(self.widths)
        if h % factor or w % factor:
            raise ShapeError(f"resolution {h}x{w} not divisible by {factor}")
        rng = np.random.default_rng(self.seed)
        self.stages = []
        c_in = 3
        for k, c_out in enumerate(self.widths):
            fan_in = c_in * 9
            bound = math.sqrt(6.0 / fan_in)  # He-uniform, GELU is close enough to ReLU
            weight = Tensor(rng.uniform(-bound, bound, (c_out, c_in, 3, 3)), requires_grad=True)
            self.stages.append(_Stage(weight, BnState.create(c_out, prefix=f"backbone.stage{k}.bn")))
            c_in = c_out
        if self.head_init == "zeros":
            hw = np.zeros((self.num_classes, c_in))
        else:
            bound = 1.0 / math.sqrt(c_in)
            hw = rng.uniform(-bound, bound, (self.num_classes, c_in))
        self.head_weight = Tensor(hw, requires_grad=True)
        self.head_bias = Tensor(np.zeros(self.num_classes), requires_grad=True)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for k, st in enumerate(self.stages):
            named += [
                (f"backbone.stage{k}.conv", st.weight),
                (f"backbone.stage{k}.bn.gamma", st.bn.gamma),
                (f"backbone.stage{k}.bn.beta", st.bn.beta),
            ]
        named += [("backbone.head_weight", self.head_weight), ("backbone.head_bias", self.head_bias)]
        return named

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for k, st in enumerate(self.stages):
            out += [
                (f"backbone.stage{k}.bn.running_mean", st.bn.running_mean),
                (f"backbone.stage{k}.bn.running_var", st.bn.running_var),
            ]
        return out

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    @property
    def config(self) -> dict:
        return {"resolution": list(self.resolution), "num_classes": self.num_classes, "widths": list(self.widths)}


def backbone_forward(h_f: Tensor, model: TinyCnn, training: bool = False) -> Tensor:
    if h_f.data.ndim != 4 or h_f.shape[1] != 3 or h_f.shape[2:] != tuple(model.resolution):
        raise ShapeError(f"backbone expects N x 3 x {model.resolution[0]} x {model.resolution[1]}, got {h_f.shape}")
    x = h_f
    for st in model.stages:
        x = avg_pool2(gelu(batch_norm(conv2d_3x3(x, st.weight), st.bn, training)))
    return linear(global_avg_pool(x), model.head_weight, model.head_bias)


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def predict_logits(forward, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Run ``forward(Tensor) -> Tensor`` over ``images`` in eval-sized chunks."""
    chunks = []
    for idx in iterate_minibatches(len(images), batch_size, None):
        chunks.append(forward(Tensor(images[idx])).data)
    return np.concatenate(chunks, axis=0)


def pretrain_backbone(
    model: TinyCnn,
    train,
    val,
    epochs: int = 20,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
) -> float:
    """Train ``model`` on the target-resolution set; return validation top-1."""
    for ds in (train, val):
        if tuple(ds.resolution) != tuple(model.resolution):
            raise ShapeError(f"dataset at {ds.resolution}, backbone expects {model.resolution}")
    params = model.parameters()
    opt = OptimState(lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for idx in iterate_minibatches(len(train), batch_size, rng):
            if len(idx) < 2:
                continue
            zero_grad(params)
            loss = cross_entropy(backbone_forward(Tensor(train.images[idx]), model, True), train.labels[idx])
            backward(loss)
            adam_step(params, opt)
    logits = predict_logits(lambda x: backbone_forward(x, model, False), val.images)
    return top1(logits, val.labels)
