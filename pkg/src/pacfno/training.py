"""Two-stage training of a PAC-FNO layer in front of a pre-trained backbone.

Stage 1 trains both parameter groups on target-resolution data until the
combined model is harmonised with the standalone backbone. Stage 2 freezes
the backbone and fine-tunes only the PAC-FNO parameters, sweeping the low
resolutions in ascending order and then the target resolution each epoch.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import OptimState, Tensor, adam_step, backward, cross_entropy, zero_grad
from .backbone import TinyCnn, backbone_forward, iterate_minibatches, predict_logits
from .blocks import PacFnoLayer, pacfno_forward
from .data import LabeledImageSet, MultiResDataset
from .metrics import top1

__all__ = [
    "TrainPlan",
    "ParamGroups",
    "TrainReport",
    "harmonized",
    "combined_forward",
    "evaluate_combined",
    "stage1_train",
    "stage2_train",
    "train_full",
]

log = logging.getLogger(__name__)


@dataclass
class TrainPlan:
    k_first: int = 30
    k_second: int = 20
    lr_first: float = 1e-3
    lr_second: float = 1e-6
    delta: float = 1.0
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lr_first < 0 or self.lr_second < 0:
            raise ValueError("learning rates must be non-negative")
        if self.delta < 0:
            raise ValueError("harmonisation tolerance must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2 (batch norm)")


@dataclass
class ParamGroups:
    theta_o: list[Tensor]
    theta_p: list[Tensor]

    @classmethod
    def of(cls, layer: PacFnoLayer, backbone: TinyCnn) -> "ParamGroups":
        groups = cls(layer.parameters(), backbone.parameters())
        if {id(t) for t in groups.theta_o} & {id(t) for t in groups.theta_p}:
            raise ValueError("parameter groups overlap")
        return groups


@dataclass
class TrainReport:
    reference_top1: float
    stage1_epochs: int = 0
    harmonized_epoch: int | None = None
    epochs: list[dict] = field(default_factory=list)
    val_top1: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["val_top1"] = {str(k): v for k, v in self.val_top1.items()}
        return d


def harmonized(combined_val_top1: float, backbone_ref_top1: float, delta: float) -> bool:
    """True when the combined model is within ``delta`` top-1 points of the reference (inclusive)."""
    for v in (combined_val_top1, backbone_ref_top1):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"accuracy {v} outside [0, 1]")
    # tolerance absorbs decimal noise at the inclusive boundary
    return combined_val_top1 >= backbone_ref_top1 - delta / 100.0 - 1e-12


def combined_forward(
    layer: PacFnoLayer, backbone: TinyCnn, x: Tensor, train_layer: bool = False, train_backbone: bool = False
) -> Tensor:
    return backbone_forward(pacfno_forward(x, layer, train_layer), backbone, train_backbone)


def evaluate_combined(layer: PacFnoLayer, backbone: TinyCnn, ds: LabeledImageSet) -> float:
    logits = predict_logits(lambda x: combined_forward(layer, backbone, x), ds.images)
    return top1(logits, ds.labels)


def _run_epoch(layer, backbone, ds, params, opt, batch_size, rng, train_backbone) -> float:
    losses = []
    for idx in iterate_minibatches(len(ds), batch_size, rng):
        if len(idx) < 2:
            continue
        zero_grad(params)
        logits = combined_forward(layer, backbone, Tensor(ds.images[idx]), True, train_backbone)
        loss = cross_entropy(logits, ds.labels[idx])
        backward(loss)
        adam_step(params, opt)
        losses.append(float(loss.data))
    return float(np.mean(losses)) if losses else float("nan")


def stage1_train(
    layer: PacFnoLayer,
    backbone: TinyCnn,
    d_target: LabeledImageSet,
    d_val: LabeledImageSet,
    plan: TrainPlan,
    reference_top1: float,
    report: TrainReport | None = None,
) -> int:
    """Joint training at the target resolution; returns the number of epochs run."""
    if len(d_target) == 0:
        raise ValueError("stage 1 needs a non-empty target-resolution dataset")
    groups = ParamGroups.of(layer, backbone)
    params = groups.theta_o + groups.theta_p
    opt = OptimState(lr=plan.lr_first)
    rng = np.random.default_rng([plan.seed, 1])
    epochs = 0
    for epoch in range(1, plan.k_first + 1):
        loss = _run_epoch(layer, backbone, d_target, params, opt, plan.batch_size, rng, True)
        acc = evaluate_combined(layer, backbone, d_val)
        epochs = epoch
        done = harmonized(acc, reference_top1, plan.delta)
        log.info("stage1 epoch %d loss %.4f val %.4f (ref %.4f)", epoch, loss, acc, reference_top1)
        if report is not None:
            report.epochs.append({"stage": 1, "epoch": epoch, "resolution": d_target.resolution[0], "loss": loss, "val_top1": acc})
            if done:
                report.harmonized_epoch = epoch
        if done:
            break
    if report is not None:
        report.stage1_epochs = epochs
    return epochs


def stage2_train(
    layer: PacFnoLayer,
    backbone: TinyCnn,
    d_r: MultiResDataset,
    plan: TrainPlan,
    report: TrainReport | None = None,
) -> None:
    """Fine-tune only the PAC-FNO parameters; the backbone stays bit-identical."""
    if d_r.target not in d_r.sets:
        raise ValueError("stage 2 needs the target-resolution dataset in D_R")
    if not d_r.low_resolutions:
        raise ValueError("stage 2 needs at least one low-resolution dataset")
    groups = ParamGroups.of(layer, backbone)
    opt = OptimState(lr=plan.lr_second)
    rng = np.random.default_rng([plan.seed, 2])
    frozen = [(p, p.requires_grad) for p in groups.theta_p]
    for p, _ in frozen:
        p.requires_grad = False
    try:
        for epoch in range(1, plan.k_second + 1):
            for res in d_r.low_resolutions + [d_r.target]:
                loss = _run_epoch(layer, backbone, d_r[res], groups.theta_o, opt, plan.batch_size, rng, False)
                log.info("stage2 epoch %d res %d loss %.4f", epoch, res, loss)
                if report is not None:
                    report.epochs.append({"stage": 2, "epoch": epoch, "resolution": res, "loss": loss})
    finally:
        for p, flag in frozen:
            p.requires_grad = flag


def train_full(
    layer: PacFnoLayer,
    backbone: TinyCnn,
    d_r: MultiResDataset,
    val_r: MultiResDataset,
    plan: TrainPlan,
    reference_top1: float,
    stages: tuple[int, ...] = (1, 2),
) -> TrainReport:
    """Stage 1 then stage 2 (``stages`` selects a subset for ablations)."""
    report = TrainReport(reference_top1=reference_top1)
    if 1 in stages:
        stage1_train(layer, backbone, d_r[d_r.target], val_r[val_r.target], plan, reference_top1, report)
    if 2 in stages:
        stage2_train(layer, backbone, d_r, plan, report)
    for res in d_r.resolutions:
        report.val_top1[res] = evaluate_combined(layer, backbone, val_r[res])
    return report
