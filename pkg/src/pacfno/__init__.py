"""Parallel all-component Fourier neural operator front-ends for resolution-robust classification."""

from .autodiff import Tensor, backward, grad_check
from .backbone import TinyCnn, backbone_forward, pretrain_backbone
from .blocks import FlopsConfig, PacFnoLayer, acfno_block_forward, fno_block_forward, flops_estimate, pacfno_forward, pacfno_param_count
from .data import LabeledImageSet, MultiResDataset, corrupt, gen_shapes, make_multires
from .evaluation import EvalReport, RunConfig, run_experiment, spectra_report
from .metrics import relative_accuracy, top1
from .training import TrainPlan, stage1_train, stage2_train, train_full

__version__ = "0.1.0"
