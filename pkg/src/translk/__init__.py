"""Hybrid large-kernel / axial-attention 3-D segmentation network on a numpy autodiff core."""
from .analysis import CostReport, count_flops, count_params, desa_vs_full_ratio
from .codec import SegmentationNet, build_model
from .config import ConfigError, ModelConfig, RunConfig, TrainConfig, load_config
from .data import SegBatch, gen_synthetic
from .gradcheck import gradcheck_suite
from .kernels import BACKEND
from .losses import dice_ce_loss, dsc
from .tensor import ParamStore, Tape, Tensor, backward, grad_check
from .train import TrainReport, train_toy

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "CostReport", "ModelConfig", "ParamStore", "RunConfig",
    "SegBatch", "Tape", "Tensor", "TrainConfig", "TrainReport", "SegmentationNet", "backward",
    "build_model", "count_flops", "count_params", "desa_vs_full_ratio", "dice_ce_loss", "dsc",
    "gen_synthetic", "grad_check", "gradcheck_suite", "load_config", "train_toy",
]
