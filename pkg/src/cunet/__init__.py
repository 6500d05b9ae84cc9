"""Coupled U-Net cascades for heatmap keypoint regression, self-contained.

The package covers the whole loop on CPU: a small reverse-mode tensor engine
(`tensor`), explicit layer-graph construction with channel bookkeeping for
coupled, stacked, and dense U-Net variants (`graph`), intermediate
supervision placement (`supervision`), synthetic articulated-figure data
(`synth`), PCK evaluation (`metrics`), RMSprop training with checkpoints
(`trainer`), finite-difference gradient verification (`gradcheck`), and a
CLI (`cli`).
"""

from .config import CUNetConfig, DenseUNetConfig, parse_config, parse_config_file
from .gradcheck import finite_diff_check
from .graph import (CalibrationError, NetworkGraph, build_cu_net,
                    build_dense_unet, build_semantic_block, calibrate_dense,
                    forward, param_breakdown, param_count, to_dot)
from .metrics import decode_keypoints, pck
from .supervision import SupervisionPlan, place_supervisions, total_loss
from .synth import DatasetReader, make_sample, write_dataset
from .tensor import Tensor, backward
from .trainer import (RMSProp, build_from_checkpoint, evaluate,
                      load_checkpoint, save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "CUNetConfig", "DenseUNetConfig", "parse_config", "parse_config_file",
    "finite_diff_check",
    "CalibrationError", "NetworkGraph", "build_cu_net", "build_dense_unet",
    "build_semantic_block", "calibrate_dense", "forward", "param_breakdown",
    "param_count", "to_dot",
    "decode_keypoints", "pck",
    "SupervisionPlan", "place_supervisions", "total_loss",
    "DatasetReader", "make_sample", "write_dataset",
    "Tensor", "backward",
    "RMSProp", "build_from_checkpoint", "evaluate", "load_checkpoint",
    "save_checkpoint", "train",
    "__version__",
]
