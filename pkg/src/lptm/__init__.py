"""HDR tone mapping on a Laplacian pyramid: per-pixel fused 3D LUTs on the
residual image, learnable local Laplacian refinement of the bands."""

__version__ = "0.1.0"

from ._backend import current as kernel_backend
from .imagecore import load_image, save_image
from .lut import Lut3d, fuse_apply, identity_lut, trilinear_apply
from .pipeline import PipelineConfig, forward, tonemap
from .predictor import ModelState, init_state, read_checkpoint, write_checkpoint
from .pyramid import decompose, reconstruct
from .trainer import PairedDataset, TrainConfig, evaluate, train

__all__ = [
    "Lut3d", "ModelState", "PairedDataset", "PipelineConfig", "TrainConfig", "decompose",
    "evaluate", "forward", "fuse_apply", "identity_lut", "init_state", "kernel_backend",
    "load_image", "read_checkpoint", "reconstruct", "save_image", "tonemap", "train",
    "trilinear_apply", "write_checkpoint",
]
