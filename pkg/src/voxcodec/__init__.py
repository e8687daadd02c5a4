"""voxcodec: learned point cloud geometry compression at desk scale."""

from .codec import PRESETS, Bitstream, ConditionPreset, EncodeResult, decode, encode
from .errors import (
    ConfigurationError,
    DecodingError,
    DomainError,
    EncodingError,
    ModelMismatchError,
    ParseError,
    ShapeError,
    TrainingError,
    UsageError,
    VoxcodecError,
)
from .geometry import PointCloud, VoxelSet, from_voxels, read_ply, to_voxels, write_ply
from .metrics import (
    RdCurve,
    RdPoint,
    bd_psnr,
    d1_mse,
    d2_mse,
    estimate_normals,
    geometry_psnr,
)
from .model import CompressionModel
from .nn.weights import WeightStore
from .partition import BlockGrid, block_to_tensor, merge_blocks, partition_blocks, tensor_to_block
from .sweep import SweepResult, rd_sweep, run_condition_suite
from .threshold import ThresholdCode, apply_threshold, optimal_threshold
from .training import (
    FocalParams,
    TrainConfig,
    TrainLog,
    focal_loss,
    rd_loss,
    sequential_train,
    train_model,
)

__version__ = "0.1.0"

__all__ = [
    "PRESETS", "Bitstream", "ConditionPreset", "EncodeResult", "decode", "encode",
    "PointCloud", "VoxelSet", "from_voxels", "read_ply", "to_voxels", "write_ply",
    "BlockGrid", "block_to_tensor", "merge_blocks", "partition_blocks", "tensor_to_block",
    "RdCurve", "RdPoint", "bd_psnr", "d1_mse", "d2_mse", "estimate_normals", "geometry_psnr",
    "CompressionModel", "WeightStore",
    "SweepResult", "rd_sweep", "run_condition_suite",
    "ThresholdCode", "apply_threshold", "optimal_threshold",
    "FocalParams", "TrainConfig", "TrainLog", "focal_loss", "rd_loss",
    "sequential_train", "train_model",
    "VoxcodecError", "ParseError", "DomainError", "ShapeError", "ConfigurationError",
    "UsageError", "EncodingError", "DecodingError", "ModelMismatchError", "TrainingError",
]
