from .adam import AdamState, adam_init, adam_step
from .ops import conv3d, conv3d_transpose
from .transforms import (
    LayerSpec,
    TransformSpec,
    analysis_v1,
    analysis_v2,
    backward_transform,
    forward_transform,
    hyper_analysis,
    hyper_synthesis,
    init_transform_weights,
    residual_block_forward,
    synthesis_v1,
    synthesis_v2,
    transform_spec,
)

__all__ = [
    "AdamState", "adam_init", "adam_step",
    "conv3d", "conv3d_transpose",
    "LayerSpec", "TransformSpec",
    "analysis_v1", "analysis_v2", "synthesis_v1", "synthesis_v2",
    "hyper_analysis", "hyper_synthesis",
    "forward_transform", "backward_transform",
    "init_transform_weights", "residual_block_forward", "transform_spec",
]
