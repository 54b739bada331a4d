from . import tensor
from .checkpoint import CheckpointError, load_checkpoint, read_arrays, save_checkpoint, write_arrays
from .functional import bilinear_sample, conv2d, sparse_matmul
from .nn import (
    MLP,
    FrozenConvStack,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    NetworkConfig,
    ParamStore,
    ToyCNN,
    Transformer,
    TransformerBlock,
    multi_head_attention,
)
from .optim import adam_step
from .tensor import ShapeError, Tensor, as_tensor, backward, no_grad

__all__ = [
    "tensor", "Tensor", "ShapeError", "as_tensor", "backward", "no_grad",
    "conv2d", "bilinear_sample", "sparse_matmul",
    "ParamStore", "NetworkConfig", "Linear", "LayerNorm", "MLP", "MultiHeadAttention",
    "multi_head_attention", "Transformer", "TransformerBlock", "ToyCNN", "FrozenConvStack",
    "adam_step", "save_checkpoint", "load_checkpoint", "read_arrays", "write_arrays", "CheckpointError",
]
