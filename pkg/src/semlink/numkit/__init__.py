"""Minimal dense numerical core: tape tensors, layers, RAdam, checkpoints."""

from .tensor import (
    Param,
    Tensor,
    add,
    col_slice,
    cross_entropy,
    dense,
    gather_rows,
    matmul,
    mul,
    relu,
    reshape,
    row_softmax,
    row_sum,
    scale,
    softmax_rows,
    weighted_block_sum,
    zero_grads,
)
from .layers import DenseLayer, Mlp
from .optim import RAdam, radam_step
from .serialize import load_blocks, save_blocks

__all__ = [
    "Param", "Tensor", "add", "col_slice", "cross_entropy", "dense",
    "gather_rows", "matmul", "mul", "relu", "reshape", "row_softmax",
    "row_sum", "scale", "softmax_rows", "weighted_block_sum", "zero_grads",
    "DenseLayer", "Mlp", "RAdam", "radam_step", "load_blocks", "save_blocks",
]
