"""Mixed-precision microscaling quantization and dataflow accelerator co-design."""

from .formats import (
    BL,
    BMF,
    FLOAT32,
    MXINT8,
    FixedPoint,
    Float32,
    MiniFloat,
    MXInt,
    avg_bitwidth,
    memory_density,
    parse_format,
)
from .numerics import block_dot_exact, cast, dequantize_tensor, fake_quantize, partition_blocks, quantize_tensor

__version__ = "0.1.0"

__all__ = [
    "BL",
    "BMF",
    "FLOAT32",
    "MXINT8",
    "FixedPoint",
    "Float32",
    "MiniFloat",
    "MXInt",
    "avg_bitwidth",
    "block_dot_exact",
    "cast",
    "dequantize_tensor",
    "fake_quantize",
    "memory_density",
    "parse_format",
    "partition_blocks",
    "quantize_tensor",
]
