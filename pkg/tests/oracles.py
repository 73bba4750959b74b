"""Independent re-derivations used by several test modules."""

import math

from mxflow.hardware import DEFAULT_COSTS


def lane_throughput_oracle(g, op):
    """lanes / (output elements x inner dim x work factor), recomputed from shapes."""
    r, c = g.values[op.result].tile_shape or (1, 1)
    work = math.prod(g.values[op.result].shape)
    if op.kind == "linear":
        work *= g.values[op.param("weight")].shape[1]
    if op.kind == "matmul":
        work *= g.values[op.args[0]].shape[-1]
    return r * c / (work * DEFAULT_COSTS[op.kind].work_factor)
