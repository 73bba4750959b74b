"""Analytical hardware cost model for the dataflow accelerator.

Each operation becomes one pipelined unit whose parallelism is the stream tile
of its result (``lanes = tile rows * tile cols``). Throughput is measured in
inferences per cycle, so the accelerator's throughput is the minimum over its
units. Area is in abstract LUT-equivalents from a surrogate whose coefficients
live in a swappable JSON cost table.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Union

from .formats import (
    BL,
    BMF,
    Float32,
    FormatSpec,
    MiniFloat,
    avg_bitwidth,
    block_size,
    element_width,
    is_block_format,
    precision_bits,
    shared_width,
)
from .ir.graph import Graph, IRError, Operation, OperationAttrs, ValueInfo, topo_order
from .numerics import partition_blocks

ONCHIP = "onchip"
OFFCHIP = "offchip"

MULTIPLIER_KINDS = {"linear", "matmul", "mul", "rmsnorm", "softmax"}
REDUCTION_KINDS = {"linear", "matmul"}


class InfeasibleBudget(IRError):
    pass


@dataclass(frozen=True)
class ResourceBudget:
    area_budget: float
    onchip_bits: float = math.inf
    offchip_bandwidth: float = math.inf

    def __post_init__(self) -> None:
        if self.area_budget <= 0 or self.offchip_bandwidth <= 0 or self.onchip_bits < 0:
            raise ValueError(f"invalid budget {self}")


@dataclass(frozen=True)
class KindCost:
    fixed_overhead: float = 0.0
    lane_const: float = 0.0
    lane_mult: float = 0.0  # multiplier kinds: per lane, times (wa)(wb)
    lane_linear: float = 0.0  # other kinds: per lane, times datapath width
    adder_tree_coeff: float = 0.0  # per lane per accumulator bit
    exponent_logic_coeff: float = 0.0  # per shared-field bit per block in flight
    float_lane_coeff: float = 0.0  # per lane per element exponent bit (dynamic shifter)
    buffer_bit_coeff: float = 0.0  # per stored bit, buffers only
    work_factor: float = 1.0  # cycles of work per output element

    def __post_init__(self) -> None:
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"cost coefficient {k} must be >= 0, got {v}")


_MULT = KindCost(fixed_overhead=120.0, lane_const=6.0, lane_mult=1.0, adder_tree_coeff=0.6,
                 exponent_logic_coeff=1.5, float_lane_coeff=4.0)
_ELTWISE = KindCost(fixed_overhead=40.0, lane_const=2.0, lane_linear=1.0,
                    exponent_logic_coeff=1.0, float_lane_coeff=3.0)
_MOVE = KindCost(fixed_overhead=20.0, lane_const=1.0, lane_linear=0.25)

DEFAULT_COSTS: dict[str, KindCost] = {
    "linear": _MULT,
    "matmul": _MULT,
    "mul": replace(_MULT, adder_tree_coeff=0.0, fixed_overhead=60.0),
    "rmsnorm": replace(_MULT, adder_tree_coeff=0.3, fixed_overhead=300.0, work_factor=2.0),
    "softmax": replace(_MULT, adder_tree_coeff=0.3, fixed_overhead=400.0, work_factor=3.0),
    "relu": _ELTWISE,
    "silu": replace(_ELTWISE, fixed_overhead=150.0, lane_linear=3.0),
    "add": replace(_ELTWISE, lane_linear=1.5),
    "flatten": _MOVE,
    "transpose": replace(_MOVE, fixed_overhead=60.0),
    "reorder": replace(_MOVE, fixed_overhead=60.0),
    "output": _MOVE,
    "buffer": KindCost(fixed_overhead=10.0, buffer_bit_coeff=0.05),
}


@dataclass(frozen=True)
class CostTable:
    entries: Mapping[str, KindCost] = field(default_factory=lambda: dict(DEFAULT_COSTS))

    def __getitem__(self, kind: str) -> KindCost:
        try:
            return self.entries[kind]
        except KeyError:
            raise IRError(f"cost table has no entry for operator kind {kind!r}") from None

    def to_json(self) -> str:
        return json.dumps({k: asdict(v) for k, v in sorted(self.entries.items())}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CostTable":
        data = json.loads(text)
        return cls({k: KindCost(**v) for k, v in data.items()})

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CostTable":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class OpEstimate:
    area: float
    throughput: float  # inferences per cycle
    memory_bits: float
    placement: str = ONCHIP


@dataclass(frozen=True)
class GraphEstimate:
    total_area: float
    throughput: float
    ops: Mapping[str, OpEstimate]
    memory: Mapping[str, str]


# --- per-operation model ---------------------------------------------------------


def datapath_width(fmt: FormatSpec) -> int:
    """Sign plus mantissa bits processed per lane."""
    return precision_bits(fmt) + 1


def element_exp_bits(fmt: FormatSpec) -> int:
    if isinstance(fmt, Float32):
        return 8
    if isinstance(fmt, MiniFloat):
        return fmt.exp_bits
    if isinstance(fmt, (BMF, BL)):
        return fmt.elem_exp_bits
    return 0


def tile_of(g: Graph, op: Operation) -> tuple[int, int]:
    return g.values[op.result].tile_shape or (1, 1)


def op_work(g: Graph, op: Operation, tbl: CostTable) -> float:
    """Cycles of single-lane work per inference."""
    out = g.values[op.result]
    work = out.numel
    if op.kind == "linear":
        work *= g.values[op.param("weight")].shape[1]
    elif op.kind == "matmul":
        work *= g.values[op.args[0]].shape[-1]
    return work * tbl[op.kind].work_factor


def op_memory_bits(g: Graph, op: Operation) -> float:
    return float(sum(g.values[ref].numel * avg_bitwidth(g.values[ref].format) for ref in op.param_refs))


def _operand_formats(g: Graph, op: Operation) -> tuple[FormatSpec, FormatSpec]:
    if op.kind == "linear":
        return g.values[op.args[0]].format, g.values[op.param("weight")].format
    if len(op.args) >= 2:
        return g.values[op.args[0]].format, g.values[op.args[1]].format
    f = g.values[op.args[0]].format if op.args else g.values[op.result].format
    return f, f


def op_area(g: Graph, op: Operation, tbl: CostTable, tile: Optional[tuple[int, int]] = None) -> float:
    c = tbl[op.kind]
    r, col = tile or tile_of(g, op)
    lanes = r * col
    out = g.values[op.result]
    if op.kind == "buffer":
        depth = op.attrs.depth or 1
        return c.fixed_overhead + c.buffer_bit_coeff * depth * lanes * element_width(out.format)
    fa, fb = _operand_formats(g, op)
    wa, wb = datapath_width(fa), datapath_width(fb)
    area = c.fixed_overhead + lanes * c.lane_const
    if op.kind in MULTIPLIER_KINDS:
        area += lanes * c.lane_mult * wa * wb
    else:
        area += lanes * c.lane_linear * wa
    if op.kind in REDUCTION_KINDS:
        area += lanes * c.adder_tree_coeff * (wa + wb)
    for f in {fa, fb, out.format}:
        if is_block_format(f):
            area += c.exponent_logic_coeff * shared_width(f) * math.ceil(lanes / block_size(f))
    area += lanes * c.float_lane_coeff * max(element_exp_bits(fa), element_exp_bits(fb))
    return area


def estimate_op(
    op: Operation,
    g: Graph,
    tbl: CostTable,
    placement: Optional[Mapping[str, str]] = None,
    budget: Optional[ResourceBudget] = None,
    tile: Optional[tuple[int, int]] = None,
) -> OpEstimate:
    t = tile or tile_of(g, op)
    lanes = t[0] * t[1]
    work = op_work(g, op, tbl)
    throughput = lanes / work if work > 0 else math.inf
    mem = op_memory_bits(g, op)
    where = ONCHIP
    if placement and any(placement.get(ref) == OFFCHIP for ref in op.param_refs):
        where = OFFCHIP
        off_bits = sum(
            float(g.values[ref].numel * avg_bitwidth(g.values[ref].format))
            for ref in op.param_refs
            if placement.get(ref) == OFFCHIP
        )
        bandwidth = budget.offchip_bandwidth if budget else math.inf
        throughput = min(throughput, bandwidth / off_bits)
    return OpEstimate(op_area(g, op, tbl, t), throughput, mem, where)


def estimate_graph(
    g: Graph,
    tbl: CostTable,
    placement: Optional[Mapping[str, str]] = None,
    budget: Optional[ResourceBudget] = None,
) -> GraphEstimate:
    ops = {op.result: estimate_op(op, g, tbl, placement, budget) for op in g.operations}
    area = sum(e.area for e in ops.values())
    theta = min((e.throughput for e in ops.values()), default=math.inf)
    memory = dict(placement) if placement else {ref: ONCHIP for ref in g.param_names}
    return GraphEstimate(area, theta, ops, memory)


# --- tile lattice -------------------------------------------------------------------


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def tile_lattice(info: ValueInfo) -> tuple[list[int], list[int]]:
    """Row and column tile candidates: divisors of the block-padded 2-D view."""
    fmt = info.format
    block = fmt.block_shape if is_block_format(fmt) else (1, 1)
    layout = partition_blocks(info.shape or (1,), block)
    rows, cols = layout.padded_shape
    return _divisors(rows), _divisors(cols)


def tile_path(info: ValueInfo) -> list[tuple[int, int]]:
    """Fixed growth sequence from (1, 1): widen columns first, then rows."""
    rows, cols = tile_lattice(info)
    path = [(1, c) for c in cols]
    path += [(r, cols[-1]) for r in rows[1:]]
    return path


def next_tile(info: ValueInfo, tile: tuple[int, int]) -> Optional[tuple[int, int]]:
    rows, cols = tile_lattice(info)
    r, c = tile
    if c < cols[-1]:
        return r, next(d for d in cols if d > c)
    if r < rows[-1]:
        return next(d for d in rows if d > r), c
    return None


# --- passes -------------------------------------------------------------------------


def allocate_memory(g: Graph, b: ResourceBudget) -> dict[str, str]:
    """Place parameters on chip by traffic density, with the best-single-item fallback.

    Traffic of a parameter is the bits it streams per inference; the greedy
    keeps the densest (traffic per stored bit) parameters on chip. Comparing
    against the single highest-traffic parameter that fits guarantees at least
    half of the optimal on-chip traffic.
    """
    items = []
    for i, op in enumerate(g.operations):
        out_rows = max(1, g.values[op.result].numel // max(1, g.values[op.result].shape[-1]))
        for ref in op.param_refs:
            bits = float(g.values[ref].numel * avg_bitwidth(g.values[ref].format))
            traffic = bits * out_rows
            items.append((ref, bits, traffic))
    order = sorted(items, key=lambda it: (-it[2] / it[1], it[0]))
    chosen, used = [], 0.0
    for ref, bits, traffic in order:
        if used + bits <= b.onchip_bits:
            chosen.append(ref)
            used += bits
    greedy_value = sum(t for ref, _, t in items if ref in chosen)
    single = max((it for it in items if it[1] <= b.onchip_bits), key=lambda it: (it[2], it[0]), default=None)
    if single is not None and single[2] > greedy_value:
        chosen = [single[0]]
    return {ref: (ONCHIP if ref in chosen else OFFCHIP) for ref, _, _ in items}


def _with_hw(g: Graph, tiles: Mapping[str, tuple[int, int]], tbl: CostTable,
             placement: Mapping[str, str], budget: Optional[ResourceBudget]) -> Graph:
    values = dict(g.values)
    for res, t in tiles.items():
        values[res] = replace(values[res], tile_shape=t)
    staged = replace(g, values=values)
    ops = []
    for op in g.operations:
        est = estimate_op(op, staged, tbl, placement, budget)
        values[op.result] = replace(values[op.result], est_throughput=est.throughput)
        ops.append(
            replace(op, attrs=replace(op.attrs, hw_template=op.attrs.hw_template or f"dataflow_{op.kind}",
                                      area_estimate=est.area))
        )
    return replace(g, operations=tuple(ops), values=values)


def parallelize(g: Graph, b: ResourceBudget, tbl: CostTable) -> Graph:
    """Greedy bottleneck ascent over per-operation tile sizes.

    Starting from (1, 1) everywhere, repeatedly widen the tile of the slowest
    operation that can still grow; stop at the first step that would exceed
    the area budget. The step sequence does not depend on the budget, so a
    larger budget never yields lower throughput.
    """
    placement = allocate_memory(g, b)
    ops = list(topo_order(g))
    tiles = {op.result: (1, 1) for op in ops}
    areas = {op.result: op_area(g, op, tbl, (1, 1)) for op in ops}
    total = sum(areas.values())
    if total > b.area_budget:
        raise InfeasibleBudget(f"minimal design needs area {total:.1f} > budget {b.area_budget:.1f}")

    def tput(op, tile):
        return estimate_op(op, g, tbl, placement, b, tile).throughput

    ceilings = {op.result: tput(op, (10**12, 1)) for op in ops}
    current = {op.result: tput(op, (1, 1)) for op in ops}
    saturated: set[str] = set()
    while True:
        candidates = [op for op in ops if op.result not in saturated]
        if not candidates:
            break
        op = min(candidates, key=lambda o: current[o.result])  # min() keeps the first on ties
        nxt = next_tile(g.values[op.result], tiles[op.result])
        if nxt is None or current[op.result] >= ceilings[op.result]:
            saturated.add(op.result)
            continue
        new_area = op_area(g, op, tbl, nxt)
        if total - areas[op.result] + new_area > b.area_budget:
            break
        total += new_area - areas[op.result]
        areas[op.result] = new_area
        tiles[op.result] = nxt
        current[op.result] = tput(op, nxt)
    out = _with_hw(g, tiles, tbl, placement, b)
    est = estimate_graph(out, tbl, placement, b)
    assert est.total_area <= b.area_budget, "parallelize exceeded its area budget"
    return out


def apply_tile_steps(g: Graph, steps: Mapping[str, int], tbl: CostTable,
                     b: Optional[ResourceBudget] = None) -> Graph:
    """Set tiles directly from per-operation positions along their growth paths."""
    placement = allocate_memory(g, b) if b else {ref: ONCHIP for ref in g.param_names}
    tiles = {}
    for op in g.operations:
        path = tile_path(g.values[op.result])
        tiles[op.result] = path[min(steps.get(op.result, 0), len(path) - 1)]
    out = _with_hw(g, tiles, tbl, placement, b)
    if b is not None:
        area = estimate_graph(out, tbl, placement, b).total_area
        if area > b.area_budget:
            raise InfeasibleBudget(f"tiling needs area {area:.1f} > budget {b.area_budget:.1f}")
    return out


def op_levels(g: Graph) -> dict[str, int]:
    """Longest path, in operations, from any graph input to each value."""
    level = {x: 0 for x in g.inputs}
    for op in topo_order(g):
        level[op.result] = 1 + max((level.get(a, 0) for a in op.args), default=0)
    return level


def insert_buffers(g: Graph) -> Graph:
    """Put a FIFO on every shorter branch that rejoins a longer one."""
    level = op_levels(g)
    taken = set(g.values)
    values = dict(g.values)
    new_ops: list[Operation] = []
    for op in g.operations:
        if len(op.args) >= 2:
            deepest = max(level.get(a, 0) for a in op.args)
            args = []
            for a in op.args:
                gap = deepest - level.get(a, 0)
                if gap > 0:
                    name, k = f"{a}_buf", 1
                    while name in taken:
                        k += 1
                        name = f"{a}_buf{k}"
                    taken.add(name)
                    values[name] = values[a]
                    new_ops.append(
                        Operation("buffer", (a,), (name,), (), OperationAttrs(hw_template="dataflow_buffer", depth=gap))
                    )
                    a = name
                args.append(a)
            op = replace(op, args=tuple(args))
        new_ops.append(op)
    return replace(g, operations=tuple(new_ops), values=values)


def brute_force_placement(g: Graph, b: ResourceBudget) -> tuple[dict[str, str], float]:
    """Exhaustive on-chip placement maximising on-chip traffic; for testing small graphs."""
    items = []
    for op in g.operations:
        out_rows = max(1, g.values[op.result].numel // max(1, g.values[op.result].shape[-1]))
        for ref in op.param_refs:
            bits = float(g.values[ref].numel * avg_bitwidth(g.values[ref].format))
            items.append((ref, bits, bits * out_rows))
    best, best_val = {}, -1.0
    for mask in itertools.product([False, True], repeat=len(items)):
        bits = sum(it[1] for it, m in zip(items, mask) if m)
        if bits > b.onchip_bits:
            continue
        val = sum(it[2] for it, m in zip(items, mask) if m)
        if val > best_val:
            best_val = val
            best = {it[0]: (ONCHIP if m else OFFCHIP) for it, m in zip(items, mask)}
    return best, best_val


def onchip_traffic(g: Graph, placement: Mapping[str, str]) -> float:
    total = 0.0
    for op in g.operations:
        out_rows = max(1, g.values[op.result].numel // max(1, g.values[op.result].shape[-1]))
        for ref in op.param_refs:
            if placement.get(ref) == ONCHIP:
                total += float(g.values[ref].numel * avg_bitwidth(g.values[ref].format)) * out_rows
    return total
