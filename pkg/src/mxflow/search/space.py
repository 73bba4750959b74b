"""Search-space construction over per-value formats and per-operation tiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ..emulation import ProfileStats, ValueStats
from ..formats import MXInt
from ..hardware import tile_path
from ..ir.graph import Graph, QuantConfig

REDUCED_BLOCK = (16, 2)
REDUCED_EXP = 8
M_CHOICES = tuple(range(2, 9))
M_FLOOR_CHOICES = tuple(range(4, 9))
BLOCK_ROW_CHOICES = (1, 2, 4, 8, 16)
BLOCK_COL_CHOICES = (1, 2, 4)
E_CHOICES = (4, 5, 6, 7, 8)

# log2(max_abs / rms) above which a value keeps at least 4 mantissa bits;
# Gaussian-like tensors sit near 2, heavy-tailed ones well above 3
DYNAMIC_RANGE_THRESHOLD = 3.0

REDUCED = "reduced"
FULL = "full"


class SearchSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class Dimension:
    target: str  # value name, or operation result for tile dimensions
    field: str  # m | block_rows | block_cols | e | tile
    choices: tuple[int, ...]

    @property
    def name(self) -> str:
        return f"{self.field}:{self.target}"

    def __len__(self) -> int:
        return len(self.choices)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dimension, ...]
    mode: str

    @property
    def sizes(self) -> list[int]:
        return [len(d) for d in self.dims]

    @property
    def cardinality(self) -> int:
        return math.prod(self.sizes)

    @property
    def value_names(self) -> list[str]:
        return sorted({d.target for d in self.dims if d.field != "tile"})

    def decode(self, choice: Sequence[int]) -> QuantConfig:
        """Map candidate indices to a quantization config."""
        if len(choice) != len(self.dims):
            raise SearchSpaceError(f"choice has {len(choice)} entries, space has {len(self.dims)} dimensions")
        fields: dict[str, dict[str, int]] = {}
        steps: dict[str, int] = {}
        for d, i in zip(self.dims, choice):
            if not 0 <= int(i) < len(d):
                raise SearchSpaceError(f"index {i} outside {d.name} with {len(d)} candidates")
            if d.field == "tile":
                steps[d.target] = d.choices[int(i)]
            else:
                fields.setdefault(d.target, {})[d.field] = d.choices[int(i)]
        formats = {}
        for name, f in fields.items():
            block = (f.get("block_rows", REDUCED_BLOCK[0]), f.get("block_cols", REDUCED_BLOCK[1]))
            formats[name] = MXInt(block, f.get("e", REDUCED_EXP), f["m"])
        cfg = QuantConfig(formats, steps)
        assert self.contains(cfg), "decoded config escaped the candidate sets"
        return cfg

    def contains(self, cfg: QuantConfig) -> bool:
        by_key = {(d.target, d.field): d.choices for d in self.dims}
        for name, fmt in cfg.formats.items():
            if not isinstance(fmt, MXInt):
                return False
            if self.mode == REDUCED and (fmt.block_shape != REDUCED_BLOCK or fmt.exp_bits != REDUCED_EXP):
                return False
            for fld, v in (("m", fmt.mant_bits), ("block_rows", fmt.block_shape[0]),
                           ("block_cols", fmt.block_shape[1]), ("e", fmt.exp_bits)):
                choices = by_key.get((name, fld))
                if choices is not None and v not in choices:
                    return False
            if (name, "m") not in by_key:
                return False
        return all(by_key.get((op, "tile")) is not None and s in by_key[(op, "tile")] for op, s in cfg.tile_steps.items())


def dynamic_range(s: ValueStats) -> float:
    """Spread of magnitudes within a tensor: log2(max_abs / rms)."""
    rms = math.sqrt(s.mean_square)
    if rms == 0.0 or s.max_abs == 0.0:
        return 0.0
    return math.log2(s.max_abs / rms)


def value_stats(g: Graph, stats: Optional[ProfileStats]) -> dict[str, ValueStats]:
    """Profiled activation statistics plus statistics of the parameter tensors."""
    out = dict(stats.values) if stats is not None else {}
    for name, w in g.weights.items():
        out.setdefault(name, ValueStats.of(np.asarray(w)))
    return out


def build_space(
    g: Graph,
    stats: Optional[ProfileStats] = None,
    mode: str = REDUCED,
    include_hw: bool = False,
    threshold: float = DYNAMIC_RANGE_THRESHOLD,
) -> SearchSpace:
    if mode not in (REDUCED, FULL):
        raise SearchSpaceError(f"mode must be {REDUCED!r} or {FULL!r}, got {mode!r}")
    known = value_stats(g, stats)
    dims: list[Dimension] = []
    for name in g.value_names():
        s = known.get(name)
        m_choices = M_FLOOR_CHOICES if s is not None and dynamic_range(s) > threshold else M_CHOICES
        if mode == FULL:
            dims += [
                Dimension(name, "block_rows", BLOCK_ROW_CHOICES),
                Dimension(name, "block_cols", BLOCK_COL_CHOICES),
                Dimension(name, "e", E_CHOICES),
            ]
        dims.append(Dimension(name, "m", m_choices))
    if include_hw:
        probe = MXInt(REDUCED_BLOCK, REDUCED_EXP, 8)
        for op in g.operations:
            path = tile_path(replace(g.values[op.result], format=probe))
            dims.append(Dimension(op.result, "tile", tuple(range(len(path)))))
    if not dims:
        raise SearchSpaceError(f"graph {g.name} has no quantizable values")
    return SearchSpace(tuple(dims), mode)
