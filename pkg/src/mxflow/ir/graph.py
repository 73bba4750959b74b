"""SSA dataflow graph: values, operations, shape rules, validation, traversal."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from ..formats import FLOAT32, Float32, FormatSpec, format_str, parse_format
from ..numerics import fake_quantize

ROW_MAJOR = "row_major"
COL_MAJOR = "col_major"
STREAM_ORDERS = (ROW_MAJOR, COL_MAJOR)


class IRError(ValueError):
    pass


class ShapeError(IRError):
    pass


@dataclass(frozen=True)
class ValueInfo:
    shape: Optional[tuple[int, ...]] = None
    format: FormatSpec = FLOAT32
    # software attributes, filled by profiling
    mean: Optional[float] = None
    variance: Optional[float] = None
    max_abs: Optional[float] = None
    # hardware attributes, filled by the parallelize pass and the front-end
    tile_shape: Optional[tuple[int, int]] = None
    stream_order: Optional[str] = None
    interface: Optional[str] = None
    est_throughput: Optional[float] = None
    # unknown attributes, kept verbatim as (key, raw text) pairs
    extra: tuple[tuple[str, str], ...] = ()

    @property
    def numel(self) -> int:
        return math.prod(self.shape) if self.shape is not None else 0


@dataclass(frozen=True)
class OperationAttrs:
    hw_template: Optional[str] = None
    area_estimate: Optional[float] = None
    depth: Optional[int] = None
    extra: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class Operation:
    kind: str
    args: tuple[str, ...]
    results: tuple[str, ...]
    params: tuple[tuple[str, str], ...] = ()
    attrs: OperationAttrs = OperationAttrs()

    @property
    def result(self) -> str:
        return self.results[0]

    @property
    def param_refs(self) -> tuple[str, ...]:
        return tuple(ref for _, ref in self.params)

    def param(self, role: str) -> Optional[str]:
        for r, ref in self.params:
            if r == role:
                return ref
        return None


def param_ref(result: str, role: str) -> str:
    """Parameters are named after the operation result they belong to."""
    return f"{result}.{role}"


@dataclass(frozen=True)
class Graph:
    name: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    operations: tuple[Operation, ...]
    values: Mapping[str, ValueInfo]
    weights: Mapping[str, np.ndarray] = field(default_factory=dict, compare=False, repr=False)
    # parameter tensors already rounded: name -> (format, array)
    qweights: Mapping[str, tuple] = field(default_factory=dict, compare=False, repr=False)

    __hash__ = None  # type: ignore[assignment]

    def producers(self) -> dict[str, int]:
        return {r: i for i, op in enumerate(self.operations) for r in op.results}

    def consumers(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for i, op in enumerate(self.operations):
            for a in op.args:
                out.setdefault(a, []).append(i)
        return out

    @property
    def param_names(self) -> list[str]:
        return [ref for op in self.operations for ref in op.param_refs]

    def activation_names(self) -> list[str]:
        """Graph inputs and operation results, in definition order."""
        return list(self.inputs) + [r for op in self.operations for r in op.results]

    def value_names(self) -> list[str]:
        """Every value in definition order (inputs, then per op its params and result)."""
        names = list(self.inputs)
        for op in self.operations:
            names.extend(op.param_refs)
            names.extend(op.results)
        return names

    def with_values(self, updates: Mapping[str, ValueInfo]) -> "Graph":
        values = dict(self.values)
        values.update(updates)
        return replace(self, values=values)


# --- operator registry ------------------------------------------------------


def _same(shapes, params):
    return shapes[0]


def _broadcast(shapes, params):
    try:
        return tuple(np.broadcast_shapes(*shapes))
    except ValueError as exc:
        raise ShapeError(str(exc)) from None


def _linear(shapes, params):
    (x,) = shapes
    w = params.get("weight")
    if w is None or len(w) != 2:
        raise ShapeError(f"linear weight must be 2-D (out, in), got {w}")
    if not x or x[-1] != w[1]:
        raise ShapeError(f"linear inner dims differ: input {x} vs weight {w}")
    b = params.get("bias")
    if b is not None and tuple(b) != (w[0],):
        raise ShapeError(f"linear bias {b} does not match weight rows {w[0]}")
    return tuple(x[:-1]) + (w[0],)


def _matmul(shapes, params):
    a, b = shapes
    if len(a) < 2 or len(b) < 2:
        raise ShapeError(f"matmul operands must be at least 2-D, got {a} and {b}")
    if a[-1] != b[-2]:
        raise ShapeError(f"matmul inner dims differ: {a} vs {b}")
    lead = _broadcast([a[:-2], b[:-2]], params)
    return lead + (a[-2], b[-1])


def _rmsnorm(shapes, params):
    (x,) = shapes
    g = params.get("gain")
    if g is not None and tuple(g) != (x[-1],):
        raise ShapeError(f"rmsnorm gain {g} does not match last dim of {x}")
    return x


def _flatten(shapes, params):
    return (math.prod(shapes[0]),)


def _transpose(shapes, params):
    (x,) = shapes
    if len(x) < 2:
        raise ShapeError(f"transpose needs at least 2 dims, got {x}")
    return tuple(x[:-2]) + (x[-1], x[-2])


@dataclass(frozen=True)
class OpKind:
    name: str
    n_args: int
    required_params: tuple[str, ...]
    optional_params: tuple[str, ...]
    shape_rule: Callable


OP_KINDS: dict[str, OpKind] = {}


def register_kind(kind: OpKind) -> None:
    OP_KINDS[kind.name] = kind


for _k in [
    OpKind("linear", 1, ("weight",), ("bias",), _linear),
    OpKind("matmul", 2, (), (), _matmul),
    OpKind("relu", 1, (), (), _same),
    OpKind("silu", 1, (), (), _same),
    OpKind("softmax", 1, (), (), _same),
    OpKind("rmsnorm", 1, ("gain",), (), _rmsnorm),
    OpKind("add", 2, (), (), _broadcast),
    OpKind("mul", 2, (), (), _broadcast),
    OpKind("flatten", 1, (), (), _flatten),
    OpKind("transpose", 1, (), (), _transpose),
    OpKind("reorder", 1, (), (), _same),
    OpKind("output", 1, (), (), _same),
    OpKind("buffer", 1, (), (), _same),
]:
    register_kind(_k)


def infer_shape(op: Operation, arg_shapes, param_shapes: Mapping[str, tuple]) -> tuple[int, ...]:
    kind = OP_KINDS.get(op.kind)
    if kind is None:
        raise IRError(f"unknown operator kind {op.kind!r}")
    return tuple(kind.shape_rule([tuple(s) for s in arg_shapes], dict(param_shapes)))


# --- validation and traversal -------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    category: str  # ssa | cycle | arity | shape | undefined | kind
    message: str

    def __str__(self) -> str:
        return f"{self.category}: {self.message}"


def _op_edges(g: Graph) -> list[set[int]]:
    prod = g.producers()
    succ: list[set[int]] = [set() for _ in g.operations]
    for i, op in enumerate(g.operations):
        for a in op.args:
            if a in prod:
                succ[prod[a]].add(i)
    return succ


def _kahn(g: Graph) -> tuple[list[int], list[int]]:
    """Stable Kahn ordering; returns (order, ops left over because of cycles)."""
    succ = _op_edges(g)
    indeg = [0] * len(g.operations)
    for s in succ:
        for j in s:
            indeg[j] += 1
    ready = [i for i, d in enumerate(indeg) if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for j in sorted(succ[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, j)
    left = [i for i in range(len(g.operations)) if i not in set(order)]
    return order, left


def topo_order(g: Graph) -> list[Operation]:
    """Producers before consumers; ties broken by declaration order."""
    order, left = _kahn(g)
    if left:
        raise IRError(f"graph has a cycle through {[g.operations[i].result for i in left]}")
    return [g.operations[i] for i in order]


def validate(g: Graph) -> list[Diagnostic]:
    """Return every problem found; an empty list means the graph is valid."""
    diags: list[Diagnostic] = []
    defined: dict[str, str] = {}

    def define(name: str, where: str) -> None:
        if name in defined:
            diags.append(Diagnostic("ssa", f"{name} redefined by {where} (first defined by {defined[name]})"))
        else:
            defined[name] = where

    for x in g.inputs:
        define(x, "graph input")
    for op in g.operations:
        for _, ref in op.params:
            define(ref, f"parameter of {op.result}")
        for r in op.results:
            define(r, f"{op.kind} operation")

    prod = g.producers()
    seen: set[str] = set(g.inputs)
    for i, op in enumerate(g.operations):
        seen.update(op.param_refs)
        kind = OP_KINDS.get(op.kind)
        if kind is None:
            diags.append(Diagnostic("kind", f"unknown operator kind {op.kind!r} for {op.results}"))
        else:
            if len(op.args) != kind.n_args:
                diags.append(
                    Diagnostic("arity", f"{op.kind} {op.results} takes {kind.n_args} args, got {len(op.args)}")
                )
            roles = [r for r, _ in op.params]
            for r in kind.required_params:
                if r not in roles:
                    diags.append(Diagnostic("arity", f"{op.kind} {op.results} missing parameter {r!r}"))
            for r in roles:
                if r not in kind.required_params + kind.optional_params:
                    diags.append(Diagnostic("arity", f"{op.kind} {op.results} does not accept parameter {r!r}"))
        if len(op.results) != 1:
            diags.append(Diagnostic("arity", f"{op.kind} must have exactly one result, got {op.results}"))
        for a in op.args:
            if a in op.results:
                diags.append(Diagnostic("ssa", f"{a} used by its own defining operation"))
            elif a not in defined:
                diags.append(Diagnostic("undefined", f"{a} used by {op.results} but never defined"))
            elif a not in seen and a in prod and prod[a] > i:
                diags.append(Diagnostic("ssa", f"{a} used by {op.results} before its definition"))
        seen.update(op.results)
    for o in g.outputs:
        if o not in defined:
            diags.append(Diagnostic("undefined", f"graph output {o} never defined"))
    for name in defined:
        if name not in g.values:
            diags.append(Diagnostic("undefined", f"{name} has no value info"))

    _, left = _kahn(g)
    if left:
        names = [g.operations[i].result for i in left]
        diags.append(Diagnostic("cycle", f"cycle among operations producing {names}"))

    if not any(d.category in ("kind", "arity", "undefined") for d in diags):
        diags.extend(_check_shapes(g))
    return diags


def _check_shapes(g: Graph) -> list[Diagnostic]:
    diags = []
    shapes = {n: v.shape for n, v in g.values.items()}
    ops = g.operations
    order, left = _kahn(g)
    for i in order:
        op = ops[i]
        arg_shapes = [shapes.get(a) for a in op.args]
        pshapes = {r: shapes.get(ref) for r, ref in op.params}
        if any(s is None for s in arg_shapes) or any(s is None for s in pshapes.values()):
            continue
        try:
            out = infer_shape(op, arg_shapes, pshapes)
        except ShapeError as exc:
            names = ", ".join(list(op.args) + list(op.param_refs))
            diags.append(Diagnostic("shape", f"{op.kind} {op.result} ({names}): {exc}"))
            continue
        declared = shapes.get(op.result)
        if declared is not None and tuple(declared) != out:
            diags.append(
                Diagnostic("shape", f"{op.result} declared {tuple(declared)} but {op.kind} gives {out}")
            )
        shapes[op.result] = out
    return diags


def check(g: Graph) -> Graph:
    diags = validate(g)
    if diags:
        raise IRError("invalid graph:\n  " + "\n  ".join(map(str, diags)))
    return g


def resolve_shapes(g: Graph) -> Graph:
    """Fill result shapes from the shape rules."""
    values = dict(g.values)
    for op in topo_order(g):
        out = infer_shape(
            op,
            [values[a].shape for a in op.args],
            {r: values[ref].shape for r, ref in op.params},
        )
        values[op.result] = replace(values.get(op.result, ValueInfo()), shape=out)
    return replace(g, values=values)


def graph_edges(g: Graph) -> set[tuple[str, int, int]]:
    """(value, producer op index or -1 for inputs, consumer op index) for every data edge."""
    prod = g.producers()
    return {(a, prod.get(a, -1), i) for i, op in enumerate(g.operations) for a in op.args}


# --- quantization configuration --------------------------------------------------


@dataclass(frozen=True)
class QuantConfig:
    """Format per value name, plus optional per-operation tile steps."""

    formats: Mapping[str, FormatSpec] = field(default_factory=dict)
    tile_steps: Mapping[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "formats": {k: format_str(v) for k, v in sorted(self.formats.items())},
                "tile_steps": dict(sorted(self.tile_steps.items())),
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_dict(cls, data: Mapping) -> "QuantConfig":
        return cls(
            {k: parse_format(v) for k, v in data.get("formats", {}).items()},
            {k: int(v) for k, v in data.get("tile_steps", {}).items()},
        )

    @classmethod
    def from_json(cls, text: str) -> "QuantConfig":
        return cls.from_dict(json.loads(text))


def annotate(g: Graph, cfg: QuantConfig) -> Graph:
    """Assign formats from ``cfg``; parameters are rounded to their new format once, here."""
    unknown = sorted(set(cfg.formats) - set(g.values))
    if unknown:
        raise IRError(f"config names values absent from graph {g.name!r}: {unknown}")
    values = dict(g.values)
    for name, fmt in cfg.formats.items():
        values[name] = replace(values[name], format=fmt)
    qweights = {}
    for name, w in g.weights.items():
        fmt = values[name].format
        qweights[name] = (fmt, w if isinstance(fmt, Float32) else fake_quantize(w, fmt))
    return replace(g, values=values, qweights=qweights)


def quantized_weight(g: Graph, name: str) -> np.ndarray:
    fmt = g.values[name].format
    cached = g.qweights.get(name)
    if cached is not None and cached[0] == fmt:
        return cached[1]
    w = g.weights[name]
    return w if isinstance(fmt, Float32) else fake_quantize(w, fmt)


def iter_ops(g: Graph, kinds: Iterable[str]) -> list[Operation]:
    kinds = set(kinds)
    return [op for op in g.operations if op.kind in kinds]
