"""Front-end: build a Float32 graph from a JSON model manifest and a weight blob.

Manifest::

    {"name": "toy",
     "inputs": [{"name": "x", "shape": [8, 8]}],
     "ops": [{"kind": "linear", "args": ["x0"], "results": ["x1"],
              "params": {"weight": {"shape": [128, 64], "offset": 0}},
              "stream_order": "row_major"}],
     "outputs": ["x3"]}

Weights are little-endian float32, parameter offsets counted in elements.
``stream_order`` on an op (a string, or one entry per argument) declares the
order in which it consumes its arguments; a ``reorder`` op is inserted on
every edge whose producer streams in the other order.
"""

from __future__ import annotations

import json
import math
from dataclasses import replace
from pathlib import Path
from typing import Union

import jsonschema
import numpy as np

from .graph import (
    COL_MAJOR,
    OP_KINDS,
    ROW_MAJOR,
    STREAM_ORDERS,
    Graph,
    IRError,
    Operation,
    ValueInfo,
    check,
    param_ref,
    resolve_shapes,
)

_ORDER = {"enum": list(STREAM_ORDERS)}
MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["name", "inputs", "ops", "outputs"],
    "properties": {
        "name": {"type": "string", "pattern": r"^[A-Za-z_][A-Za-z0-9_]*$"},
        "inputs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "shape"],
                "properties": {
                    "name": {"type": "string"},
                    "shape": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                    "stream_order": _ORDER,
                },
            },
        },
        "ops": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "args", "results"],
                "properties": {
                    "kind": {"type": "string"},
                    "args": {"type": "array", "items": {"type": "string"}},
                    "results": {"type": "array", "items": {"type": "string"}, "minItems": 1, "maxItems": 1},
                    "params": {
                        "type": "object",
                        "additionalProperties": {
                            "type": "object",
                            "required": ["shape", "offset"],
                            "properties": {
                                "shape": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                                "offset": {"type": "integer", "minimum": 0},
                            },
                        },
                    },
                    "stream_order": {"anyOf": [_ORDER, {"type": "array", "items": _ORDER}]},
                },
            },
        },
        "outputs": {"type": "array", "items": {"type": "string"}},
    },
}


class ManifestError(IRError):
    pass


def _flip(order: str) -> str:
    return COL_MAJOR if order == ROW_MAJOR else ROW_MAJOR


def load_weights(source: Union[str, Path, bytes, np.ndarray]) -> np.ndarray:
    if isinstance(source, np.ndarray):
        return source.astype("<f4", copy=False).ravel()
    if isinstance(source, (str, Path)):
        source = Path(source).read_bytes()
    if len(source) % 4:
        raise ManifestError(f"weight blob length {len(source)} is not a multiple of 4 bytes")
    return np.frombuffer(source, dtype="<f4")


def import_model(manifest: Union[str, Path, dict], weights) -> Graph:
    if not isinstance(manifest, dict):
        manifest = json.loads(Path(manifest).read_text())
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ManifestError(f"manifest schema violation at {where}: {exc.message}") from None
    blob = load_weights(weights)

    values: dict[str, ValueInfo] = {}
    order: dict[str, str] = {}
    data: dict[str, np.ndarray] = {}
    inputs = []
    for spec in manifest["inputs"]:
        name = spec["name"]
        if name in values:
            raise ManifestError(f"input {name} declared twice")
        values[name] = ValueInfo(shape=tuple(spec["shape"]))
        order[name] = spec.get("stream_order", ROW_MAJOR)
        inputs.append(name)

    used_end = 0
    ops: list[Operation] = []
    taken = set(values) | {r for op in manifest["ops"] for r in op["results"]}

    def fresh(base: str) -> str:
        name, k = base, 1
        while name in taken:
            k += 1
            name = f"{base}{k}"
        taken.add(name)
        return name

    for spec in manifest["ops"]:
        kind = spec["kind"]
        if kind not in OP_KINDS:
            raise ManifestError(f"unsupported op kind {kind!r}")
        result = spec["results"][0]
        for a in spec["args"]:
            if a not in values:
                raise ManifestError(f"{result}: argument {a} is not defined before use")
        declared = spec.get("stream_order")
        if isinstance(declared, list):
            if len(declared) != len(spec["args"]):
                raise ManifestError(f"{result}: stream_order list length differs from args")
            per_arg = declared
        else:
            per_arg = [declared] * len(spec["args"])

        args = []
        for a, want in zip(spec["args"], per_arg):
            if want is not None and order[a] != want:
                r = fresh(f"{a}_reorder")
                ops.append(Operation("reorder", (a,), (r,)))
                values[r] = ValueInfo(shape=values[a].shape)
                order[r] = want
                a = r
            args.append(a)

        params = []
        for role, p in sorted(spec.get("params", {}).items()):
            ref = param_ref(result, role)
            shape = tuple(p["shape"])
            start, end = p["offset"], p["offset"] + math.prod(shape)
            if end > blob.size:
                raise ManifestError(
                    f"weight blob too short for parameter {ref}: needs elements "
                    f"[{start}, {end}) but blob holds {blob.size}"
                )
            data[ref] = blob[start:end].astype(np.float64).reshape(shape)
            values[ref] = ValueInfo(shape=shape)
            used_end = max(used_end, end)
            params.append((role, ref))

        if result in values:
            raise ManifestError(f"value {result} defined twice")
        in_order = order[args[0]] if args else ROW_MAJOR
        order[result] = _flip(in_order) if kind == "transpose" else in_order
        values[result] = ValueInfo()
        ops.append(Operation(kind, tuple(args), (result,), tuple(params)))

    if used_end != blob.size:
        raise ManifestError(f"weight blob holds {blob.size} elements but parameters use {used_end}")
    for o in manifest["outputs"]:
        if o not in values:
            raise ManifestError(f"output {o} is never defined")

    g = Graph(manifest["name"], tuple(inputs), tuple(manifest["outputs"]), tuple(ops), values, data)
    g = resolve_shapes(g)
    values = {n: replace(v, stream_order=order.get(n), interface="handshake") if n in order else v
              for n, v in g.values.items()}
    return check(replace(g, values=values))
