from .graph import (
    COL_MAJOR,
    OP_KINDS,
    ROW_MAJOR,
    Diagnostic,
    Graph,
    IRError,
    Operation,
    OperationAttrs,
    OpKind,
    QuantConfig,
    ShapeError,
    ValueInfo,
    annotate,
    check,
    graph_edges,
    infer_shape,
    param_ref,
    quantized_weight,
    register_kind,
    resolve_shapes,
    topo_order,
    validate,
)
from .importer import ManifestError, import_model, load_weights
from .text import ParseError, parse_ir, print_ir

__all__ = [
    "COL_MAJOR",
    "OP_KINDS",
    "ROW_MAJOR",
    "Diagnostic",
    "Graph",
    "IRError",
    "ManifestError",
    "Operation",
    "OperationAttrs",
    "OpKind",
    "ParseError",
    "QuantConfig",
    "ShapeError",
    "ValueInfo",
    "annotate",
    "check",
    "graph_edges",
    "import_model",
    "infer_shape",
    "load_weights",
    "param_ref",
    "parse_ir",
    "print_ir",
    "quantized_weight",
    "register_kind",
    "resolve_shapes",
    "topo_order",
    "validate",
]
