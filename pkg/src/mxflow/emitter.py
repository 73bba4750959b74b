"""Structural netlist emission from an annotated graph.

Every operation becomes one instance of a parameterised template; parameters
are streamed from ROM source instances; a cast instance sits on every edge whose
mantissa width differs from the consuming operator's datapath. Each value is a
handshake bundle ``<value>_data/_valid/_ready``. The emitted directory holds
``top.sv``, the template stubs and a ``manifest.json`` inventory.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .formats import (
    FormatSpec,
    block_size,
    element_width,
    format_str,
    is_block_format,
    precision_bits,
    shared_width,
)
from .hardware import element_exp_bits
from .ir.graph import Graph, IRError, topo_order

TEMPLATES_DIR = Path(__file__).parent / "templates"
CAST = "cast"
ROM = "rom"


class EmitError(IRError):
    pass


def template_name(kind: str) -> str:
    return f"dataflow_{kind}"


def sv_name(value: str) -> str:
    return value.replace(".", "__")


# --- templates --------------------------------------------------------------------------


_BINARY = {"add", "mul", "matmul"}
_PARAM_ROLES = {"linear": ("weight", "bias"), "rmsnorm": ("gain",)}
_PORT_FIELDS = ("FMT", "WIDTH", "E", "M", "BLOCK_ROWS", "BLOCK_COLS")


def kind_ports(kind: str) -> tuple[list[str], list[str]]:
    """(input ports, parameter ports) of the bundled template for ``kind``."""
    if kind == ROM:
        return [], []
    if kind in _BINARY:
        return ["in0", "in1"], []
    return ["in0"], [f"p_{r}" for r in _PARAM_ROLES.get(kind, ())]


def template_stub(name: str, inputs: list[str], params: list[str], extra: tuple[str, ...] = ()) -> str:
    ports = inputs + params + ["out"]
    decl = ["    parameter integer TILE_ROWS = 1", "    parameter integer TILE_COLS = 1"]
    decl += [f"    parameter integer {x} = 1" for x in extra]
    for p in ports:
        P = p.upper()
        decl.append(f'    parameter string {P}_FMT = ""')
        decl += [f"    parameter integer {P}_{f} = 1" for f in _PORT_FIELDS[1:]]
    io = ["    input  logic clk", "    input  logic rst"]
    for p in inputs + params:
        io += [f"    input  logic [{p.upper()}_WIDTH-1:0] {p}_data", f"    input  logic {p}_valid",
               f"    output logic {p}_ready"]
    io += ["    output logic [OUT_WIDTH-1:0] out_data", "    output logic out_valid", "    input  logic out_ready"]
    return (
        f"// {name}: interface stub; operator internals are not modelled here.\n"
        f"module {name} #(\n" + ",\n".join(decl) + "\n) (\n" + ",\n".join(io) + "\n);\nendmodule\n"
    )


BUILTIN_KINDS = ("add", "buffer", "flatten", "linear", "matmul", "mul", "output", "relu", "reorder", "rmsnorm",
                 "silu", "softmax", "transpose")


def bundled_templates() -> dict[str, str]:
    out = {}
    for kind in BUILTIN_KINDS + (CAST, ROM):
        ins, ps = kind_ports(kind)
        extra = {"buffer": ("DEPTH",), ROM: ("ROWS", "COLS")}.get(kind, ())
        out[template_name(kind)] = template_stub(template_name(kind), ins, ps, extra)
    return out


def write_bundled_templates(out_dir: Union[str, Path]) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    for name, text in bundled_templates().items():
        (d / f"{name}.sv").write_text(text)


_T_PARAM = re.compile(r"parameter\s+(?:integer|string)\s+(\w+)")
_T_PORT = re.compile(r"(input|output)\s+logic(?:\s*\[[^\]]*\])?\s+(\w+)")


@dataclass(frozen=True)
class Template:
    name: str
    text: str
    params: frozenset[str]
    ports: frozenset[str]

    @classmethod
    def parse(cls, name: str, text: str) -> "Template":
        return cls(name, text, frozenset(_T_PARAM.findall(text)), frozenset(p for _, p in _T_PORT.findall(text)))


def load_template(templates_dir: Union[str, Path], name: str) -> Template:
    path = Path(templates_dir) / f"{name}.sv"
    if not path.is_file():
        raise EmitError(f"missing template {name} (looked for {path})")
    return Template.parse(name, path.read_text())


# --- netlist ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    id: str
    template: str
    params: tuple[tuple[str, str], ...]
    ports: tuple[tuple[str, str], ...]
    op: Optional[str] = None  # result value for operation instances


@dataclass(frozen=True)
class Netlist:
    module: str
    top_ports: tuple[tuple[str, int, str], ...]  # (direction, width, name)
    wires: tuple[tuple[int, str], ...]
    assigns: tuple[tuple[str, str], ...]
    instances: tuple[Instance, ...]

    def instance(self, iid: str) -> Optional[Instance]:
        return next((i for i in self.instances if i.id == iid), None)


def bundle_width(fmt: FormatSpec, lanes: int) -> int:
    shared = math.ceil(lanes / block_size(fmt)) * shared_width(fmt) if is_block_format(fmt) else 0
    return lanes * element_width(fmt) + shared


def _fmt_fields(fmt: FormatSpec, lanes: int) -> list[tuple[str, str]]:
    block = fmt.block_shape if is_block_format(fmt) else (1, 1)
    e = shared_width(fmt) if is_block_format(fmt) else element_exp_bits(fmt)
    return [
        ("FMT", f'"{format_str(fmt)}"'),
        ("WIDTH", str(bundle_width(fmt, lanes))),
        ("E", str(e)),
        ("M", str(precision_bits(fmt))),
        ("BLOCK_ROWS", str(block[0])),
        ("BLOCK_COLS", str(block[1])),
    ]


def _port_params(prefix: str, fmt: FormatSpec, lanes: int) -> list[tuple[str, str]]:
    return [(f"{prefix}_{k}", v) for k, v in _fmt_fields(fmt, lanes)]


def _same_family(a: FormatSpec, b: FormatSpec) -> bool:
    if type(a) is not type(b):
        return False
    if is_block_format(a):
        return a.block_shape == b.block_shape and shared_width(a) == shared_width(b)
    return True


def needs_cast(src: FormatSpec, dst: FormatSpec, where: str) -> bool:
    if src == dst:
        return False
    if not _same_family(src, dst):
        raise EmitError(f"unsupported cast on {where}: {format_str(src)} -> {format_str(dst)}")
    return precision_bits(src) != precision_bits(dst)


def build_netlist(g: Graph) -> Netlist:
    """The canonical netlist implied by ``g``; emission renders exactly this."""
    ops = topo_order(g)
    for op in ops:
        if g.values[op.result].tile_shape is None:
            raise EmitError(f"unresolved parameter TILE_ROWS/TILE_COLS for {op.kind} {op.result}: run parallelize first")
    names = {}
    for v in g.values:
        s = sv_name(v)
        if s in names and names[s] != v:
            raise EmitError(f"values {names[s]} and {v} map to the same net name {s}")
        names[s] = v

    def lanes_of(v: str) -> int:
        t = g.values[v].tile_shape or (1, 1)
        return t[0] * t[1]

    sinks: dict[str, list[str]] = {}  # value -> consuming instance ids, or "top"
    wires: list[tuple[int, str]] = []
    value_width: dict[str, int] = {}

    for x in g.inputs:
        value_width[x] = bundle_width(g.values[x].format, lanes_of(x))

    body: list[Instance] = []
    for i, op in enumerate(ops):
        iid = f"{op.kind}_{i}"
        out = g.values[op.result]
        lanes = lanes_of(op.result)
        tile = out.tile_shape
        params: list[tuple[str, str]] = [("TILE_ROWS", str(tile[0])), ("TILE_COLS", str(tile[1]))]
        if op.kind == "buffer":
            if op.attrs.depth is None:
                raise EmitError(f"unresolved parameter DEPTH for buffer {op.result}")
            params.append(("DEPTH", str(op.attrs.depth)))
        ports: list[tuple[str, str]] = [("clk", "clk"), ("rst", "rst")]
        edges = [(f"in{j}", a) for j, a in enumerate(op.args)]
        edges += [(f"p_{role}", ref) for role, ref in op.params]
        for port, v in edges:
            vfmt = g.values[v].format
            if port.startswith("p_"):
                # ROM source streaming the parameter at the consumer's tile rate
                rid = f"{ROM}_{i}_{port[2:]}"
                shape = g.values[v].shape or (1,)
                rows = math.prod(shape[:-1]) if len(shape) > 1 else 1
                w = bundle_width(vfmt, lanes)
                value_width[v] = w
                body.append(Instance(
                    rid, template_name(ROM),
                    tuple([("TILE_ROWS", str(tile[0])), ("TILE_COLS", str(tile[1])), ("ROWS", str(rows)),
                           ("COLS", str(shape[-1]))] + _port_params("OUT", vfmt, lanes)),
                    (("clk", "clk"), ("rst", "rst"), ("out_data", f"{sv_name(v)}_data"),
                     ("out_valid", f"{sv_name(v)}_valid"), ("out_ready", f"{sv_name(v)}_ready")),
                ))
                wires += [(w, f"{sv_name(v)}_data"), (1, f"{sv_name(v)}_valid"), (1, f"{sv_name(v)}_ready")]
            src_net = sv_name(v)
            src_lanes = lanes if port.startswith("p_") else lanes_of(v)
            if needs_cast(vfmt, out.format, f"{v} -> {op.result}"):
                cid = f"{CAST}_{i}_{port}"
                cnet = f"{sv_name(v)}_cast{i}_{port}"
                cw = bundle_width(out.format, src_lanes)
                body.append(Instance(
                    cid, template_name(CAST),
                    tuple([("TILE_ROWS", str(tile[0])), ("TILE_COLS", str(tile[1]))]
                          + _port_params("IN0", vfmt, src_lanes) + _port_params("OUT", out.format, src_lanes)),
                    (("clk", "clk"), ("rst", "rst"), ("in0_data", f"{src_net}_data"),
                     ("in0_valid", f"{src_net}_valid"), ("in0_ready", ("?", v, f"{cid}.in0")),
                     ("out_data", f"{cnet}_data"), ("out_valid", f"{cnet}_valid"), ("out_ready", f"{cnet}_ready")),
                ))
                sinks.setdefault(v, []).append(f"{cid}.in0")
                wires += [(cw, f"{cnet}_data"), (1, f"{cnet}_valid"), (1, f"{cnet}_ready")]
                params += _port_params(port.upper(), out.format, src_lanes)
                ports += [(f"{port}_data", f"{cnet}_data"), (f"{port}_valid", f"{cnet}_valid"),
                          (f"{port}_ready", f"{cnet}_ready")]
            else:
                params += _port_params(port.upper(), vfmt, src_lanes)
                ports += [(f"{port}_data", f"{src_net}_data"), (f"{port}_valid", f"{src_net}_valid"),
                          (f"{port}_ready", ("?", v, f"{iid}.{port}"))]
                sinks.setdefault(v, []).append(f"{iid}.{port}")
        params += _port_params("OUT", out.format, lanes)
        w = bundle_width(out.format, lanes)
        value_width[op.result] = w
        r = sv_name(op.result)
        ports += [("out_data", f"{r}_data"), ("out_valid", f"{r}_valid"), ("out_ready", f"{r}_ready")]
        body.append(Instance(iid, template_name(op.kind), tuple(params), tuple(ports), op.result))

    outputs = set(g.outputs)
    for o in g.outputs:
        sinks.setdefault(o, []).append("top")

    # ready nets: a single sink drives <v>_ready, several sinks are AND-joined
    assigns: list[tuple[str, str]] = []
    ready_net: dict[tuple[str, str], str] = {}
    for v in list(g.inputs) + [op.result for op in ops] + g.param_names:
        s = sinks.get(v, [])
        base = sv_name(v)
        join = f"{base}_ready_join" if (v in outputs and len(s) > 1) else f"{base}_ready"
        if not s:
            assigns.append((join, "1'b1"))
        elif len(s) == 1:
            ready_net[(v, s[0])] = f"{base}_ready"
        else:
            parts = []
            for k, sink in enumerate(s):
                net = f"{base}_ready" if sink == "top" else f"{base}_ready_{k}"
                ready_net[(v, sink)] = net
                parts.append(net)
                if sink != "top":
                    wires.append((1, net))
            assigns.append((join, " & ".join(parts)))
            if join != f"{base}_ready":
                wires.append((1, join))

    def fix(inst: Instance) -> Instance:
        ports = []
        for p, net in inst.ports:
            if isinstance(net, tuple):
                _, v, sink = net
                net = ready_net[(v, sink)]
            elif p == "out_ready" and inst.op is not None and inst.op in outputs and len(sinks.get(inst.op, [])) > 1:
                net = f"{sv_name(inst.op)}_ready_join"
            ports.append((p, net))
        return Instance(inst.id, inst.template, inst.params, tuple(ports), inst.op)

    instances = [fix(b) for b in body]

    top_ports: list[tuple[str, int, str]] = []
    for x in g.inputs:
        n = sv_name(x)
        top_ports += [("input", value_width[x], f"{n}_data"), ("input", 1, f"{n}_valid"), ("output", 1, f"{n}_ready")]
    for o in g.outputs:
        n = sv_name(o)
        top_ports += [("output", value_width[o], f"{n}_data"), ("output", 1, f"{n}_valid"), ("input", 1, f"{n}_ready")]
    top_names = {p[2] for p in top_ports}
    for op in ops:
        r = sv_name(op.result)
        for w, suffix in ((value_width[op.result], "data"), (1, "valid"), (1, "ready")):
            wires.append((w, f"{r}_{suffix}"))
    wires = [w for w in wires if w[1] not in top_names]
    seen, uniq = set(), []
    for w in wires:
        if w[1] not in seen:
            seen.add(w[1])
            uniq.append(w)
    return Netlist(f"{g.name}_top", tuple(top_ports), tuple(uniq), tuple(assigns), tuple(instances))


# --- rendering and parsing -------------------------------------------------------------------


def _decl(width: int, name: str) -> str:
    return f"logic [{width - 1}:0] {name}" if width > 1 else f"logic {name}"


def render(n: Netlist) -> str:
    lines = [f"// structural dataflow netlist for {n.module}", f"module {n.module} ("]
    ports = [("input", 1, "clk"), ("input", 1, "rst")] + list(n.top_ports)
    lines.append(",\n".join(f"    {d:<6} {_decl(w, name)}" for d, w, name in ports))
    lines.append(");")
    lines.append("")
    for w, name in n.wires:
        lines.append(f"    {_decl(w, name)};")
    if n.assigns:
        lines.append("")
    for t, e in n.assigns:
        lines.append(f"    assign {t} = {e};")
    for inst in n.instances:
        lines.append("")
        lines.append(f"    {inst.template} #(")
        lines.append(",\n".join(f"        .{k}({v})" for k, v in inst.params))
        lines.append(f"    ) {inst.id} (")
        lines.append(",\n".join(f"        .{p}({net})" for p, net in inst.ports))
        lines.append("    );")
    lines.append("endmodule")
    return "\n".join(lines) + "\n"


_MODULE = re.compile(r"^module\s+(\w+)\s*\((.*?)\);", re.S | re.M)
_TOP_PORT = re.compile(r"(input|output)\s+logic(?:\s*\[(\d+):0\])?\s+(\w+)")
_WIRE = re.compile(r"^\s*logic(?:\s*\[(\d+):0\])?\s+(\w+)\s*;", re.M)
_ASSIGN = re.compile(r"^\s*assign\s+(\w+)\s*=\s*(.*?);", re.M)
_INST = re.compile(r"^\s*(\w+)\s*#\((.*?)\)\s*(\w+)\s*\((.*?)\);", re.S | re.M)
_BIND = re.compile(r'\.(\w+)\(("(?:[^"\\]|\\.)*"|[^()"]*)\)')


def parse_netlist(text: str) -> Netlist:
    m = _MODULE.search(text)
    if m is None:
        raise EmitError("top file has no module header")
    top = [(d, int(w) + 1 if w else 1, name) for d, w, name in _TOP_PORT.findall(m.group(2))]
    top = [p for p in top if p[2] not in ("clk", "rst")]
    body = text[m.end():]
    wires = tuple((int(w) + 1 if w else 1, name) for w, name in _WIRE.findall(body))
    assigns = tuple((t, e.strip()) for t, e in _ASSIGN.findall(body))
    insts = []
    for tmpl, params, iid, ports in _INST.findall(body):
        insts.append(Instance(iid, tmpl, tuple(_BIND.findall(params)), tuple(_BIND.findall(ports))))
    return Netlist(m.group(1), tuple(top), wires, assigns, tuple(insts))


# --- emission ----------------------------------------------------------------------------------


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _net_inventory(n: Netlist) -> list[dict]:
    drivers: dict[str, list[str]] = {}
    readers: dict[str, list[str]] = {}
    for d, _, name in n.top_ports:
        (drivers if d == "input" else readers).setdefault(name, []).append(f"top.{name}")
    for t, expr in n.assigns:
        drivers.setdefault(t, []).append("assign")
        for part in re.findall(r"(?<!')\b[A-Za-z_]\w*", expr):
            readers.setdefault(part, []).append(f"assign.{t}")
    for inst in n.instances:
        for p, net in inst.ports:
            if p in ("clk", "rst"):
                continue
            (drivers if _is_output(p) else readers).setdefault(net, []).append(f"{inst.id}.{p}")
    names = sorted(set(drivers) | set(readers))
    return [{"net": k, "drivers": drivers.get(k, []), "sinks": sorted(readers.get(k, []))} for k in names]


def _is_output(port: str) -> bool:
    return port in ("out_data", "out_valid") or (port.endswith("_ready") and port != "out_ready")


def manifest_for(g: Graph, n: Netlist, templates: dict[str, Template]) -> dict:
    return {
        "graph": g.name,
        "top": "top.sv",
        "module": n.module,
        "instances": [
            {"id": i.id, "template": i.template, "op": i.op, "params": dict(i.params), "ports": dict(i.ports)}
            for i in n.instances
        ],
        "nets": _net_inventory(n),
        "templates": {name: _sha(t.text) for name, t in sorted(templates.items())},
    }


def _resolve_templates(n: Netlist, templates_dir: Union[str, Path]) -> dict[str, Template]:
    templates = {}
    for inst in n.instances:
        if inst.template not in templates:
            templates[inst.template] = load_template(templates_dir, inst.template)
        t = templates[inst.template]
        for k, _ in inst.params:
            if k not in t.params:
                raise EmitError(f"template {t.name} declares no parameter {k} (instance {inst.id})")
        for p, _ in inst.ports:
            if p not in t.ports:
                raise EmitError(f"template {t.name} declares no port {p} (instance {inst.id})")
    return templates


def render_files(g: Graph, templates_dir: Union[str, Path] = TEMPLATES_DIR) -> dict[str, str]:
    n = build_netlist(g)
    templates = _resolve_templates(n, templates_dir)
    files = {"top.sv": render(n)}
    for name, t in sorted(templates.items()):
        files[f"templates/{name}.sv"] = t.text
    files["manifest.json"] = json.dumps(manifest_for(g, n, templates), indent=2, sort_keys=True) + "\n"
    return files


def emit(g: Graph, templates_dir: Union[str, Path] = TEMPLATES_DIR, out_dir: Union[str, Path] = "hw") -> list[Path]:
    """Write the netlist, its templates and the manifest; byte-deterministic."""
    files = render_files(g, templates_dir)
    out = Path(out_dir)
    written = []
    for rel, text in files.items():
        p = out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        written.append(p)
    return written


# --- checking ------------------------------------------------------------------------------------


@dataclass
class NetlistReport:
    diagnostics: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.diagnostics

    def __str__(self) -> str:
        return "netlist clean" if self.ok else "\n".join(self.diagnostics)


def _structural_diff(g: Graph, got: Netlist, want: Netlist, report: NetlistReport) -> None:
    d = report.diagnostics
    if got.module != want.module:
        d.append(f"module name: file has {got.module}, graph implies {want.module}")
    ops_want = {i.id: i for i in want.instances if i.op is not None}
    got_by_id = {}
    for i in got.instances:
        if i.id in got_by_id:
            d.append(f"instance {i.id} appears twice")
        got_by_id[i.id] = i
    is_op = re.compile(r"^(?!cast_|rom_)[A-Za-z]\w*_\d+$")
    for iid in sorted(set(ops_want) - set(got_by_id)):
        d.append(f"operation {ops_want[iid].op} has no instance {iid}")
    for iid in sorted(set(got_by_id) - {i.id for i in want.instances}):
        tag = "instance" if is_op.match(iid) else "auxiliary instance"
        d.append(f"{tag} {iid} does not correspond to any operation")
    for w in want.instances:
        i = got_by_id.get(w.id)
        if i is None:
            if w.op is None:
                d.append(f"auxiliary instance {w.id} is missing")
            continue
        if i.template != w.template:
            d.append(f"instance {w.id}: template {i.template}, graph implies {w.template}")
        gp, wp = dict(i.params), dict(w.params)
        for k in sorted(set(gp) | set(wp)):
            if gp.get(k) != wp.get(k):
                d.append(f"instance {w.id} parameter {k}: file has {gp.get(k)}, graph implies {wp.get(k)}")
        gq, wq = dict(i.ports), dict(w.ports)
        for k in sorted(set(gq) | set(wq)):
            if gq.get(k) != wq.get(k):
                d.append(f"connectivity: instance {w.id} port {k} is on net {gq.get(k)}, graph implies {wq.get(k)}")
    if set(got.top_ports) != set(want.top_ports) or got.top_ports != want.top_ports:
        d.append("top-level ports differ from the graph's inputs and outputs")
    if got.wires != want.wires:
        missing = sorted({w[1] for w in want.wires} - {w[1] for w in got.wires})
        extra = sorted({w[1] for w in got.wires} - {w[1] for w in want.wires})
        d.append(f"wire declarations differ (missing {missing}, unexpected {extra}, or widths changed)")
    if got.assigns != want.assigns:
        d.append("ready-join assignments differ from the graph's fan-out")
    # every net has one driver and every sink is driven
    inventory = _net_inventory(got)
    for entry in inventory:
        if len(entry["drivers"]) != 1 and entry["net"] not in ("clk", "rst"):
            kind = "undriven" if not entry["drivers"] else "multiply driven"
            d.append(f"connectivity: net {entry['net']} is {kind}")


def _edge_check(g: Graph, got: Netlist, report: NetlistReport) -> None:
    """Trace each operation input back through casts to its producer."""
    data_driver: dict[str, tuple[str, str]] = {}
    for dname, _, name in got.top_ports:
        if dname == "input":
            data_driver[name] = ("top", name)
    for i in got.instances:
        for p, net in i.ports:
            if p == "out_data":
                data_driver[net] = (i.id, p)
    by_id = {i.id: i for i in got.instances}
    ops = topo_order(g)
    inst_of = {op.result: f"{op.kind}_{k}" for k, op in enumerate(ops)}
    for k, op in enumerate(ops):
        inst = by_id.get(inst_of[op.result])
        if inst is None:
            continue
        ports = dict(inst.ports)
        for j, a in enumerate(op.args):
            net = ports.get(f"in{j}_data")
            hops = 0
            src = data_driver.get(net)
            while src is not None and src[0].startswith(f"{CAST}_") and hops < 4:
                net = dict(by_id[src[0]].ports).get("in0_data")
                src = data_driver.get(net)
                hops += 1
            want = ("top", f"{sv_name(a)}_data") if a in g.inputs else (inst_of.get(a), "out_data")
            if src != want:
                report.diagnostics.append(
                    f"connectivity: {inst.id} input {j} traces to {src}, graph edge {a} -> {op.result} implies {want}"
                )


def check_netlist(g: Graph, out_dir: Union[str, Path], templates_dir: Union[str, Path] = TEMPLATES_DIR) -> NetlistReport:
    """Re-parse the emitted files and compare them with what ``g`` implies."""
    out = Path(out_dir)
    report = NetlistReport()
    top = out / "top.sv"
    if not top.is_file():
        report.diagnostics.append(f"missing {top}")
        return report
    text = top.read_text()
    try:
        want = build_netlist(g)
        expected_files = render_files(g, templates_dir)
    except EmitError as exc:
        report.diagnostics.append(f"graph cannot be emitted: {exc}")
        return report
    try:
        got = parse_netlist(text)
    except EmitError as exc:
        report.diagnostics.append(str(exc))
        return report
    _structural_diff(g, got, want, report)
    _edge_check(g, got, report)
    if text != expected_files["top.sv"] and not report.diagnostics:
        report.diagnostics.append("top.sv differs from the canonical rendering (formatting or comments changed)")
    # manifest and templates
    for rel, body in expected_files.items():
        if rel == "top.sv":
            continue
        p = out / rel
        if not p.is_file():
            report.diagnostics.append(f"missing {rel}")
            continue
        actual = p.read_text()
        if rel == "manifest.json":
            try:
                m = json.loads(actual)
            except json.JSONDecodeError as exc:
                report.diagnostics.append(f"manifest.json is not valid JSON: {exc}")
                continue
            ref = json.loads(body)
            for key in sorted(set(m) | set(ref)):
                if m.get(key) != ref.get(key):
                    report.diagnostics.append(f"manifest.json field {key!r} disagrees with the graph")
            if actual != body and m == ref:
                report.diagnostics.append("manifest.json differs from the canonical rendering")
        elif actual != body:
            name = Path(rel).stem
            report.diagnostics.append(
                f"template {name}: hash {_sha(actual)[:12]} differs from {_sha(body)[:12]} recorded in the manifest"
            )
    templates_dir_out = out / "templates"
    if templates_dir_out.is_dir():
        expected_t = {Path(r).name for r in expected_files if r.startswith("templates/")}
        for p in sorted(templates_dir_out.glob("*.sv")):
            if p.name not in expected_t:
                report.diagnostics.append(f"unexpected template file {p.name}")
    return report
