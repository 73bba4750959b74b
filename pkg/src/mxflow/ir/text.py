"""Text form of the IR (``.mir`` files).

Grammar::

    graph   ::= NAME '(' [decl {',' decl}] ')' ':' line* 'return' [NAME {',' NAME}]
    decl    ::= NAME ':' type
    line    ::= NAME ':' type '=' KIND '(' [arg {',' arg}] ')' [params] [attrs]
    arg     ::= NAME [':' type]
    params  ::= '[' ROLE ':' type {',' ROLE ':' type} ']'
    type    ::= FORMAT ['<' [INT {',' INT}] '>'] [attrs]
    attrs   ::= '{' [KEY ':' value {',' KEY ':' value}] '}'
    value   ::= STRING | NUMBER | NAME | '(' value {',' value} ')'

A parameter with role ``weight`` on the operation defining ``x1`` is the
value ``x1.weight``. Unknown attribute keys keep their value text verbatim.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Optional

from ..formats import FORMAT_TOKEN, FormatError, format_str, parse_format
from .graph import (
    OP_KINDS,
    Graph,
    IRError,
    Operation,
    OperationAttrs,
    ValueInfo,
    param_ref,
    validate,
)


class ParseError(IRError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


@dataclass
class Token:
    kind: str  # name | number | string | format | punct | eof
    text: str
    pos: int
    line: int
    col: int


_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")
_NUMBER = re.compile(r"[-+]?(\d+\.?\d*([eE][-+]?\d+)?|\.\d+([eE][-+]?\d+)?)")
_STRING = re.compile(r'"([^"\\]|\\.)*"')
_PUNCT = set("()[]{}<>,:=")


def tokenize(text: str) -> list[Token]:
    tokens = []
    i, line, line_start = 0, 1, 0
    n = len(text)
    while i < n:
        ch = text[i]
        col = i - line_start + 1
        if ch == "\n":
            i += 1
            line += 1
            line_start = i
            continue
        if ch.isspace():
            i += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        m = FORMAT_TOKEN.match(text, i)
        if m and not _NAME.match(text, m.end()):
            tokens.append(Token("format", m.group(0), i, line, col))
            i = m.end()
            continue
        for kind, pattern in (("name", _NAME), ("number", _NUMBER), ("string", _STRING)):
            m = pattern.match(text, i)
            if m:
                tokens.append(Token(kind, m.group(0), i, line, col))
                i = m.end()
                break
        else:
            if ch in _PUNCT:
                tokens.append(Token("punct", ch, i, line, col))
                i += 1
            else:
                raise ParseError(f"unexpected character {ch!r}", line, col)
    tokens.append(Token("eof", "", n, line, n - line_start + 1))
    return tokens


_VALUE_KEYS = {
    "mean": "mean",
    "variance": "variance",
    "max_abs": "max_abs",
    "tile": "tile_shape",
    "order": "stream_order",
    "interface": "interface",
    "throughput": "est_throughput",
}
_OP_KEYS = {"hw_template": "hw_template", "area": "area_estimate", "depth": "depth"}
_NUMERIC = {"mean", "variance", "max_abs", "est_throughput", "area_estimate"}


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        return ParseError(msg, tok.line, tok.col)

    def next(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def at(self, text: str) -> bool:
        return self.tok.kind == "punct" and self.tok.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        return self.next()

    def name(self) -> Token:
        if self.tok.kind != "name":
            raise self.error(f"expected a name, found {self.tok.text or 'end of input'!r}")
        return self.next()

    # type ::= FORMAT [shape] [attrs]
    def type(self) -> ValueInfo:
        tok = self.tok
        if tok.kind != "format":
            raise self.error(f"expected a number format, found {tok.text or 'end of input'!r}")
        self.next()
        try:
            fmt = parse_format(tok.text)
        except FormatError as exc:
            raise self.error(str(exc), tok) from None
        shape = None
        if self.at("<"):
            self.next()
            dims = []
            while not self.at(">"):
                t = self.next()
                if t.kind != "number" or not t.text.isdigit():
                    raise self.error("expected a dimension", t)
                dims.append(int(t.text))
                if not self.at(">"):
                    self.expect(",")
            self.expect(">")
            shape = tuple(dims)
        info = ValueInfo(shape=shape, format=fmt)
        if self.at("{"):
            known, extra = self.attrs(_VALUE_KEYS)
            info = replace(info, extra=extra, **known)
        return info

    def attrs(self, keys: dict[str, str]):
        self.expect("{")
        known, extra = {}, []
        while not self.at("}"):
            key_tok = self.name()
            self.expect(":")
            start = self.tok.pos
            first = self.tok
            value = self.value()
            raw = self.text[start : self.toks[self.i - 1].pos + len(self.toks[self.i - 1].text)]
            field_name = keys.get(key_tok.text)
            if field_name is None:
                extra.append((key_tok.text, raw))
            else:
                known[field_name] = self._coerce(field_name, value, first)
            if not self.at("}"):
                self.expect(",")
        self.expect("}")
        return known, tuple(sorted(extra))

    def _coerce(self, field_name: str, value, tok: Token):
        if field_name in _NUMERIC:
            if not isinstance(value, (int, float)):
                raise self.error(f"{field_name} must be a number", tok)
            return value
        if field_name == "tile_shape":
            if not (isinstance(value, tuple) and len(value) == 2 and all(isinstance(v, int) for v in value)):
                raise self.error("tile must be a pair of integers", tok)
            return value
        if field_name == "depth":
            if not isinstance(value, int):
                raise self.error("depth must be an integer", tok)
            return value
        if not isinstance(value, str):
            raise self.error(f"{field_name} must be an identifier", tok)
        return value

    def value(self):
        tok = self.next()
        if tok.kind == "number":
            if re.fullmatch(r"[-+]?\d+", tok.text):
                return int(tok.text)
            return float(tok.text)
        if tok.kind == "string":
            return tok.text[1:-1]
        if tok.kind == "name":
            if tok.text in ("inf", "nan"):
                return float(tok.text)
            return tok.text
        if tok.kind == "punct" and tok.text == "(":
            items = []
            while not self.at(")"):
                items.append(self.value())
                if not self.at(")"):
                    self.expect(",")
            self.expect(")")
            return tuple(items)
        raise self.error(f"unexpected {tok.text or 'end of input'!r} in attribute value", tok)

    def graph(self) -> Graph:
        name = self.name().text
        self.expect("(")
        inputs, values = [], {}
        defs: dict[str, Token] = {}

        def define(tok: Token, info: ValueInfo):
            if tok.text in defs:
                raise self.error(f"SSA violation: {tok.text} redefined", tok)
            defs[tok.text] = tok
            values[tok.text] = info

        while not self.at(")"):
            t = self.name()
            self.expect(":")
            define(t, self.type())
            inputs.append(t.text)
            if not self.at(")"):
                self.expect(",")
        self.expect(")")
        self.expect(":")

        ops = []
        while not (self.tok.kind == "name" and self.tok.text == "return"):
            if self.tok.kind == "eof":
                raise self.error("expected 'return'")
            res_tok = self.name()
            if res_tok.text in defs:
                raise self.error(f"SSA violation: {res_tok.text} redefined", res_tok)
            self.expect(":")
            res_info = self.type()
            self.expect("=")
            kind_tok = self.name()
            if kind_tok.text not in OP_KINDS:
                raise self.error(f"unknown operator kind {kind_tok.text!r}", kind_tok)
            self.expect("(")
            args = []
            while not self.at(")"):
                a = self.name()
                if a.text == res_tok.text:
                    raise self.error(f"SSA violation: {a.text} used in its own definition", a)
                if a.text not in defs:
                    raise self.error(f"SSA violation: {a.text} used before definition", a)
                if self.at(":"):
                    self.next()
                    ann_tok = self.tok
                    ann = self.type()
                    if ann.format != values[a.text].format or (
                        ann.shape is not None and ann.shape != values[a.text].shape
                    ):
                        raise self.error(f"type annotation of {a.text} disagrees with its definition", ann_tok)
                args.append(a.text)
                if not self.at(")"):
                    self.expect(",")
            self.expect(")")
            params = []
            if self.at("["):
                self.next()
                while not self.at("]"):
                    role = self.name()
                    self.expect(":")
                    ref = param_ref(res_tok.text, role.text)
                    define(Token("name", ref, role.pos, role.line, role.col), self.type())
                    params.append((role.text, ref))
                    if not self.at("]"):
                        self.expect(",")
                self.expect("]")
            attrs = OperationAttrs()
            if self.at("{"):
                known, extra = self.attrs(_OP_KEYS)
                attrs = OperationAttrs(extra=extra, **known)
            define(res_tok, res_info)
            ops.append(Operation(kind_tok.text, tuple(args), (res_tok.text,), tuple(params), attrs))

        self.next()  # return
        outputs = []
        if self.tok.kind == "name":
            outputs.append(self.name())
            while self.at(","):
                self.next()
                outputs.append(self.name())
        for o in outputs:
            if o.text not in defs:
                raise self.error(f"returned value {o.text} is never defined", o)
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r} after return")
        return Graph(name, tuple(inputs), tuple(o.text for o in outputs), tuple(ops), values)


def parse_ir(text: str, check: bool = True) -> Graph:
    """Parse text into a graph; with ``check`` the graph must also pass ``validate``."""
    g = _Parser(text).graph()
    if not check:
        return g
    diags = validate(g)
    if diags:
        raise IRError("invalid graph:\n  " + "\n  ".join(map(str, diags)))
    return g


# --- printer ----------------------------------------------------------------


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return "(" + ",".join(_fmt_value(x) for x in v) + ")"
    if isinstance(v, str) and _NAME.fullmatch(v):
        return v
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _fmt_attrs(known: dict[str, object], extra) -> str:
    items = {k: _fmt_value(v) for k, v in known.items() if v is not None}
    items.update(dict(extra))
    if not items:
        return ""
    return "{" + ", ".join(f"{k}: {items[k]}" for k in sorted(items)) + "}"


def _fmt_type(info: ValueInfo, with_attrs: bool = True) -> str:
    out = format_str(info.format)
    if info.shape is not None:
        out += "<" + ",".join(str(d) for d in info.shape) + ">"
    if with_attrs:
        known = {key: getattr(info, f) for key, f in _VALUE_KEYS.items()}
        out += _fmt_attrs(known, info.extra)
    return out


def print_ir(g: Graph) -> str:
    v = g.values
    decls = ", ".join(f"{x}: {_fmt_type(v[x])}" for x in g.inputs)
    lines = [f"{g.name}({decls}):"]
    for op in g.operations:
        args = ", ".join(f"{a}: {_fmt_type(v[a], with_attrs=False)}" for a in op.args)
        line = f"    {op.result}: {_fmt_type(v[op.result])} = {op.kind}({args})"
        if op.params:
            line += " [" + ", ".join(f"{role}: {_fmt_type(v[ref])}" for role, ref in op.params) + "]"
        known = {key: getattr(op.attrs, f) for key, f in _OP_KEYS.items()}
        attrs = _fmt_attrs(known, op.attrs.extra)
        if attrs:
            line += " " + attrs
        lines.append(line)
    lines.append("    return" + (" " + ", ".join(g.outputs) if g.outputs else ""))
    return "\n".join(lines) + "\n"
