"""Single-field mutations of an emitted hardware directory."""

import json
import re
from pathlib import Path

_BIND = re.compile(r"\.(\w+)\(([^()]*)\)")
_WIDTH = re.compile(r"\[(\d+):0\]")


def _alter(value: str) -> str:
    if value.isdigit():
        return str(int(value) + 1)
    if value.startswith('"'):
        return value[:-1] + 'x"'
    return value + "_m"


def top_mutations(text: str):
    """Yield (label, mutated text): every binding value, every declared width, the module name, whitespace."""
    for m in _BIND.finditer(text):
        a, b = m.span(2)
        yield f"top.sv .{m.group(1)} @{a}", text[:a] + _alter(m.group(2)) + text[b:]
    for m in _WIDTH.finditer(text):
        a, b = m.span(1)
        yield f"top.sv width @{a}", text[:a] + str(int(m.group(1)) + 1) + text[b:]
    for m in re.finditer(r"\) (\w+) \(", text):
        a, b = m.span(1)
        yield f"top.sv instance {m.group(1)}", text[:a] + m.group(1) + "x" + text[b:]
    m = re.search(r"^module (\w+)", text, re.M)
    yield "top.sv module", text[:m.start(1)] + m.group(1) + "_m" + text[m.end(1):]
    nl = text.index("\n", len(text) // 2)
    yield "top.sv whitespace", text[:nl] + " " + text[nl:]


def _leaves(obj, path=()):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _leaves(v, path + (k,))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _leaves(v, path + (i,))
    else:
        yield path, obj


def manifest_mutations(text: str):
    """Yield one mutation per leaf of the manifest, re-serialised canonically."""
    doc = json.loads(text)
    for path, value in _leaves(doc):
        new = json.loads(text)
        node = new
        for k in path[:-1]:
            node = node[k]
        node[path[-1]] = _alter(value) if isinstance(value, str) else (value or 0) + 1
        yield f"manifest {'/'.join(map(str, path))}", json.dumps(new, indent=2, sort_keys=True) + "\n"


def template_mutations(text: str):
    mid = len(text) // 2
    flipped = "X" if text[mid] != "X" else "Y"
    yield "byte", text[:mid] + flipped + text[mid + 1:]
    yield "append", text + "\n"


def all_mutations(out_dir: Path):
    """Yield (relative path, label, mutated text) over every file of an emitted directory."""
    out = Path(out_dir)
    yield from (("top.sv", lab, t) for lab, t in top_mutations((out / "top.sv").read_text()))
    yield from (("manifest.json", lab, t) for lab, t in manifest_mutations((out / "manifest.json").read_text()))
    for p in sorted((out / "templates").glob("*.sv")):
        rel = f"templates/{p.name}"
        yield from ((rel, f"{rel} {lab}", t) for lab, t in template_mutations(p.read_text()))


def undetected(g, out_dir: Path, check, mutations=None) -> list[str]:
    """Apply each mutation in place, run ``check``, restore; return the labels ``check`` missed."""
    out = Path(out_dir)
    missed = []
    for rel, label, text in list(mutations if mutations is not None else all_mutations(out)):
        p = out / rel
        original = p.read_text()
        if text == original:
            continue
        p.write_text(text)
        try:
            if check(g, out).ok:
                missed.append(label)
        finally:
            p.write_text(original)
    return missed
