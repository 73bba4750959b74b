"""Bundled toy models and data used by the tests, scripts and CLI examples.

Everything here is generated deterministically from fixed seeds, so the files
written by :func:`write_assets` are byte-identical across runs.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from .emulation import Dataset, save_dataset
from .ir.graph import Graph
from .ir.importer import import_model
from .ir.text import parse_ir

MLP_IN = (8, 8)
MLP_HIDDEN = 128
MLP_CLASSES = 2

TOY_TEXT = """\
toy(x: MXInt((16,2),8,7)<8,8>):
    x0: MXInt((16,2),8,7)<64> = flatten(x: MXInt((16,2),8,7)<8,8>)
    x1: MXInt((16,2),8,7)<32> = linear(x0: MXInt((16,2),8,7)<64>) [bias: MXInt((16,2),8,3)<32>, weight: MXInt((16,2),8,3)<32,64>]
    x2: MXInt((16,2),8,7)<32> = relu(x1: MXInt((16,2),8,7)<32>)
    return x2
"""


def toy_graph() -> Graph:
    """Flatten, linear and relu with 3-bit parameters and 7-bit activations."""
    return parse_ir(TOY_TEXT)


def _pack(params: list[tuple[str, np.ndarray]]) -> tuple[dict, bytes]:
    entries, chunks, offset = {}, [], 0
    for name, arr in params:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries[name] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.size
        chunks.append(arr.tobytes())
    return entries, b"".join(chunks)


# --- toy MLP ------------------------------------------------------------------------


def make_mlp_dataset(n: int, seed: int, split: str = "evaluation") -> Dataset:
    """Two Gaussian classes on an 8x8 grid with per-pixel scale spread."""
    proto = np.random.default_rng(1234)
    direction = proto.standard_normal(MLP_IN)
    direction /= np.linalg.norm(direction)
    scale = np.exp(proto.uniform(-2.5, 2.5, MLP_IN))
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, MLP_CLASSES, n)
    sign = np.where(labels == 1, 1.0, -1.0)[:, None, None]
    noise = rng.standard_normal((n,) + MLP_IN)
    x = (noise + 2.2 * sign * direction * np.sqrt(np.prod(MLP_IN)) / 4.0) * scale
    return Dataset(x, labels, split)


def _train_mlp(d: Dataset, steps: int = 400, lr: float = 0.01, seed: int = 7):
    """Full-batch Adam on cross-entropy; numpy only, deterministic."""
    rng = np.random.default_rng(seed)
    k = int(np.prod(MLP_IN))
    params = {
        "w1": rng.standard_normal((MLP_HIDDEN, k)) * np.sqrt(2.0 / k),
        "b1": np.zeros(MLP_HIDDEN),
        "w2": rng.standard_normal((MLP_CLASSES, MLP_HIDDEN)) * np.sqrt(1.0 / MLP_HIDDEN),
        "b2": np.zeros(MLP_CLASSES),
    }
    m = {n: np.zeros_like(p) for n, p in params.items()}
    v = {n: np.zeros_like(p) for n, p in params.items()}
    x = d.inputs.reshape(len(d), -1)
    y = np.eye(MLP_CLASSES)[d.labels]
    for t in range(1, steps + 1):
        h_pre = x @ params["w1"].T + params["b1"]
        h = np.maximum(h_pre, 0.0)
        logits = h @ params["w2"].T + params["b2"]
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g_logits = (p - y) / len(x)
        grads = {"w2": g_logits.T @ h, "b2": g_logits.sum(0)}
        g_h = (g_logits @ params["w2"]) * (h_pre > 0)
        grads["w1"] = g_h.T @ x
        grads["b1"] = g_h.sum(0)
        for n in params:
            m[n] = 0.9 * m[n] + 0.1 * grads[n]
            v[n] = 0.999 * v[n] + 0.001 * grads[n] ** 2
            mh = m[n] / (1 - 0.9**t)
            vh = v[n] / (1 - 0.999**t)
            params[n] = params[n] - lr * mh / (np.sqrt(vh) + 1e-8)
    return params


def mlp_manifest_and_weights() -> tuple[dict, bytes]:
    params = _train_mlp(make_mlp_dataset(2048, seed=11, split="training"))
    entries, blob = _pack(
        [("x1.weight", params["w1"]), ("x1.bias", params["b1"]), ("x3.weight", params["w2"]), ("x3.bias", params["b2"])]
    )
    manifest = {
        "name": "toy_mlp",
        "inputs": [{"name": "x", "shape": list(MLP_IN)}],
        "ops": [
            {"kind": "flatten", "args": ["x"], "results": ["x0"]},
            {"kind": "linear", "args": ["x0"], "results": ["x1"],
             "params": {"weight": entries["x1.weight"], "bias": entries["x1.bias"]}},
            {"kind": "relu", "args": ["x1"], "results": ["x2"]},
            {"kind": "linear", "args": ["x2"], "results": ["x3"],
             "params": {"weight": entries["x3.weight"], "bias": entries["x3.bias"]}},
        ],
        "outputs": ["x3"],
    }
    return manifest, blob


_MLP_CACHE: dict[str, tuple[dict, bytes]] = {}


def toy_mlp() -> Graph:
    """Flatten, linear 64->128, relu, linear 128->2; about 8.6k parameters."""
    if "mlp" not in _MLP_CACHE:
        _MLP_CACHE["mlp"] = mlp_manifest_and_weights()
    manifest, blob = _MLP_CACHE["mlp"]
    return import_model(json.loads(json.dumps(manifest)), blob)


def mlp_eval_dataset(n: int = 512) -> Dataset:
    return make_mlp_dataset(n, seed=29)


# --- toy transformer block ---------------------------------------------------------------


def transformer_manifest_and_weights(seq: int = 8, dim: int = 16, ffn: int = 32, seed: int = 5) -> tuple[dict, bytes]:
    """Pre-norm single-head attention plus a SiLU feed-forward, with residuals."""
    rng = np.random.default_rng(seed)
    shapes = {
        "h.gain": (dim,),
        "q.weight": (dim, dim), "k.weight": (dim, dim), "v.weight": (dim, dim), "o.weight": (dim, dim),
        "h2.gain": (dim,),
        "f1.weight": (ffn, dim), "f1.bias": (ffn,), "f2.weight": (dim, ffn), "f2.bias": (dim,),
    }
    arrays = []
    for name, shape in shapes.items():
        if name.endswith("gain"):
            arrays.append((name, 1.0 + 0.1 * rng.standard_normal(shape)))
        else:
            arrays.append((name, rng.standard_normal(shape) / np.sqrt(shape[-1])))
    entries, blob = _pack(arrays)

    def p(*names):
        return {n.split(".")[1]: entries[n] for n in names}

    ops = [
        {"kind": "rmsnorm", "args": ["x"], "results": ["h"], "params": p("h.gain")},
        {"kind": "linear", "args": ["h"], "results": ["q"], "params": p("q.weight")},
        {"kind": "linear", "args": ["h"], "results": ["k"], "params": p("k.weight")},
        {"kind": "linear", "args": ["h"], "results": ["v"], "params": p("v.weight")},
        {"kind": "transpose", "args": ["k"], "results": ["kt"]},
        {"kind": "matmul", "args": ["q", "kt"], "results": ["s"], "stream_order": "row_major"},
        {"kind": "softmax", "args": ["s"], "results": ["a"]},
        {"kind": "matmul", "args": ["a", "v"], "results": ["c"]},
        {"kind": "linear", "args": ["c"], "results": ["o"], "params": p("o.weight")},
        {"kind": "add", "args": ["x", "o"], "results": ["r1"]},
        {"kind": "rmsnorm", "args": ["r1"], "results": ["h2"], "params": p("h2.gain")},
        {"kind": "linear", "args": ["h2"], "results": ["f1"], "params": p("f1.weight", "f1.bias")},
        {"kind": "silu", "args": ["f1"], "results": ["g"]},
        {"kind": "linear", "args": ["g"], "results": ["f2"], "params": p("f2.weight", "f2.bias")},
        {"kind": "add", "args": ["r1", "f2"], "results": ["y"]},
    ]
    manifest = {
        "name": "toy_block",
        "inputs": [{"name": "x", "shape": [seq, dim]}],
        "ops": ops,
        "outputs": ["y"],
    }
    return manifest, blob


def toy_transformer() -> Graph:
    manifest, blob = transformer_manifest_and_weights()
    return import_model(manifest, blob)


# --- on-disk assets -------------------------------------------------------------------------


def write_assets(out_dir: Union[str, Path]) -> list[Path]:
    """Write manifests, weight blobs, datasets and example configs for the CLI."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for stem, (manifest, blob) in (
        ("toy_mlp", mlp_manifest_and_weights()),
        ("toy_block", transformer_manifest_and_weights()),
    ):
        (out / f"{stem}.json").write_text(json.dumps(manifest, indent=2) + "\n")
        (out / f"{stem}.bin").write_bytes(blob)
        written += [out / f"{stem}.json", out / f"{stem}.bin"]
    written.append(save_dataset(make_mlp_dataset(512, seed=29), out / "toy_mlp_eval.json", "toy_mlp_eval"))
    written.append(save_dataset(make_mlp_dataset(256, seed=31, split="calibration"), out / "toy_mlp_profile.json",
                                "toy_mlp_profile"))
    (out / "toy.mir").write_text(TOY_TEXT)
    written.append(out / "toy.mir")
    return written
