"""Software emulation of quantized inference.

Every kernel runs in float64 on a batch of samples (leading axis). The
quantized executor rounds each operation's inputs and parameters to their
value formats, runs the float kernel, and rounds the result to its format.
Blocks never straddle samples.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping, Optional, Union

import numpy as np
from scipy.special import expit

from .formats import Float32, avg_bitwidth
from .ir.graph import Graph, IRError, quantized_weight, topo_order
from .numerics import fake_quantize

DEFAULT_RMS_EPS = 1e-6


class EmulationError(IRError):
    pass


# --- kernels ------------------------------------------------------------------


def _align(a: np.ndarray, b: np.ndarray):
    """Pad per-sample ranks so broadcasting never touches the batch axis."""
    while a.ndim < b.ndim:
        a = np.expand_dims(a, 1)
    while b.ndim < a.ndim:
        b = np.expand_dims(b, 1)
    return a, b


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _rmsnorm(x: np.ndarray, gain: np.ndarray, eps: float) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps) * gain


def _linear(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray]) -> np.ndarray:
    if x.shape[-1] != w.shape[1]:
        raise EmulationError(f"linear: input {x.shape[1:]} does not match weight {w.shape}")
    y = np.einsum("...k,nk->...n", x, w)
    return y if b is None else y + b


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[-2]:
        raise EmulationError(f"matmul: {a.shape[1:]} x {b.shape[1:]}")
    a, b = _align(a, b)
    return np.einsum("...ik,...kj->...ij", a, b)


def _add(a, b):
    a, b = _align(a, b)
    return a + b


def _mul(a, b):
    a, b = _align(a, b)
    return a * b


KERNELS: dict[str, Callable] = {
    "linear": lambda args, p, eps: _linear(args[0], p["weight"], p.get("bias")),
    "matmul": lambda args, p, eps: _matmul(args[0], args[1]),
    "relu": lambda args, p, eps: np.maximum(args[0], 0.0),
    "silu": lambda args, p, eps: args[0] * expit(args[0]),
    "softmax": lambda args, p, eps: _softmax(args[0]),
    "rmsnorm": lambda args, p, eps: _rmsnorm(args[0], p["gain"], eps),
    "add": lambda args, p, eps: _add(args[0], args[1]),
    "mul": lambda args, p, eps: _mul(args[0], args[1]),
    "flatten": lambda args, p, eps: args[0].reshape(args[0].shape[0], -1),
    "transpose": lambda args, p, eps: np.swapaxes(args[0], -1, -2),
    "reorder": lambda args, p, eps: args[0],
    "output": lambda args, p, eps: args[0],
    "buffer": lambda args, p, eps: args[0],
}


# --- executors ------------------------------------------------------------------


def _as_feeds(g: Graph, x) -> tuple[dict[str, np.ndarray], bool]:
    """Normalise inputs to batched arrays; returns (feeds, was_batched)."""
    if not isinstance(x, Mapping):
        if len(g.inputs) != 1:
            raise EmulationError(f"graph {g.name} has {len(g.inputs)} inputs; pass a mapping")
        x = {g.inputs[0]: x}
    feeds, batched = {}, None
    for name in g.inputs:
        if name not in x:
            raise EmulationError(f"missing input {name}")
        arr = np.asarray(x[name], dtype=np.float64)
        shape = g.values[name].shape
        if arr.shape == tuple(shape):
            arr, b = arr[None], False
        elif arr.shape[1:] == tuple(shape):
            b = True
        else:
            raise EmulationError(f"input {name} has shape {arr.shape}, graph expects {shape}")
        if batched is not None and b != batched:
            raise EmulationError("mix of batched and unbatched inputs")
        batched = b
        feeds[name] = arr
    return feeds, bool(batched)


def run_graph(
    g: Graph, feeds: Mapping[str, np.ndarray], quantized: bool, eps: float = DEFAULT_RMS_EPS
) -> dict[str, np.ndarray]:
    """Execute on batched feeds; returns every activation value (batched)."""
    env: dict[str, np.ndarray] = {}

    def rounded(name: str, arr: np.ndarray, batch_dims: int) -> np.ndarray:
        fmt = g.values[name].format
        if not quantized or isinstance(fmt, Float32):
            return arr
        return fake_quantize(arr, fmt, batch_dims=batch_dims)

    for name, arr in feeds.items():
        env[name] = rounded(name, arr, 1)
    for op in topo_order(g):
        kernel = KERNELS.get(op.kind)
        if kernel is None:
            raise EmulationError(f"no kernel for {op.kind}")
        params = {
            role: (quantized_weight(g, ref) if quantized else g.weights[ref])
            for role, ref in op.params
        }
        args = [env[a] for a in op.args]
        out = kernel(args, params, eps)
        expected = g.values[op.result].shape
        if expected is not None and out.shape[1:] != tuple(expected):
            raise EmulationError(f"{op.result}: kernel produced {out.shape[1:]}, expected {expected}")
        env[op.result] = rounded(op.result, out, 1)
    return env


def _outputs(g: Graph, env, batched: bool):
    outs = [env[o] if batched else env[o][0] for o in g.outputs]
    return outs[0] if len(outs) == 1 else tuple(outs)


def run_float(g: Graph, x, eps: float = DEFAULT_RMS_EPS):
    feeds, batched = _as_feeds(g, x)
    return _outputs(g, run_graph(g, feeds, False, eps), batched)


def run_quantized(g: Graph, x, eps: float = DEFAULT_RMS_EPS):
    feeds, batched = _as_feeds(g, x)
    return _outputs(g, run_graph(g, feeds, True, eps), batched)


# --- datasets -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray  # (N, *input shape)
    labels: np.ndarray  # (N,) class indices
    split: str = "evaluation"

    def __post_init__(self) -> None:
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.split not in ("training", "calibration", "evaluation"):
            raise ValueError(f"unknown split {self.split!r}")

    def __len__(self) -> int:
        return len(self.labels)

    def chunks(self, n: int) -> list["Dataset"]:
        bounds = np.linspace(0, len(self), max(1, n) + 1).astype(int)
        return [
            Dataset(self.inputs[a:b], self.labels[a:b], self.split)
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]


def save_dataset(d: Dataset, manifest_path: Union[str, Path], name: str = "data") -> Path:
    """Write ``<name>.json`` with float32 input and uint32 label blobs beside it."""
    manifest_path = Path(manifest_path)
    stem = manifest_path.stem
    inputs_file = f"{stem}.inputs.bin"
    labels_file = f"{stem}.labels.bin"
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    (manifest_path.parent / inputs_file).write_bytes(d.inputs.astype("<f4").tobytes())
    (manifest_path.parent / labels_file).write_bytes(d.labels.astype("<u4").tobytes())
    meta = {
        "name": name,
        "split": d.split,
        "shape": list(d.inputs.shape[1:]),
        "count": len(d),
        "inputs": inputs_file,
        "labels": labels_file,
    }
    manifest_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_dataset(manifest_path: Union[str, Path]) -> Dataset:
    manifest_path = Path(manifest_path)
    meta = json.loads(manifest_path.read_text())
    shape = tuple(meta["shape"])
    count = int(meta["count"])
    raw = np.frombuffer((manifest_path.parent / meta["inputs"]).read_bytes(), dtype="<f4")
    labels = np.frombuffer((manifest_path.parent / meta["labels"]).read_bytes(), dtype="<u4")
    if raw.size != count * math.prod(shape) or labels.size != count:
        raise ValueError(f"dataset {manifest_path}: blob sizes do not match count {count} x {shape}")
    return Dataset(raw.astype(np.float64).reshape((count,) + shape), labels.astype(np.int64), meta["split"])


# --- profiling --------------------------------------------------------------------


@dataclass(frozen=True)
class ValueStats:
    count: int  # samples aggregated
    mean: float  # over every element of every sample
    variance: float  # variance across a tensor's elements, averaged over samples
    max_abs: float
    mean_square: float  # over every element; rms for the dynamic-range rule

    @classmethod
    def of(cls, arr: np.ndarray, batch_dims: int = 0) -> "ValueStats":
        """Statistics of one tensor, or of a batch when ``batch_dims`` is 1."""
        arr = np.asarray(arr, dtype=np.float64)
        rows = arr.reshape(len(arr), -1) if batch_dims else arr.reshape(1, -1)
        mean = float(rows.mean())
        # two-pass, shifted by a sample so constant rows give exactly zero
        shifted = rows - rows[:, :1]
        centred = shifted - shifted.mean(axis=1, keepdims=True)
        variance = float(np.mean(np.mean(centred * centred, axis=1)))
        return cls(len(rows), mean, variance, float(np.abs(rows).max()), float(np.mean(rows * rows)))

    def merge(self, other: "ValueStats") -> "ValueStats":
        """Count-weighted combination; associative up to rounding."""
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        n = self.count + other.count

        def avg(a: float, b: float) -> float:
            return (a * self.count + b * other.count) / n

        return ValueStats(n, avg(self.mean, other.mean), avg(self.variance, other.variance),
                          max(self.max_abs, other.max_abs), avg(self.mean_square, other.mean_square))


@dataclass(frozen=True)
class ProfileStats:
    values: Mapping[str, ValueStats]

    def apply(self, g: Graph) -> Graph:
        """Copy mean, variance and max_abs into the graph's value attributes."""
        updates = {
            n: replace(g.values[n], mean=s.mean, variance=s.variance, max_abs=s.max_abs)
            for n, s in self.values.items()
        }
        return g.with_values(updates)


def profile(
    g: Graph, d: Dataset, chunk: int = 256, workers: int = 1, eps: float = DEFAULT_RMS_EPS
) -> ProfileStats:
    if len(d) == 0:
        raise ValueError("cannot profile on an empty dataset")
    names = g.activation_names()

    def stats_of(part: Dataset) -> dict[str, ValueStats]:
        feeds = {g.inputs[0]: part.inputs} if len(g.inputs) == 1 else None
        if feeds is None:
            raise EmulationError("profiling supports single-input graphs")
        env = run_graph(g, feeds, quantized=False, eps=eps)
        return {n: ValueStats.of(env[n], batch_dims=1) for n in names}

    parts = [Dataset(d.inputs[i : i + chunk], d.labels[i : i + chunk], d.split) for i in range(0, len(d), chunk)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(stats_of, parts))
    else:
        results = [stats_of(p) for p in parts]
    merged = results[0]
    for r in results[1:]:
        merged = {n: merged[n].merge(r[n]) for n in names}
    return ProfileStats(merged)


# --- accuracy ------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    avg_bitwidth_model: float
    sample_count: int


def model_avg_bitwidth(g: Graph) -> float:
    """Element-count-weighted mean of per-value average bitwidth."""
    total, bits = 0, Fraction(0)
    for name in g.value_names():
        info = g.values[name]
        n = info.numel
        total += n
        bits += n * avg_bitwidth(info.format)
    return float(bits / total) if total else 32.0


def predict(g: Graph, inputs: np.ndarray, mode: str = "float", eps: float = DEFAULT_RMS_EPS) -> np.ndarray:
    if mode not in ("float", "quantized"):
        raise ValueError(f"mode must be 'float' or 'quantized', got {mode!r}")
    env = run_graph(g, {g.inputs[0]: inputs}, quantized=(mode == "quantized"), eps=eps)
    out = env[g.outputs[0]]
    return out.reshape(out.shape[0], -1)


def eval_accuracy(
    g: Graph, d: Dataset, mode: str = "float", workers: int = 1, eps: float = DEFAULT_RMS_EPS
) -> EvalMetrics:
    n_classes = math.prod(g.values[g.outputs[0]].shape)
    if len(d) and (d.labels.min() < 0 or d.labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range [{d.labels.min()}, {d.labels.max()}]")

    def correct(part: Dataset) -> int:
        return int(np.sum(np.argmax(predict(g, part.inputs, mode, eps), axis=1) == part.labels))

    parts = d.chunks(workers)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            hits = sum(pool.map(correct, parts))
    else:
        hits = sum(correct(p) for p in parts)
    acc = hits / len(d) if len(d) else 0.0
    return EvalMetrics(acc, model_avg_bitwidth(g), len(d))
