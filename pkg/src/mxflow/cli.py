"""Command-line driver: one subcommand per compiler pass.

Run configuration (JSON, paths relative to the file)::

    {"model": {"manifest": "toy_mlp.json", "weights": "toy_mlp.bin"},   # or {"ir": "g.mir"}
     "dataset": {"eval": "toy_mlp_eval.json", "profile": "toy_mlp_profile.json"},
     "budget": {"area_budget": 6500, "onchip_bits": 1e6, "offchip_bandwidth": 64},
     "cost_table": "costs.json",
     "quant_config": "cfg.json",
     "search": {"algo": "tpe", "n_trials": 64, "seed": 0, "mode": "reduced",
                "weights": {"k": 4}, "objective": "hardware_aware", "calibrate": true},
     "out": "runs/toy", "seed": 0}
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .emitter import TEMPLATES_DIR, EmitError, check_netlist, emit
from .emulation import Dataset, load_dataset, profile
from .hardware import CostTable, ResourceBudget, apply_tile_steps, insert_buffers, parallelize
from .ir.graph import Graph, IRError, QuantConfig, annotate, validate
from .ir.importer import import_model
from .ir.text import parse_ir, print_ir
from .numerics import QuantizationError
from .search import (
    SearchConfig,
    build_space,
    calibrate_weights,
    evaluate_config,
    graph_evaluator,
    search,
    trial_log_csv,
)

COMMANDS = ("import", "print", "validate", "profile", "quantize", "search", "evaluate", "emit")
BEST_CONFIG = "best_config.json"


class ConfigError(Exception):
    pass


class UsageError(Exception):
    pass


class _Parser_(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


@dataclass
class RunConfig:
    path: Path
    graph: Graph
    out: Path
    seed: int
    workers: int
    eval_data: Optional[Dataset] = None
    profile_data: Optional[Dataset] = None
    budget: Optional[ResourceBudget] = None
    table: CostTable = CostTable()
    quant: Optional[QuantConfig] = None
    quant_path: Optional[Path] = None
    search: SearchConfig = SearchConfig()
    calibrate: bool = True
    diagnostics: tuple = ()


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def _need(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return path


def load_run(args: argparse.Namespace) -> RunConfig:
    """Parse the config and every file it names; nothing is written here."""
    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        raise ConfigError(f"config file not found: {cfg_path}")
    try:
        raw = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{cfg_path}: invalid JSON: {exc}") from None
    base = cfg_path.parent
    known = {"model", "dataset", "budget", "cost_table", "quant_config", "search", "out", "seed"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{cfg_path}: unknown keys {sorted(unknown)}")

    model = raw.get("model")
    if not isinstance(model, dict):
        raise ConfigError(f"{cfg_path}: 'model' must name a manifest and weights, or an IR file")
    diagnostics: tuple = ()
    try:
        if "ir" in model:
            text = _need(_resolve(base, model["ir"]), "IR file").read_text()
            graph = parse_ir(text, check=False)
            diagnostics = tuple(validate(graph))
        else:
            manifest = _need(_resolve(base, model.get("manifest", "")), "model manifest")
            weights = _need(_resolve(base, model.get("weights", "")), "weight blob")
            graph = import_model(manifest, weights)
    except IRError as exc:
        raise ConfigError(f"model: {exc}") from None

    out = Path(args.out) if args.out else _resolve(base, raw.get("out", "out"))
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    run = RunConfig(cfg_path, graph, out, seed, args.workers, diagnostics=diagnostics)

    data = raw.get("dataset", {})
    try:
        if "eval" in data:
            run.eval_data = load_dataset(_need(_resolve(base, data["eval"]), "evaluation dataset"))
        if "profile" in data:
            run.profile_data = load_dataset(_need(_resolve(base, data["profile"]), "profiling dataset"))
    except (ValueError, KeyError, OSError) as exc:
        raise ConfigError(f"dataset: {exc}") from None

    if "budget" in raw:
        try:
            b = raw["budget"]
            run.budget = ResourceBudget(float(b["area_budget"]), float(b.get("onchip_bits", math.inf)),
                                        float(b.get("offchip_bandwidth", math.inf)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"budget: {exc}") from None

    table_path = args.cost_table or (raw.get("cost_table") and str(_resolve(base, raw["cost_table"])))
    if table_path:
        try:
            run.table = CostTable.load(_need(Path(table_path), "cost table"))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"cost table {table_path}: {exc}") from None

    if "quant_config" in raw:
        run.quant_path = _need(_resolve(base, raw["quant_config"]), "quantization config")
    elif args.command in ("quantize", "evaluate", "emit") and (out / BEST_CONFIG).is_file():
        run.quant_path = out / BEST_CONFIG
    if run.quant_path is not None:
        try:
            run.quant = QuantConfig.from_json(run.quant_path.read_text())
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"quantization config {run.quant_path}: {exc}") from None

    s = dict(raw.get("search", {}))
    run.calibrate = bool(s.pop("calibrate", True))
    try:
        run.search = SearchConfig.from_dict(s)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"search: {exc}") from None
    if args.seed is not None:
        run.search = replace(run.search, seed=args.seed)

    # per-command requirements, checked before anything is written
    need = {
        "profile": [("dataset.profile or dataset.eval", run.profile_data or run.eval_data)],
        "quantize": [("quant_config", run.quant)],
        "search": [("dataset.eval", run.eval_data)],
        "evaluate": [("quant_config", run.quant), ("dataset.eval", run.eval_data)],
        "emit": [("quant_config", run.quant), ("budget", run.budget)],
    }.get(args.command, [])
    if args.command in ("search", "evaluate") and run.search.weights.mode == "hardware_aware":
        need.append(("budget", run.budget))
    for what, value in need:
        if value is None:
            raise ConfigError(f"{args.command} needs {what} in {cfg_path}")
    if run.quant is not None:
        unknown_values = sorted(set(run.quant.formats) - set(graph.values))
        if unknown_values:
            raise ConfigError(f"quantization config names values absent from the model: {unknown_values}")
    return run


# --- commands ----------------------------------------------------------------------------


def _write(run: RunConfig, name: str, text: str) -> Path:
    run.out.mkdir(parents=True, exist_ok=True)
    p = run.out / name
    p.write_text(text)
    return p


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def _weights(run: RunConfig):
    w = run.search.weights
    if run.calibrate and w.mode == "hardware_aware" and run.budget is not None and not (w.k1 or w.k2):
        cal = calibrate_weights(run.graph, run.table, run.budget, k=w.k)
        w = replace(w, k1=cal.k1, k2=cal.k2)
    return w


def _hardware(run: RunConfig, g: Graph) -> Graph:
    staged = insert_buffers(g)
    if run.quant is not None and run.quant.tile_steps:
        return apply_tile_steps(staged, run.quant.tile_steps, run.table, run.budget)
    return parallelize(staged, run.budget, run.table)


def cmd_import(run: RunConfig) -> str:
    p = _write(run, f"{run.graph.name}.mir", print_ir(run.graph))
    return f"imported {run.graph.name}: {len(run.graph.operations)} operations -> {p}"


def cmd_print(run: RunConfig) -> str:
    sys.stdout.write(print_ir(run.graph))
    return ""


def cmd_validate(run: RunConfig) -> str:
    if run.diagnostics:
        raise IRError("\n".join(str(d) for d in run.diagnostics))
    return f"{run.graph.name}: valid ({len(run.graph.operations)} operations, {len(run.graph.values)} values)"


def cmd_profile(run: RunConfig) -> str:
    data = run.profile_data or run.eval_data
    stats = profile(run.graph, data, workers=run.workers)
    rows = [(n, s.mean, s.variance, s.max_abs) for n, s in stats.values.items()]
    p = _write(run, "profile.csv", _csv(rows, ["value", "mean", "variance", "max_abs"]))
    return f"profiled {len(rows)} values over {len(data)} samples -> {p}"


def cmd_quantize(run: RunConfig) -> str:
    g = annotate(run.graph, run.quant)
    p = _write(run, "quantized.mir", print_ir(g))
    return f"quantized {len(run.quant.formats)} values -> {p}"


def cmd_search(run: RunConfig) -> str:
    stats = profile(run.graph, run.profile_data or run.eval_data, workers=run.workers)
    space = build_space(run.graph, stats, run.search.mode, run.search.include_hw)
    weights = _weights(run)
    budget = run.budget if weights.mode == "hardware_aware" else None
    ev = graph_evaluator(run.graph, space, budget, run.table, run.eval_data, weights, run.search.seed)
    res = search(space, ev, run.search.algo, run.search.n_trials, run.search.seed, workers=run.workers)
    _write(run, "trials.csv", trial_log_csv(space, res.log))
    if res.best is None:
        raise IRError("every trial failed; no configuration fits the budget")
    _write(run, BEST_CONFIG, res.best.config.to_json() + "\n")
    m = res.best.metrics
    return (f"{run.search.algo}: {len(res.log)} trials, best score {res.best.score!r} "
            f"(acc {m.acc!r}, b {m.b!r}) -> {run.out / 'trials.csv'}")


def cmd_evaluate(run: RunConfig) -> str:
    weights = _weights(run)
    budget = run.budget if weights.mode == "hardware_aware" else None
    m, score, failed, _ = evaluate_config(run.graph, run.quant, budget, run.table, run.eval_data, weights, run.workers)
    if failed:
        raise IRError("configuration does not fit the resource budget")
    p = _write(run, "metrics.csv", _csv([(m.acc, m.b, m.theta, m.area, score)], ["acc", "b", "theta", "area", "score"]))
    return f"score {score!r} (acc {m.acc!r}, b {m.b!r}, theta {m.theta!r}, area {m.area!r}) -> {p}"


def cmd_emit(run: RunConfig) -> str:
    hw = _hardware(run, annotate(run.graph, run.quant))
    hw_dir = run.out / "hw"
    emit(hw, TEMPLATES_DIR, hw_dir)
    report = check_netlist(hw, hw_dir)
    _write(run, "hw_check.txt", str(report) + "\n")
    if not report.ok:
        raise EmitError(f"structural check failed:\n{report}")
    return f"emitted {len(hw.operations)} operations -> {hw_dir} ({report})"


HANDLERS = {
    "import": cmd_import,
    "print": cmd_print,
    "validate": cmd_validate,
    "profile": cmd_profile,
    "quantize": cmd_quantize,
    "search": cmd_search,
    "evaluate": cmd_evaluate,
    "emit": cmd_emit,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser_(prog="mxflow", description="Mixed-precision MX quantization and dataflow accelerator flow.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--cost-table", default=None, help="cost-table JSON (overrides the config)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        run = load_run(args)
    except (UsageError, ConfigError) as exc:
        print(f"mxflow: error: {exc}", file=sys.stderr)
        return 1
    try:
        summary = HANDLERS[args.command](run)
    except (IRError, QuantizationError, ValueError) as exc:
        print(f"mxflow {args.command}: {exc}", file=sys.stderr)
        return 2
    if summary:
        print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
