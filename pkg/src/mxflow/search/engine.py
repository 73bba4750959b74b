"""Objective, trial evaluation and the search loop."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

from ..emulation import Dataset, eval_accuracy, model_avg_bitwidth
from ..formats import FLOAT32
from ..hardware import (
    CostTable,
    InfeasibleBudget,
    ResourceBudget,
    allocate_memory,
    apply_tile_steps,
    estimate_graph,
    insert_buffers,
    parallelize,
)
from ..ir.graph import Graph, QuantConfig, annotate
from .samplers import NSGAConfig, TPEConfig, make_sampler, pareto_front
from .space import SearchSpace

HARDWARE_AWARE = "hardware_aware"
SOFTWARE_ONLY = "software_only"


@dataclass(frozen=True)
class ObjectiveWeights:
    k: float = 4.0
    k1: float = 0.0  # throughput weight
    k2: float = 0.0  # inverse-area weight
    mode: str = HARDWARE_AWARE

    def __post_init__(self) -> None:
        if self.mode not in (HARDWARE_AWARE, SOFTWARE_ONLY):
            raise ValueError(f"unknown objective mode {self.mode!r}")
        if min(self.k, self.k1, self.k2) < 0:
            raise ValueError("objective weights must be nonnegative")
        if self.mode == SOFTWARE_ONLY:
            object.__setattr__(self, "k1", 0.0)
            object.__setattr__(self, "k2", 0.0)


@dataclass(frozen=True)
class Metrics:
    acc: float
    b: float
    theta: float = math.nan
    area: float = math.nan


def objective(m: Metrics, w: ObjectiveWeights) -> float:
    """acc + k/b + k1*theta + k2/area; zero-weighted terms are skipped."""
    if not m.b > 0:
        raise ValueError(f"average bitwidth must be positive, got {m.b}")
    score = m.acc + w.k / m.b
    if w.k1:
        score += w.k1 * m.theta
    if w.k2:
        if not m.area > 0:
            raise ValueError(f"area must be positive, got {m.area}")
        score += w.k2 / m.area
    return score


@dataclass(frozen=True)
class Trial:
    index: int
    seed: int
    choice: tuple[int, ...]
    config: QuantConfig
    metrics: Metrics
    score: float
    failed: bool = False

    @property
    def objectives(self) -> tuple[float, float, float, float]:
        """Maximisation vector (acc, -b, theta, -area); failed trials are worst everywhere."""
        if self.failed:
            return (-math.inf,) * 4
        m = self.metrics

        def z(v):
            return 0.0 if math.isnan(v) else v

        return (z(m.acc), -z(m.b), z(m.theta), -z(m.area))


def calibrate_weights(
    g: Graph, tbl: CostTable, budget: ResourceBudget, k: float = 4.0, share: float = 0.1
) -> ObjectiveWeights:
    """Scale k1 and k2 so each hardware term equals ``share`` at the Float32 baseline."""
    base = annotate(g, QuantConfig({n: FLOAT32 for n in g.value_names()}))
    hw = parallelize(insert_buffers(base), budget, tbl)
    est = estimate_graph(hw, tbl, allocate_memory(hw, budget), budget)
    return ObjectiveWeights(k=k, k1=share / est.throughput, k2=share * est.total_area)


def evaluate_config(
    g: Graph,
    cfg: QuantConfig,
    budget: Optional[ResourceBudget],
    tbl: CostTable,
    dataset: Dataset,
    weights: ObjectiveWeights,
    workers: int = 1,
) -> tuple[Metrics, float, bool, Optional[Graph]]:
    """Returns (metrics, score, failed, hardware graph)."""
    ga = annotate(g, cfg)
    b = model_avg_bitwidth(ga)
    theta = area = math.nan
    hw = None
    if budget is not None:
        try:
            staged = insert_buffers(ga)
            hw = apply_tile_steps(staged, cfg.tile_steps, tbl, budget) if cfg.tile_steps else parallelize(
                staged, budget, tbl
            )
        except InfeasibleBudget:
            return Metrics(math.nan, b), -math.inf, True, None
        est = estimate_graph(hw, tbl, allocate_memory(hw, budget), budget)
        theta, area = est.throughput, est.total_area
    elif weights.k1 or weights.k2:
        raise ValueError("hardware-aware weights need a resource budget")
    acc = eval_accuracy(ga, dataset, "quantized", workers).accuracy
    m = Metrics(acc, b, theta, area)
    return m, objective(m, weights), False, hw


def evaluate_trial(
    g: Graph,
    cfg: QuantConfig,
    budget: Optional[ResourceBudget],
    tbl: CostTable,
    dataset: Dataset,
    weights: ObjectiveWeights,
    index: int = 0,
    seed: int = 0,
    choice: tuple[int, ...] = (),
    workers: int = 1,
) -> Trial:
    m, score, failed, _ = evaluate_config(g, cfg, budget, tbl, dataset, weights, workers)
    return Trial(index, seed, choice, cfg, m, score, failed)


@dataclass(frozen=True)
class SearchResult:
    best: Optional[Trial]
    log: tuple[Trial, ...]

    def front(self) -> list[Trial]:
        ok = [t for t in self.log if not t.failed]
        return [ok[i] for i in pareto_front([t.objectives for t in ok])]


Evaluator = Callable[[tuple[int, ...], int], Trial]


def search(
    space: SearchSpace,
    evaluate: Evaluator,
    algo: str,
    n_trials: int,
    seed: int = 0,
    workers: int = 1,
    tpe: Optional[TPEConfig] = None,
    nsga: Optional[NSGAConfig] = None,
) -> SearchResult:
    """Run ``n_trials`` evaluations proposed by ``algo``; deterministic for a seed.

    ``evaluate(choice, index)`` must be pure. Batches from random, QMC and
    NSGA-II are evaluated on ``workers`` threads; the log stays in index order.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    kwargs = {}
    if algo == "tpe" and tpe is not None:
        kwargs["config"] = tpe
    if algo == "nsga2" and nsga is not None:
        kwargs["config"] = nsga
    sampler = make_sampler(algo, space.sizes, seed, n_trials, **kwargs)
    log: list[Trial] = []
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while len(log) < n_trials:
            batch = sampler.ask(n_trials - len(log))[: n_trials - len(log)]
            for c in batch:
                assert all(0 <= i < s for i, s in zip(c, space.sizes)) and len(c) == len(space.sizes)
            start = len(log)
            jobs = [(c, start + j) for j, c in enumerate(batch)]
            if pool is not None:
                trials = list(pool.map(lambda job: evaluate(*job), jobs))
            else:
                trials = [evaluate(*job) for job in jobs]
            log.extend(trials)
            sampler.tell([t.choice for t in trials], [t.score for t in trials], [t.objectives for t in trials])
    finally:
        if pool is not None:
            pool.shutdown()
    ok = [t for t in log if not t.failed]
    best = max(ok, key=lambda t: (t.score, -t.index)) if ok else None
    return SearchResult(best, tuple(log))


def graph_evaluator(
    g: Graph,
    space: SearchSpace,
    budget: Optional[ResourceBudget],
    tbl: CostTable,
    dataset: Dataset,
    weights: ObjectiveWeights,
    seed: int = 0,
    workers: int = 1,
) -> Evaluator:
    def evaluate(choice: tuple[int, ...], index: int) -> Trial:
        cfg = space.decode(choice)
        return evaluate_trial(g, cfg, budget, tbl, dataset, weights, index, seed, tuple(choice), workers)

    return evaluate


# --- files ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchConfig:
    algo: str = "tpe"
    n_trials: int = 64
    seed: int = 0
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    mode: str = "reduced"
    include_hw: bool = False

    @classmethod
    def from_dict(cls, data: Mapping) -> "SearchConfig":
        unknown = set(data) - {"algo", "n_trials", "seed", "weights", "mode", "include_hw", "objective"}
        if unknown:
            raise ValueError(f"unknown search config keys {sorted(unknown)}")
        w = data.get("weights", {})
        bad = set(w) - {"k", "k1", "k2"}
        if bad:
            raise ValueError(f"unknown objective weight keys {sorted(bad)}")
        weights = ObjectiveWeights(
            float(w.get("k", 4.0)), float(w.get("k1", 0.0)), float(w.get("k2", 0.0)),
            data.get("objective", HARDWARE_AWARE),
        )
        return cls(str(data.get("algo", "tpe")), int(data.get("n_trials", 64)), int(data.get("seed", 0)),
                   weights, str(data.get("mode", "reduced")), bool(data.get("include_hw", False)))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SearchConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _num(v: float) -> str:
    return repr(float(v))


def trial_log_csv(space: SearchSpace, log: Sequence[Trial]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "seed", "score", "acc", "b", "theta", "area", "failed"] + [d.name for d in space.dims])
    for t in log:
        m = t.metrics
        values = [space.dims[i].choices[c] for i, c in enumerate(t.choice)]
        w.writerow([t.index, t.seed, _num(t.score), _num(m.acc), _num(m.b), _num(m.theta), _num(m.area),
                    int(t.failed)] + values)
    return buf.getvalue()


def best_score_curve(log: Sequence[Trial]) -> list[float]:
    """Running best score after each trial (failed trials never improve it)."""
    out, best = [], -math.inf
    for t in log:
        if not t.failed:
            best = max(best, t.score)
        out.append(best)
    return out

