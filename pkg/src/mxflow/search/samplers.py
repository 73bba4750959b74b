"""Proposal strategies over a product of categorical dimensions.

Every sampler follows an ask/tell protocol: ``ask()`` returns the next batch
of candidate-index tuples, ``tell()`` receives their scores and objective
vectors in the same order. Batches may be evaluated concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

Choice = tuple[int, ...]


class Sampler:
    def __init__(self, sizes: Sequence[int], seed: int, n_trials: int):
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError("search space is empty")
        self.sizes = list(sizes)
        self.seed = seed
        self.n_trials = n_trials
        self.rng = np.random.default_rng(seed)
        self.history: list[tuple[Choice, float, tuple[float, ...]]] = []

    def _uniform(self) -> Choice:
        return tuple(int(self.rng.integers(0, s)) for s in self.sizes)

    def ask(self, remaining: int) -> list[Choice]:
        raise NotImplementedError

    def tell(self, choices: Sequence[Choice], scores: Sequence[float], objectives: Sequence[Sequence[float]]) -> None:
        for c, s, o in zip(choices, scores, objectives):
            self.history.append((tuple(c), float(s), tuple(o)))


class RandomSampler(Sampler):
    def ask(self, remaining: int) -> list[Choice]:
        return [self._uniform() for _ in range(remaining)]


class QMCSampler(Sampler):
    """Scrambled Halton points, one prime base per dimension, binned to candidates."""

    def __init__(self, sizes, seed, n_trials):
        super().__init__(sizes, seed, n_trials)
        self.engine = qmc.Halton(d=len(self.sizes), scramble=True, seed=np.random.default_rng(seed))

    def ask(self, remaining: int) -> list[Choice]:
        u = self.engine.random(remaining)
        sizes = np.asarray(self.sizes)
        idx = np.minimum(np.floor(u * sizes).astype(int), sizes - 1)
        return [tuple(int(v) for v in row) for row in idx]


@dataclass(frozen=True)
class TPEConfig:
    gamma: float = 0.25
    n_startup: int = 10
    n_candidates: int = 24
    prior_weight: float = 1.0


def parzen_categorical(observed: Sequence[int], size: int, prior_weight: float) -> np.ndarray:
    """Category probabilities: observation counts plus a uniform prior pseudo-count."""
    p = np.full(size, prior_weight / size)
    for c in observed:
        p[c] += 1.0
    return p / p.sum()


class TPESampler(Sampler):
    """Tree-structured Parzen estimator with independent categorical densities."""

    def __init__(self, sizes, seed, n_trials, config: Optional[TPEConfig] = None):
        super().__init__(sizes, seed, n_trials)
        self.config = config or TPEConfig()

    def split(self) -> tuple[list[Choice], list[Choice]]:
        ranked = sorted(range(len(self.history)), key=lambda i: (-self.history[i][1], i))
        n_good = max(1, math.ceil(self.config.gamma * len(ranked)))
        good = [self.history[i][0] for i in ranked[:n_good]]
        bad = [self.history[i][0] for i in ranked[n_good:]]
        return good, bad

    def densities(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        good, bad = self.split()
        w = self.config.prior_weight
        lg = [parzen_categorical([c[d] for c in good], s, w) for d, s in enumerate(self.sizes)]
        gb = [parzen_categorical([c[d] for c in bad], s, w) for d, s in enumerate(self.sizes)]
        return lg, gb

    def ask(self, remaining: int) -> list[Choice]:
        if len(self.history) < self.config.n_startup:
            return [self._uniform()]
        lg, gb = self.densities()
        best, best_val = None, -math.inf
        for _ in range(self.config.n_candidates):
            cand = tuple(int(self.rng.choice(s, p=p)) for s, p in zip(self.sizes, lg))
            val = sum(math.log(l[c]) - math.log(g[c]) for l, g, c in zip(lg, gb, cand))
            if val > best_val:
                best, best_val = cand, val
        return [best]


# --- NSGA-II --------------------------------------------------------------------------


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """Maximisation: a is no worse everywhere and strictly better somewhere."""
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


def non_dominated_sort(objs: Sequence[Sequence[float]]) -> list[list[int]]:
    n = len(objs)
    dominated_by = [[] for _ in range(n)]
    count = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(objs[i], objs[j]):
                dominated_by[i].append(j)
                count[j] += 1
            elif dominates(objs[j], objs[i]):
                dominated_by[j].append(i)
                count[i] += 1
    fronts, current = [], [i for i in range(n) if count[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                count[j] -= 1
                if count[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
    return fronts


def crowding_distance(objs: Sequence[Sequence[float]], front: Sequence[int]) -> dict[int, float]:
    dist = {i: 0.0 for i in front}
    if len(front) <= 2:
        return {i: math.inf for i in front}
    for k in range(len(objs[front[0]])):
        order = sorted(front, key=lambda i: (objs[i][k], i))
        lo, hi = objs[order[0]][k], objs[order[-1]][k]
        dist[order[0]] = dist[order[-1]] = math.inf
        if hi == lo or not math.isfinite(hi - lo):
            continue
        for a, mid, b in zip(order, order[1:], order[2:]):
            dist[mid] += (objs[b][k] - objs[a][k]) / (hi - lo)
    return dist


def pareto_front(objs: Sequence[Sequence[float]]) -> list[int]:
    return non_dominated_sort(objs)[0] if objs else []


@dataclass(frozen=True)
class NSGAConfig:
    population: int = 16
    crossover_prob: float = 0.9
    mutation_prob: Optional[float] = None  # per dimension; default 1 / n_dims


class NSGA2Sampler(Sampler):
    """Generational NSGA-II over categorical genes."""

    def __init__(self, sizes, seed, n_trials, config: Optional[NSGAConfig] = None):
        super().__init__(sizes, seed, n_trials)
        self.config = config or NSGAConfig()
        self.pop_size = max(2, min(self.config.population, n_trials))
        self.parents: list[int] = []  # indices into history

    def _select(self) -> None:
        pool = self.parents + list(range(len(self.history) - self._last_batch, len(self.history)))
        objs = [self.history[i][2] for i in pool]
        chosen: list[int] = []
        self.rank, self.crowd = {}, {}
        for r, front in enumerate(non_dominated_sort(objs)):
            cd = crowding_distance(objs, front)
            for i in front:
                self.rank[pool[i]] = r
                self.crowd[pool[i]] = cd[i]
            if len(chosen) + len(front) <= self.pop_size:
                chosen += [pool[i] for i in front]
            else:
                rest = sorted(front, key=lambda i: (-cd[i], pool[i]))
                chosen += [pool[i] for i in rest[: self.pop_size - len(chosen)]]
                break
        self.parents = chosen

    def _tournament(self) -> int:
        a, b = (self.parents[int(i)] for i in self.rng.integers(0, len(self.parents), 2))
        ka = (self.rank[a], -self.crowd[a], a)
        kb = (self.rank[b], -self.crowd[b], b)
        return a if ka <= kb else b

    def ask(self, remaining: int) -> list[Choice]:
        n = min(self.pop_size, remaining)
        if not self.history:
            self._last_batch = n
            return [self._uniform() for _ in range(n)]
        self._select()
        pm = self.config.mutation_prob or 1.0 / len(self.sizes)
        kids = []
        for _ in range(n):
            p1, p2 = self.history[self._tournament()][0], self.history[self._tournament()][0]
            if self.rng.random() < self.config.crossover_prob:
                mask = self.rng.random(len(self.sizes)) < 0.5
                child = [a if m else b for a, b, m in zip(p1, p2, mask)]
            else:
                child = list(p1)
            for d, s in enumerate(self.sizes):
                if self.rng.random() < pm:
                    child[d] = int(self.rng.integers(0, s))
            kids.append(tuple(int(c) for c in child))
        self._last_batch = n
        return kids


ALGORITHMS = {
    "random": RandomSampler,
    "qmc": QMCSampler,
    "tpe": TPESampler,
    "nsga2": NSGA2Sampler,
}


def make_sampler(algo: str, sizes: Sequence[int], seed: int, n_trials: int, **kwargs) -> Sampler:
    try:
        cls = ALGORITHMS[algo]
    except KeyError:
        raise ValueError(f"unknown search algorithm {algo!r}; choose from {sorted(ALGORITHMS)}") from None
    return cls(sizes, seed, n_trials, **kwargs)
