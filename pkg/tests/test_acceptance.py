"""Acceptance suite: one PASS/FAIL line per criterion, printed in the terminal summary."""

import json
import math
import statistics
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings

from mutations import all_mutations, undetected
from mxflow.cli import main as cli_main
from mxflow.emitter import check_netlist, emit
from mxflow.emulation import eval_accuracy, load_dataset, profile, run_float, run_quantized
from mxflow.formats import FLOAT32, FixedPoint, MXInt, avg_bitwidth, memory_density
from mxflow.hardware import CostTable, ResourceBudget, apply_tile_steps, estimate_graph, insert_buffers, parallelize
from mxflow.ir.graph import QuantConfig, annotate
from mxflow.ir.text import parse_ir, print_ir
from mxflow.numerics import block_dot_exact, dequantize_tensor, element_scale_exponent, quantize_tensor
from mxflow.search import (
    SOFTWARE_ONLY,
    ObjectiveWeights,
    build_space,
    calibrate_weights,
    graph_evaluator,
    search,
)
from mxflow.toy import TOY_TEXT, toy_graph, toy_mlp, toy_transformer
from oracles import lane_throughput_oracle
from strategies import graphs, hw_graphs

DATA = Path(__import__("mxflow").__file__).parent / "data"
TBL = CostTable()


def all_mx(g, m):
    return annotate(g, QuantConfig({n: MXInt((16, 2), 8, m) for n in g.value_names()}))


def run_property(test):
    """Run a hypothesis-decorated callable; return (examples seen, first failure or None)."""
    seen = []
    try:
        test(seen)
    except Exception as exc:  # the failure is reported through the criterion line
        return len(seen), exc
    return len(seen), None


@pytest.fixture(scope="module")
def mlp_assets():
    g = toy_mlp()
    return g, load_dataset(DATA / "toy_mlp_eval.json"), load_dataset(DATA / "toy_mlp_profile.json")


# 1 -------------------------------------------------------------------------------------------


def test_criterion_1_bitwidth_arithmetic(criterion):
    t0 = time.perf_counter()
    p = avg_bitwidth(MXInt((16, 2), 8, 7))
    d_fixed = memory_density(FixedPoint(8, 4))
    d_mx = memory_density(MXInt((16, 2), 8, 7))
    elapsed = time.perf_counter() - t0
    ok = p == Fraction(33, 4) and d_fixed == 4 and abs(float(d_mx) - 3.879) <= 0.001 and elapsed < 1.0
    criterion(1, ok, f"p={float(p)} density fixed={float(d_fixed)} mx={float(d_mx):.4f} in {elapsed:.3f}s")
    assert ok


# 2 -------------------------------------------------------------------------------------------


def test_criterion_2_quantizer_properties(criterion):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    n_blocks, violations = 0, {"idempotence": 0, "sign": 0, "half_ulp": 0, "clamp": 0}
    for m in (1, 2, 3, 4, 7, 12):
        n = 20_000
        x = rng.standard_normal((n, 16, 2)) * np.exp2(rng.integers(-60, 60, (n, 1, 1)))
        x[: n // 100] = 0.0
        x[n // 100: n // 50] = np.round(x[n // 100: n // 50])  # some exactly representable entries
        spec = MXInt((16, 2), 8, m)
        q = quantize_tensor(x, spec, batch_dims=1)
        fq = dequantize_tensor(q)
        violations["idempotence"] += int(quantize_tensor(fq, spec, batch_dims=1) != q)
        violations["sign"] += int(np.count_nonzero(dequantize_tensor(quantize_tensor(-x, spec, batch_dims=1)) != -fq))
        s = q.layout.from_blocks(np.ldexp(np.ones_like(q.elems, dtype=float), element_scale_exponent(q)[:, None]))
        top = (2**m - 1) * s
        in_range = np.abs(x) <= top
        violations["half_ulp"] += int(np.count_nonzero(np.abs(fq - x)[in_range] > s[in_range] / 2))
        violations["clamp"] += int(np.count_nonzero(np.abs(fq) > top))
        n_blocks += q.layout.n_blocks
    elapsed = time.perf_counter() - t0
    ok = n_blocks >= 100_000 and not any(violations.values()) and elapsed < 30
    criterion(2, ok, f"{n_blocks} blocks, violations {violations}, {elapsed:.1f}s")
    assert ok


# 3 -------------------------------------------------------------------------------------------


def test_criterion_3_exact_dot(criterion):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    mismatches, pairs = 0, 10_000
    for _ in range(pairs):
        shape = (int(rng.integers(1, 48)), int(rng.integers(1, 6)))
        ma, mb = (int(v) for v in rng.integers(1, 21, 2))
        a = rng.standard_normal(shape) * 2.0 ** rng.integers(-30, 30)
        b = rng.standard_normal(shape) * 2.0 ** rng.integers(-30, 30)
        qa, qb = quantize_tensor(a, MXInt((16, 2), 8, ma)), quantize_tensor(b, MXInt((16, 2), 8, mb))
        # products of <= 21-bit significands are exact doubles, so fsum rounds the exact sum once
        want = math.fsum((dequantize_tensor(qa).ravel() * dequantize_tensor(qb).ravel()).tolist())
        mismatches += block_dot_exact(qa, qb) != want
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30
    criterion(3, ok, f"{pairs} pairs, {mismatches} mismatches (0 ulp), {elapsed:.1f}s")
    assert ok


# 4 -------------------------------------------------------------------------------------------


def test_criterion_4_ir_round_trip(criterion):
    t0 = time.perf_counter()

    @settings(max_examples=1000, database=None)
    @given(graphs())
    def round_trip(seen, g):
        text = print_ir(g)
        back = parse_ir(text)
        assert back == g and print_ir(back) == text and print_ir(g) == text
        seen.append(1)

    n, failure = run_property(round_trip)
    toy = toy_graph()
    toy_ok = parse_ir(print_ir(toy)) == toy and print_ir(toy) == TOY_TEXT == print_ir(parse_ir(TOY_TEXT))
    elapsed = time.perf_counter() - t0
    ok = failure is None and n >= 1000 and toy_ok and elapsed < 30
    criterion(4, ok, f"{n} random graphs + toy graph round trip ({'ok' if toy_ok else 'mismatch'}), "
                     f"{elapsed:.1f}s{'' if failure is None else f'; {failure!r}'}")
    assert ok


# 5 -------------------------------------------------------------------------------------------


def test_criterion_5_emulator_degeneracy(criterion, mlp_assets):
    g, d, _ = mlp_assets
    x = d.inputs[:100]
    ref = run_float(g, x)
    bitwise = np.array_equal(run_quantized(annotate(g, QuantConfig({n: FLOAT32 for n in g.value_names()})), x), ref)
    q20 = run_quantized(all_mx(g, 20), x)
    gap = float(np.max(np.abs(q20 - ref)) / np.max(np.abs(ref)))
    ok = bitwise and gap <= 1e-3
    criterion(5, ok, f"Float32 bitwise={bitwise}, m=20 relative gap {gap:.2e} (<= 1e-3)")
    assert ok


# 6 -------------------------------------------------------------------------------------------


def test_criterion_6_hardware_laws(criterion):
    stats = {"theta": 0, "budget": 0}

    @settings(max_examples=100, database=None)
    @given(hw_graphs(max_ops=8))
    def laws(seen, g):
        staged = insert_buffers(g)
        a0 = estimate_graph(apply_tile_steps(staged, {}, TBL), TBL).total_area
        for factor in (1.0, 3.0, 50.0):
            b = ResourceBudget(a0 * factor)
            hw = parallelize(staged, b, TBL)
            est = estimate_graph(hw, TBL)
            if est.throughput != min(lane_throughput_oracle(hw, op) for op in hw.operations):
                stats["theta"] += 1
            if est.total_area > b.area_budget:
                stats["budget"] += 1
        seen.append(1)

    n, failure = run_property(laws)
    g = all_mx(toy_transformer(), 4)
    staged = insert_buffers(g)
    a0 = estimate_graph(apply_tile_steps(staged, {}, TBL), TBL).total_area
    thetas = [estimate_graph(parallelize(staged, ResourceBudget(a0 * f), TBL), TBL).throughput
              for f in np.geomspace(1.0, 64.0, 10)]
    monotone = all(b >= a for a, b in zip(thetas, thetas[1:]))
    ok = failure is None and n >= 100 and not any(stats.values()) and monotone
    criterion(6, ok, f"{n} graphs, theta mismatches {stats['theta']}, budget overruns {stats['budget']}, "
                     f"sweep non-decreasing={monotone} ({thetas[0]:.3g} -> {thetas[-1]:.3g})"
                     f"{'' if failure is None else f'; {failure!r}'}")
    assert ok


# 7 -------------------------------------------------------------------------------------------


def test_criterion_7_search_quality(criterion, mlp_assets):
    g, d, prof = mlp_assets
    space = build_space(g, profile(g, prof))
    weights = ObjectiveWeights(k=4.0, mode=SOFTWARE_ONLY)
    ev = graph_evaluator(g, space, None, TBL, d, weights)
    t0 = time.perf_counter()
    timings = {}
    for algo in ("random", "qmc", "tpe", "nsga2"):
        t = time.perf_counter()
        res = search(space, ev, algo, 64, seed=0)
        assert len(res.log) == 64
        timings[algo] = time.perf_counter() - t
    best = {algo: [search(space, ev, algo, 64, seed=s).best.score for s in range(5)] for algo in ("tpe", "random")}
    med = {algo: statistics.median(v) for algo, v in best.items()}
    ok = med["tpe"] >= med["random"] and sum(timings.values()) < 300
    criterion(7, ok, f"median best TPE {med['tpe']:.4f} vs random {med['random']:.4f}; four algorithms x 64 "
                     f"trials in {sum(timings.values()):.1f}s (total {time.perf_counter() - t0:.1f}s)")
    assert ok


# 8 -------------------------------------------------------------------------------------------


def test_criterion_8_mixed_precision(criterion, mlp_assets):
    g, d, prof = mlp_assets
    t0 = time.perf_counter()
    budget = ResourceBudget(6500)
    weights = calibrate_weights(g, TBL, budget, k=4.0)
    space = build_space(g, profile(g, prof))
    baseline = eval_accuracy(g, d).accuracy
    outcomes = []
    for seed in range(5):
        res = search(space, graph_evaluator(g, space, budget, TBL, d, weights, seed), "tpe", 64, seed=seed)
        m = res.best.metrics
        outcomes.append((m.b <= 6 and baseline - m.acc <= 0.01, m.b, m.acc))
    elapsed = time.perf_counter() - t0
    wins = sum(o[0] for o in outcomes)
    ok = wins >= 4 and elapsed < 600
    detail = ", ".join(f"b={b:.2f} acc={a:.4f}" for _, b, a in outcomes)
    criterion(8, ok, f"{wins}/5 seeds with b<=6 and acc within 1pp of {baseline:.4f} [{detail}], {elapsed:.0f}s")
    assert ok


# 9 -------------------------------------------------------------------------------------------


def test_criterion_9_emitter_integrity(criterion, tmp_path_factory):
    stats = {"unclean": 0, "sampled": 0, "missed": []}
    rng = np.random.default_rng(9)

    @settings(max_examples=100, database=None)
    @given(hw_graphs(max_ops=8))
    def emit_and_check(seen, g):
        g = apply_tile_steps(insert_buffers(g), {}, TBL)
        d = tmp_path_factory.mktemp("hw")
        emit(g, out_dir=d)
        if not check_netlist(g, d).ok:
            stats["unclean"] += 1
        muts = list(all_mutations(d))
        pick = [muts[i] for i in rng.choice(len(muts), size=min(20, len(muts)), replace=False)]
        stats["missed"] += undetected(g, d, check_netlist, pick)
        stats["sampled"] += len(pick)
        seen.append(1)

    n, failure = run_property(emit_and_check)
    exhaustive = 0
    for g in (toy_graph(), all_mx(toy_mlp(), 5)):
        g = apply_tile_steps(insert_buffers(g), {}, TBL)
        d = tmp_path_factory.mktemp("hw_full")
        emit(g, out_dir=d)
        muts = list(all_mutations(d))
        exhaustive += len(muts)
        stats["missed"] += undetected(g, d, check_netlist, muts)
    ok = failure is None and n >= 100 and stats["unclean"] == 0 and not stats["missed"]
    criterion(9, ok, f"{n} random graphs clean={n - stats['unclean']}, mutations "
                     f"{stats['sampled']} sampled + {exhaustive} exhaustive, undetected {len(stats['missed'])}"
                     f"{'' if failure is None else f'; {failure!r}'}")
    assert ok


# 10 ------------------------------------------------------------------------------------------


def test_criterion_10_reproducibility(criterion, tmp_path):
    cfg = {
        "model": {"manifest": str(DATA / "toy_mlp.json"), "weights": str(DATA / "toy_mlp.bin")},
        "dataset": {"eval": str(DATA / "toy_mlp_eval.json"), "profile": str(DATA / "toy_mlp_profile.json")},
        "budget": {"area_budget": 6500},
        "cost_table": str(DATA / "default_cost_table.json"),
        "search": {"algo": "tpe", "n_trials": 32, "seed": 0, "objective": "hardware_aware", "weights": {"k": 4.0}},
    }
    trees = []
    for run in ("a", "b"):
        p = tmp_path / f"{run}.json"
        p.write_text(json.dumps(dict(cfg, out=str(tmp_path / run))))
        codes = [cli_main([cmd, "--config", str(p)]) for cmd in ("import", "profile", "search", "evaluate", "emit")]
        assert codes == [0] * 5
        root = tmp_path / run
        trees.append({f.relative_to(root).as_posix(): f.read_bytes() for f in sorted(root.rglob("*")) if f.is_file()})
    a, b = trees
    same_log = a["trials.csv"] == b["trials.csv"]
    same_hw = {k: v for k, v in a.items() if k.startswith("hw/")} == {k: v for k, v in b.items() if k.startswith("hw/")}
    ok = same_log and same_hw and a == b
    criterion(10, ok, f"trials.csv identical={same_log}, hw/ identical={same_hw} "
                      f"({sum(k.startswith('hw/') for k in a)} files), all {len(a)} artifacts identical={a == b}")
    assert ok
