import statistics

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mxflow.emulation import (
    Dataset,
    EmulationError,
    ValueStats,
    eval_accuracy,
    load_dataset,
    model_avg_bitwidth,
    profile,
    run_float,
    run_quantized,
    save_dataset,
)
from mxflow.formats import FLOAT32, MXInt, avg_bitwidth
from mxflow.ir.graph import Graph, QuantConfig, annotate
from mxflow.ir.importer import import_model
from mxflow.ir.text import parse_ir
from mxflow.numerics import fake_quantize
from mxflow.toy import mlp_eval_dataset, toy_mlp


def two_layer(rng, n_in=6, hidden=5, n_out=3):
    w1, b1 = rng.standard_normal((hidden, n_in)), rng.standard_normal(hidden)
    w2, b2 = rng.standard_normal((n_out, hidden)), rng.standard_normal(n_out)
    blob = np.concatenate([w1.ravel(), b1, w2.ravel(), b2]).astype("<f4")
    manifest = {
        "name": "mlp",
        "inputs": [{"name": "x", "shape": [n_in]}],
        "ops": [
            {"kind": "linear", "args": ["x"], "results": ["h"], "params": {
                "weight": {"shape": [hidden, n_in], "offset": 0}, "bias": {"shape": [hidden], "offset": hidden * n_in}}},
            {"kind": "relu", "args": ["h"], "results": ["r"]},
            {"kind": "linear", "args": ["r"], "results": ["y"], "params": {
                "weight": {"shape": [n_out, hidden], "offset": hidden * n_in + hidden},
                "bias": {"shape": [n_out], "offset": hidden * n_in + hidden + n_out * hidden}}},
        ],
        "outputs": ["y"],
    }
    g = import_model(manifest, blob.tobytes())
    f32 = [a.astype(np.float32).astype(np.float64) for a in (w1, b1, w2, b2)]
    return g, f32


def all_formats(g, fmt):
    return annotate(g, QuantConfig({n: fmt for n in g.value_names()}))


# --- reference semantics ---------------------------------------------------------------------


def test_identity_graph():
    g = parse_ir("g(x: Float32<3,4>):\n  y: Float32<3,4> = reorder(x)\n  return y")
    x = np.random.default_rng(0).standard_normal((3, 4))
    assert np.array_equal(run_float(g, x), x)


def test_identity_linear():
    n = 5
    blob = np.concatenate([np.eye(n).ravel(), np.zeros(n)]).astype("<f4").tobytes()
    g = import_model({
        "name": "lin", "inputs": [{"name": "x", "shape": [2, n]}],
        "ops": [{"kind": "linear", "args": ["x"], "results": ["y"],
                 "params": {"weight": {"shape": [n, n], "offset": 0}, "bias": {"shape": [n], "offset": n * n}}}],
        "outputs": ["y"]}, blob)
    x = np.random.default_rng(1).standard_normal((2, n))
    assert np.array_equal(run_float(g, x), x)


def test_two_layer_matches_matrix_algebra():
    rng = np.random.default_rng(2)
    g, (w1, b1, w2, b2) = two_layer(rng)
    x = rng.standard_normal((7, 6))
    want = np.maximum(x @ w1.T + b1, 0.0) @ w2.T + b2
    np.testing.assert_allclose(run_float(g, x), want, rtol=1e-12, atol=1e-12)


def test_batched_and_single_agree():
    rng = np.random.default_rng(3)
    g, _ = two_layer(rng)
    x = rng.standard_normal((4, 6))
    batched = run_float(g, x)
    for i in range(4):
        np.testing.assert_array_equal(run_float(g, x[i]), batched[i])


def test_shape_mismatch():
    g, _ = two_layer(np.random.default_rng(0))
    with pytest.raises(EmulationError, match="shape"):
        run_float(g, np.zeros((3, 5)))


def test_softmax_rows_sum_to_one():
    g = parse_ir("g(x: Float32<4,9>):\n  y: Float32<4,9> = softmax(x)\n  return y")
    x = np.random.default_rng(4).standard_normal((4, 9)) * 30
    assert np.all(np.abs(run_float(g, x).sum(axis=-1) - 1.0) <= 1e-12)


def test_rmsnorm_unit_mean_square():
    g = parse_ir("g(x: Float32<3,8>):\n  y: Float32<3,8> = rmsnorm(x) [gain: Float32<8>]\n  return y")
    g = Graph(g.name, g.inputs, g.outputs, g.operations, g.values, {"y.gain": np.ones(8)})
    x = np.random.default_rng(5).standard_normal((3, 8)) * 7
    y = run_float(g, x, eps=0.0)
    assert np.all(np.abs(np.mean(y * y, axis=-1) - 1.0) <= 1e-9)


# --- quantized execution ---------------------------------------------------------------------------


def test_float32_formats_bitwise_equal():
    g = toy_mlp()
    x = mlp_eval_dataset(64).inputs
    assert np.array_equal(run_quantized(all_formats(g, FLOAT32), x), run_float(g, x))


def test_single_linear_composes_quantizers():
    rng = np.random.default_rng(6)
    fmt = MXInt((16, 2), 8, 7)
    w, b = rng.standard_normal((4, 8)), rng.standard_normal(4)
    g = parse_ir("g(x: Float32<3,8>):\n  y: Float32<3,4> = linear(x) [weight: Float32<4,8>, bias: Float32<4>]\n"
                 "  return y")
    g = all_formats(Graph(g.name, g.inputs, g.outputs, g.operations, g.values, {"y.weight": w, "y.bias": b}), fmt)
    x = rng.standard_normal((3, 8))
    want = fake_quantize(fake_quantize(x, fmt) @ fake_quantize(w, fmt).T + fake_quantize(b, fmt), fmt)
    np.testing.assert_array_equal(run_quantized(g, x), want)


def test_high_precision_gap_small():
    rng = np.random.default_rng(7)
    g, _ = two_layer(rng, 16, 32, 4)
    x = rng.standard_normal((100, 16))
    ref = run_float(g, x)
    q = run_quantized(all_formats(g, MXInt((16, 2), 8, 20)), x)
    assert np.max(np.abs(q - ref)) <= 1e-3 * np.max(np.abs(ref))


def test_fidelity_improves_with_mantissa():
    rng = np.random.default_rng(8)
    g, _ = two_layer(rng, 16, 32, 4)
    x = rng.standard_normal((64, 16))
    ref = run_float(g, x)
    errors = [np.mean(np.abs(run_quantized(all_formats(g, MXInt((16, 2), 8, m)), x) - ref)) for m in range(2, 21, 2)]
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))


# --- profiling ------------------------------------------------------------------------------------------


def test_constant_dataset_input_variance_zero():
    g = toy_mlp()
    d = Dataset(np.full((10, 8, 8), 0.7), np.zeros(10, dtype=int), "calibration")
    stats = profile(g, d)
    assert stats.values["x"].variance == 0.0
    assert set(stats.values) == set(g.activation_names())


def test_two_point_variance():
    g = parse_ir("g(x: Float32<1,2>):\n  y: Float32<1,2> = relu(x)\n  return y")
    d = Dataset(np.array([[[1.0, 3.0]], [[2.0, 6.0]]]), np.zeros(2, dtype=int), "calibration")
    s = profile(g, d).values["x"]
    # within-sample variances (d/2)^2 are 1 and 4
    assert s.variance == 2.5
    assert s.mean == 3.0
    assert s.max_abs == 6.0


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 6)),
                  elements=st.floats(-1e3, 1e3, allow_nan=False)), st.integers(1, 7))
def test_profile_matches_two_pass(x, chunk):
    n, k = x.shape
    g = parse_ir(f"g(x: Float32<{k}>):\n  y: Float32<{k}> = relu(x)\n  return y")
    s = profile(g, Dataset(x, np.zeros(n, dtype=int), "calibration"), chunk=chunk).values["x"]
    want = statistics.fmean(statistics.pvariance(row) for row in x.tolist())
    assert s.variance == pytest.approx(want, rel=1e-10, abs=1e-9)
    assert s.max_abs == np.abs(x).max()


def test_merge_is_associative():
    rng = np.random.default_rng(9)
    parts = [ValueStats.of(rng.standard_normal((n, 5)) * (i + 1), batch_dims=1) for i, n in enumerate((3, 8, 1))]
    left = parts[0].merge(parts[1]).merge(parts[2])
    right = parts[0].merge(parts[1].merge(parts[2]))
    for f in ("mean", "variance", "mean_square"):
        assert getattr(left, f) == pytest.approx(getattr(right, f), rel=1e-12)
    assert left.count == 12


def test_profile_workers_agree():
    g = toy_mlp()
    d = Dataset(mlp_eval_dataset(200).inputs, np.zeros(200, dtype=int), "calibration")
    a, b = profile(g, d, chunk=32), profile(g, d, chunk=32, workers=4)
    assert a == b


def test_empty_dataset():
    with pytest.raises(ValueError):
        profile(toy_mlp(), Dataset(np.zeros((0, 8, 8)), np.zeros(0, dtype=int), "calibration"))


def test_stats_written_to_graph():
    g = toy_mlp()
    stats = profile(g, Dataset(mlp_eval_dataset(32).inputs, np.zeros(32, dtype=int), "calibration"))
    out = stats.apply(g)
    assert out.values["x1"].variance == stats.values["x1"].variance


# --- accuracy --------------------------------------------------------------------------------------------


def test_trained_toy_is_accurate():
    assert eval_accuracy(toy_mlp(), mlp_eval_dataset()).accuracy > 0.95


def test_random_weights_near_chance():
    rng = np.random.default_rng(10)
    g, _ = two_layer(rng, 64, 16, 2)
    x = rng.standard_normal((200, 64))
    labels = np.arange(200) % 2
    acc = eval_accuracy(g, Dataset(x, labels)).accuracy
    assert 0.35 <= acc <= 0.65


def test_quantized_float_formats_same_metrics():
    g, d = toy_mlp(), mlp_eval_dataset(128)
    a = eval_accuracy(g, d, "float")
    b = eval_accuracy(all_formats(g, FLOAT32), d, "quantized")
    assert a.accuracy == b.accuracy and a.avg_bitwidth_model == b.avg_bitwidth_model == 32.0


def test_label_out_of_range():
    d = Dataset(np.zeros((2, 8, 8)), np.array([0, 5]))
    with pytest.raises(ValueError, match="labels"):
        eval_accuracy(toy_mlp(), d)


def test_model_bitwidth_is_size_weighted():
    g = toy_mlp()
    fmts = {n: MXInt((16, 2), 8, 3 if "weight" in n else 7) for n in g.value_names()}
    out = annotate(g, QuantConfig(fmts))
    sizes = {n: g.values[n].numel for n in g.value_names()}
    want = sum(sizes[n] * avg_bitwidth(fmts[n]) for n in sizes) / sum(sizes.values())
    assert model_avg_bitwidth(out) == float(want)


def test_dataset_file_round_trip(tmp_path):
    d = mlp_eval_dataset(16)
    back = load_dataset(save_dataset(d, tmp_path / "eval.json"))
    assert np.array_equal(back.inputs, d.inputs.astype(np.float32)) and np.array_equal(back.labels, d.labels)
    assert back.split == "evaluation"
