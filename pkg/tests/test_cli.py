import csv
import json
from pathlib import Path

import pytest

from mxflow.cli import main

DATA = Path(__import__("mxflow").__file__).parent / "data"


def write_config(tmp_path, n_trials=6, **overrides):
    cfg = {
        "model": {"manifest": str(DATA / "toy_mlp.json"), "weights": str(DATA / "toy_mlp.bin")},
        "dataset": {"eval": str(DATA / "toy_mlp_eval.json"), "profile": str(DATA / "toy_mlp_profile.json")},
        "budget": {"area_budget": 6500},
        "cost_table": str(DATA / "default_cost_table.json"),
        "search": {"algo": "tpe", "n_trials": n_trials, "seed": 0, "objective": "hardware_aware",
                   "weights": {"k": 4.0}},
        "out": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    p = tmp_path / "run.json"
    p.write_text(json.dumps(cfg))
    return p


def run(*argv):
    return main([str(a) for a in argv])


def tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(Path(d).rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def searched(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp)
    assert run("search", "--config", cfg) == 0
    return cfg, tmp / "out"


def test_import_writes_ir(tmp_path):
    cfg = write_config(tmp_path)
    assert run("import", "--config", cfg) == 0
    assert (tmp_path / "out" / "toy_mlp.mir").read_text().startswith("toy_mlp(")


def test_print_writes_nothing(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run("print", "--config", cfg) == 0
    assert "linear" in capsys.readouterr().out
    assert not (tmp_path / "out").exists()


def test_validate(tmp_path, capsys):
    assert run("validate", "--config", write_config(tmp_path)) == 0
    assert "valid" in capsys.readouterr().out


def test_validate_reports_bad_ir(tmp_path, capsys):
    ir = tmp_path / "bad.mir"
    ir.write_text("g(a: Float32<2,3>):\n  y: Float32<2,3> = add(a)\n  return y\n")
    cfg = write_config(tmp_path, model={"ir": str(ir)})
    assert run("validate", "--config", cfg) == 2
    assert "arity" in capsys.readouterr().err


def test_profile_csv(tmp_path):
    assert run("profile", "--config", write_config(tmp_path)) == 0
    rows = list(csv.reader((tmp_path / "out" / "profile.csv").open()))
    assert rows[0] == ["value", "mean", "variance", "max_abs"]
    assert [r[0] for r in rows[1:]][0] == "x"


def test_search_artifacts(searched):
    _, out = searched
    rows = list(csv.reader((out / "trials.csv").open()))
    assert len(rows) == 7
    assert json.loads((out / "best_config.json").read_text())["formats"]


def test_evaluate_reproduces_best_score(searched, tmp_path):
    cfg, out = searched
    best = max((r for r in csv.DictReader((out / "trials.csv").open()) if r["failed"] == "0"),
               key=lambda r: float(r["score"]))
    assert run("evaluate", "--config", cfg) == 0
    m = next(csv.DictReader((out / "metrics.csv").open()))
    assert float(m["score"]) == float(best["score"])


def test_quantize_and_emit(searched):
    cfg, out = searched
    assert run("quantize", "--config", cfg) == 0
    assert "MXInt" in (out / "quantized.mir").read_text()
    assert run("emit", "--config", cfg) == 0
    assert (out / "hw_check.txt").read_text() == "netlist clean\n"
    assert (out / "hw" / "top.sv").is_file()


def test_missing_input_fails_before_writing(tmp_path, capsys):
    cfg = write_config(tmp_path, dataset={"eval": str(tmp_path / "nope.json")})
    assert run("search", "--config", cfg) == 1
    assert "nope.json" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_unknown_command(tmp_path):
    assert run("train", "--config", write_config(tmp_path)) == 1


def test_missing_config(tmp_path):
    assert run("validate", "--config", tmp_path / "absent.json") == 1


def test_emit_without_quant_config(tmp_path, capsys):
    assert run("emit", "--config", write_config(tmp_path)) == 1
    assert "quant_config" in capsys.readouterr().err


def test_infeasible_budget_exits_two(tmp_path):
    cfg = write_config(tmp_path, budget={"area_budget": 10})
    assert run("search", "--config", cfg) == 2


def test_seed_flag_overrides(tmp_path):
    cfg = write_config(tmp_path, n_trials=4)
    assert run("search", "--config", cfg, "--seed", 3, "--out", tmp_path / "a") == 0
    assert run("search", "--config", cfg, "--seed", 3, "--out", tmp_path / "b") == 0
    assert run("search", "--config", cfg, "--seed", 4, "--out", tmp_path / "c") == 0
    a, b, c = ((tmp_path / d / "trials.csv").read_bytes() for d in "abc")
    assert a == b != c


def test_pipeline_reproducible(tmp_path):
    outs = []
    for name in ("r1", "r2"):
        cfg = write_config(tmp_path, n_trials=8, out=str(tmp_path / name))
        for cmd in ("search", "emit"):
            assert run(cmd, "--config", cfg) == 0
        outs.append(tree(tmp_path / name))
    assert outs[0] == outs[1]
