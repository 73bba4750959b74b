"""Hardware-aware search on the toy MLP; reports the per-value mantissa widths it settles on."""

import argparse
import json
from pathlib import Path

from mxflow.emulation import eval_accuracy, load_dataset, profile
from mxflow.formats import format_str
from mxflow.hardware import CostTable, ResourceBudget
from mxflow.search import build_space, calibrate_weights, graph_evaluator, search
from mxflow.toy import toy_mlp

DATA = Path(__file__).resolve().parents[1] / "src" / "mxflow" / "data"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--area-budget", type=float, default=6500)
    ap.add_argument("--trials", type=int, default=64)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", type=Path, default=Path("runs/mixed_precision.json"))
    args = ap.parse_args()

    g, tbl = toy_mlp(), CostTable()
    evald = load_dataset(DATA / "toy_mlp_eval.json")
    budget = ResourceBudget(args.area_budget)
    weights = calibrate_weights(g, tbl, budget)
    space = build_space(g, profile(g, load_dataset(DATA / "toy_mlp_profile.json")))
    baseline = eval_accuracy(g, evald).accuracy
    print(f"Float32 accuracy {baseline:.4f}; weights k={weights.k} k1={weights.k1:.4g} k2={weights.k2:.4g}")

    report = {"baseline_acc": baseline, "area_budget": args.area_budget, "runs": []}
    for seed in range(args.seeds):
        best = search(space, graph_evaluator(g, space, budget, tbl, evald, weights, seed), "tpe", args.trials, seed).best
        m = best.metrics
        formats = {n: format_str(f) for n, f in best.config.formats.items()}
        report["runs"].append({"seed": seed, "score": best.score, "acc": m.acc, "b": m.b, "theta": m.theta,
                               "area": m.area, "formats": formats})
        print(f"seed {seed}: acc {m.acc:.4f} (drop {baseline - m.acc:+.4f}) b {m.b:.2f} "
              f"theta {m.theta:.4g} area {m.area:.0f}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(report, indent=2) + "\n")
    print(f"report -> {args.out}")


if __name__ == "__main__":
    main()
