"""Best-score-so-far curves for every search algorithm on the toy MLP (software-only objective)."""

import argparse
import csv
import statistics
from pathlib import Path

from mxflow.emulation import load_dataset, profile
from mxflow.hardware import CostTable
from mxflow.search import ALGORITHMS, SOFTWARE_ONLY, ObjectiveWeights, best_score_curve, build_space, graph_evaluator, search
from mxflow.toy import toy_mlp

DATA = Path(__file__).resolve().parents[1] / "src" / "mxflow" / "data"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=64)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--k", type=float, default=4.0)
    ap.add_argument("--out", type=Path, default=Path("runs/algorithms.csv"))
    args = ap.parse_args()

    g = toy_mlp()
    evald = load_dataset(DATA / "toy_mlp_eval.json")
    space = build_space(g, profile(g, load_dataset(DATA / "toy_mlp_profile.json")))
    ev = graph_evaluator(g, space, None, CostTable(), evald, ObjectiveWeights(k=args.k, mode=SOFTWARE_ONLY))

    rows, finals = [], {}
    for algo in ALGORITHMS:
        for seed in range(args.seeds):
            curve = best_score_curve(search(space, ev, algo, args.trials, seed).log)
            rows += [(algo, seed, i + 1, repr(s)) for i, s in enumerate(curve)]
            finals.setdefault(algo, []).append(curve[-1])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["algo", "seed", "trial", "best_score"])
        w.writerows(rows)
    for algo, v in finals.items():
        print(f"{algo:>7}: median best {statistics.median(v):.4f} over {len(v)} seeds")
    print(f"curves -> {args.out}")


if __name__ == "__main__":
    main()
