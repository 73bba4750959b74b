"""Regenerate the bundled toy assets, template stubs and cost table."""

import argparse
from pathlib import Path

from mxflow.emitter import write_bundled_templates
from mxflow.hardware import CostTable
from mxflow.toy import write_assets

PKG = Path(__file__).resolve().parents[1] / "src" / "mxflow"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=PKG / "data")
    args = ap.parse_args()
    for p in write_assets(args.out):
        print(p)
    CostTable().save(args.out / "default_cost_table.json")
    write_bundled_templates(PKG / "templates")


if __name__ == "__main__":
    main()
