"""Scan rho for the cut-and-loop competitor at desk scale and confirm the best margin.

    python3 scripts/desk_scan.py --out runs/desk
"""
import argparse
import json
from pathlib import Path

import numpy as np

from ablab import competitor, curves
from ablab.srmodel import AlphaSpec, ModelParams


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--a", type=int, default=1)
    ap.add_argument("--b", type=int, default=10)
    ap.add_argument("--eps", type=float, default=0.9)
    ap.add_argument("--points", type=int, default=81)
    ap.add_argument("--h-rule", default="rho^3/4")
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    p = ModelParams(args.a, args.b, AlphaSpec.constant(1.0))
    res = competitor.scan(args.eps, np.logspace(-6, -2, args.points), args.h_rule, p)
    with open(args.out / "scan.csv", "w") as fh:
        fh.write("rho,h,delta,margin\n")
        for r in res["points"]:
            fh.write(f"{r.rho:.17g},{r.h:.17g},{r.delta:.17g},{r.margin:.17g}\n")
    best = res["best"]
    summary = {"best": best.to_dict(), "skipped": res["skipped"]}
    if best.margin > 0:
        o = competitor.margin_oracle(args.eps, best.rho, best.h, p, dps=competitor.oracle_dps_for(best.margin))
        summary["oracle_margin"] = o["margin"]
        plan = competitor.make_plan(args.eps, best.rho, best.h, p)
        curves.write_path_csv(competitor.build_competitor(plan, p), p, args.out / "best_path.csv")
    summary["regime_check"] = competitor.paper_regime_check(args.a, args.b, 0.125, None, args.eps, p)
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float))
    print(f"best rho={best.rho:.6g} margin={best.margin:.6e}")


if __name__ == "__main__":
    main()
