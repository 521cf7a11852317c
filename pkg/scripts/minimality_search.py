"""Multistart search for a horizontal curve shorter than gamma between gamma's endpoints.

    python3 scripts/minimality_search.py --a 20 --b 10 --out runs/search
"""
import argparse
import json
from pathlib import Path

from ablab import search
from ablab.audit import epsilon_theorem1
from ablab.srmodel import AlphaSpec, ModelParams


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--a", type=int, default=20)
    ap.add_argument("--b", type=int, default=10)
    ap.add_argument("--eps", type=float, default=None)
    ap.add_argument("--starts", type=int, default=50)
    ap.add_argument("--nodes", type=int, default=100)
    ap.add_argument("--half", action="store_true", help="search from gamma(0) instead of gamma(-eps)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("runs/search"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    eps = args.eps if args.eps is not None else epsilon_theorem1(args.b)
    pr = search.SearchProblem(ModelParams(args.a, args.b, AlphaSpec.constant(1.0)), eps,
                              symmetric=not args.half, nodes=args.nodes)
    res = search.multistart(pr, args.starts, seed=args.seed, threads=args.threads)
    (args.out / "result.json").write_text(json.dumps(res.to_dict(), indent=2, sort_keys=True))
    if res.best_path is not None:
        search.write_certificate(res, args.out / "best_control.csv")
    print(f"verdict={res.verdict} best_length={res.best_length:.17g} gamma_length={pr.climb:.17g}")


if __name__ == "__main__":
    main()
