"""Audit the chain of inequalities on random admissible competitors.

    python3 scripts/inequality_audit.py --samples 1000 --out runs/audit
"""
import argparse
from pathlib import Path

from ablab import audit
from ablab.srmodel import AlphaSpec, ModelParams


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--a", type=int, default=5)
    ap.add_argument("--b", type=int, default=10)
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("runs/audit"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    p = ModelParams(args.a, args.b, AlphaSpec.constant(1.0))
    eps = audit.epsilon_theorem1(args.b)
    rep = audit.run_audit(args.samples, eps, p, seed=args.seed, threads=args.threads)
    audit.write_rows_csv(rep.rows, args.out / "samples.csv")
    (args.out / "report.json").write_text(audit.report_json(rep))
    for name, rec in rep.records.items():
        print(f"{name:28s} applicable={rec.applicable:5d} violations={rec.violations}")
    print(f"verdict: {rep.verdict}")


if __name__ == "__main__":
    main()
