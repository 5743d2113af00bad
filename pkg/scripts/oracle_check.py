"""Run the oracle suite (diffraction cross-check, KKT audit, brute-force equivalence) and save a JSON report."""
import argparse
import json

from simisac.cli import run_validation

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--points", type=int, default=16)
    ap.add_argument("--out", default="results/validation.json")
    args = ap.parse_args()
    rep = run_validation(seeds=args.seeds, points=args.points)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(rep, fh, indent=2)
    print("passed" if rep["passed"] else "FAILED", "->", args.out)
