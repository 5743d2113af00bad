"""Median CRB versus SINR threshold for each layer count.

    python3 scripts/layer_sweep.py [--config configs/default.ini] [--seeds 20] [--out results/sweep.csv]

Writes the per-cell CSV, the per-L series next to it and prints the dB gaps
between layer counts at every threshold.
"""
import argparse
import math
from dataclasses import replace
from pathlib import Path

from simisac import cli, harness
from simisac.channels import linear_to_db


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(cli.DEFAULT_CONFIG))
    ap.add_argument("--seeds")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/sweep.csv")
    args = ap.parse_args()

    cfg = harness.load_config(args.config)
    if args.seeds:
        cfg = replace(cfg, seeds=harness.parse_seeds(args.seeds))
    table = harness.run_sweep(cfg, workers=args.workers)
    out = harness.emit_csv(table, args.out)
    harness.emit_series(harness.plot_series(table), Path(out).with_name(Path(out).stem + "_series.csv"))

    med = table.medians()
    print(f"{'gamma_db':>8} " + " ".join(f"{'L=' + str(l):>10}" for l in cfg.layers) + "   gaps (dB)")
    for g in cfg.gammas_db:
        vals = [linear_to_db(med[(l, g)]) if med.get((l, g), 0) > 0 else math.nan for l in cfg.layers]
        gaps = [a - b for a, b in zip(vals, vals[1:])]
        print(f"{g:8g} " + " ".join(f"{v:10.2f}" for v in vals) + "   " + " ".join(f"{d:+.2f}" for d in gaps))
    print(f"{len(table.rows)} cells, {len(table.failures)} failed, CSV at {out}")


if __name__ == "__main__":
    main()
