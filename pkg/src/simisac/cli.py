"""Command line entry point: ``simisac run | eval | validate | plot-data``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .channels import Scenario, build_channels, db_to_linear, linear_to_db
from .mao import MaoParams, mao_optimize
from .propagation import SimGeometry

DEFAULT_CONFIG = Path(__file__).resolve().parents[2] / "configs" / "default.ini"


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    if getattr(args, "seeds", None):
        cfg = replace(cfg, seeds=harness.parse_seeds(args.seeds))
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.csv_path)
    total = len(harness.sweep_cells(cfg))
    done = [0]

    def progress(row):
        done[0] += 1
        logging.info("[%d/%d] seed=%d L=%d gamma=%g dB -> %s crb=%.4g", done[0], total, row.seed, row.layers,
                     row.gamma_db, row.status, row.crb)

    table = harness.run_sweep(cfg, workers=args.workers, timing=args.timing, progress=progress)
    harness.emit_csv(table, out)
    for (layers, gamma), crb in table.medians().items():
        print(f"L={layers} gamma={gamma:g} dB median CRB={linear_to_db(crb) if crb > 0 else -math.inf:.3f} dB")
    if table.failures:
        print(f"{len(table.failures)} of {len(table.rows)} cells failed", file=sys.stderr)
        return 1
    print(f"wrote {len(table.rows)} rows to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    seed = int(args.seed)
    scenario = cfg.scenario.with_thresholds(db_to_linear(args.gamma_db))
    geom = cfg.geometry(args.layers)
    channels = build_channels(scenario, geom, seed)
    res = mao_optimize(scenario, geom, channels, replace(cfg.mao, seed=seed))
    report = {
        "seed": seed, "L": args.layers, "gamma_db": args.gamma_db, "termination": res.termination,
        "crb": res.crb, "crb_db": linear_to_db(res.crb) if math.isfinite(res.crb) else None,
        "best_crb_trace": res.best_crb,
        "sweeps": [{"sweep": r.sweep, "crb": r.crb, "min_sinr_margin": r.min_sinr_margin, "power": r.power,
                    "accepted_layers": list(r.accepted_layers)} for r in res.trace],
    }
    if res.stack is not None:
        report["phases"] = res.stack.angles.tolist()
        report["sinr"] = res.evaluation.sinrs.tolist()
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0 if res.stack is not None else 1


def run_validation(seeds: int = 10, points: int = 16, log=print) -> dict:
    """Oracle suite: diffraction cross-check, KKT certificates, brute-force equivalence."""
    from . import oracles
    from .conic import solve_conic
    from .propagation import PhaseStack
    from .subproblems import assemble_phase_sdr, layer_context, solve_beamforming

    report = {}
    dev = max(oracles.recompute_diffraction(SimGeometry.default(l, n)) for l in (2, 3, 4) for n in (1, 2, 4, 9))
    report["diffraction_max_deviation"] = dev
    hand = oracles.rs_coefficient(1.0, 1.0, 1.0, 0.25)
    report["hand_value"] = [hand.real, hand.imag]
    log(f"diffraction: max deviation {dev:.3e}")

    worst = 0.0
    scenario = Scenario()
    for layers in (1, 2, 3):
        geom = SimGeometry.default(layers)
        channels = build_channels(scenario, geom, 0)
        stack = PhaseStack.random(layers, geom.atoms_per_layer, np.random.default_rng(layers))
        ctx = layer_context(stack, channels, layers)
        bf, sol, sdp, _ = solve_beamforming(ctx, scenario)
        worst = max(worst, _kkt_worst(oracles.kkt_check(sdp.problem, sol)))
        _, sdr = assemble_phase_sdr(ctx, bf, scenario)
        sdr_sol = solve_conic(sdr)
        worst = max(worst, _kkt_worst(oracles.kkt_check(sdr, sdr_sol)))
    report["kkt_worst_residual"] = worst
    log(f"kkt: worst residual {worst:.3e}")

    small = Scenario(cu_positions=((0.0, 10.0, 0.0),), bs_antennas=2, sinr_thresholds=(db_to_linear(10.0),))
    geom = SimGeometry.default(1, 2)
    ratios = []
    for seed in range(seeds):
        channels = build_channels(small, geom, seed)
        bf = oracles.brute_force_joint(small, geom, channels, oracles.GridSpec(points))
        res = mao_optimize(small, geom, channels, MaoParams(seed=seed))
        ratios.append(res.crb / bf.best_crb if bf.found else math.nan)
        log(f"brute force seed {seed}: MAO/oracle = {ratios[-1]:.6f}")
    report["brute_force_ratios"] = ratios
    report["passed"] = bool(dev <= 1e-12 and worst <= 1e-6 and all(r <= 1.10 for r in ratios))
    return report


def _kkt_worst(rep) -> float:
    return max(rep.primal, rep.dual, rep.complementarity)


def cmd_validate(args) -> int:
    t0 = time.perf_counter()
    report = run_validation(seeds=int(args.seeds or 10), points=args.points)
    report["elapsed_s"] = time.perf_counter() - t0
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0 if report["passed"] else 1


def cmd_plot_data(args) -> int:
    table = harness.read_csv(args.results)
    series = harness.plot_series(table)
    if args.out:
        harness.emit_series(series, args.out)
    for layers, pts in series.items():
        print(f"L={layers}: " + ", ".join(f"({g:g}, {c:.3f})" for g, c in pts))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simisac", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="sweep seeds x layers x SINR thresholds, write CSV")
    run.add_argument("--config", default=str(DEFAULT_CONFIG) if DEFAULT_CONFIG.exists() else None)
    run.add_argument("--seeds", help="count (N -> 0..N-1), list 'a,b,c' or range 'a-b'")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", help="CSV path (default from config)")
    run.add_argument("--timing", action="store_true", help="fill wall_ms (makes output non-reproducible)")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="single MAO run, JSON report")
    ev.add_argument("--config", default=str(DEFAULT_CONFIG) if DEFAULT_CONFIG.exists() else None)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--layers", type=int, default=2)
    ev.add_argument("--gamma-db", type=float, default=10.0)
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval, seeds=None)

    va = sub.add_parser("validate", help="run the oracle suite")
    va.add_argument("--seeds", help="number of brute-force seeds (default 10)")
    va.add_argument("--points", type=int, default=16, help="phase grid points per element")
    va.add_argument("--out", help="JSON report path")
    va.set_defaults(func=cmd_validate)

    pd = sub.add_parser("plot-data", help="per-L median CRB versus gamma from a results CSV")
    pd.add_argument("results")
    pd.add_argument("--out")
    pd.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
