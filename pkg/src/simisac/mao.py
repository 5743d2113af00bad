"""Multi-layer alternating optimisation with a safeguarded acceptance step."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channels import ChannelSet, Scenario
from .conic import INFEASIBLE, solve_conic
from .metrics import BeamformingSolution, CrbReport, crb_extended, sinr_all, total_power
from .propagation import PhaseStack, SimGeometry, end_to_end_matrix
from .subproblems import (RankDeficientError, assemble_phase_sdr, layer_context, randomize_phases,
                          solve_beamforming)

log = logging.getLogger(__name__)

SINR_RTOL = 1e-6
POWER_RTOL = 1e-8

CONVERGED = "converged"
SWEEP_CAP = "sweep_cap"
INFEASIBLE_INIT = "infeasible_init"

# spawn-key domains; channel streams use 0..2
_INIT_STREAM = 10
_RANDOMIZATION_STREAM = 11


class MaoError(RuntimeError):
    pass


@dataclass(frozen=True)
class MaoParams:
    max_sweeps: int = 10
    rel_tol: float = 1e-3
    randomization_count: int = 200
    init_retries: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_sweeps < 0:
            raise ValueError("max_sweeps must be >= 0")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.randomization_count < 0 or self.init_retries < 0:
            raise ValueError("counts must be non-negative")


@dataclass(frozen=True)
class Evaluation:
    crb: CrbReport
    sinrs: np.ndarray
    margins: np.ndarray  # SINR_k / Gamma_k - 1
    power: float
    feasible: bool

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins)) if self.margins.size else np.inf


def evaluate_configuration(stack: PhaseStack, channels: ChannelSet, solution: BeamformingSolution,
                           scenario: Scenario) -> Evaluation:
    P = end_to_end_matrix(stack, channels.omegas)
    crb = crb_extended(P, channels.G, solution.transmit_cov, scenario.radar_noise, scenario.symbols)
    sinrs = sinr_all(P, channels, solution, scenario.user_noise)
    power = total_power(solution)
    margins = sinrs / np.asarray(scenario.sinr_thresholds) - 1.0
    feasible = bool(np.all(margins >= -SINR_RTOL) and power <= scenario.p0 * (1 + POWER_RTOL))
    return Evaluation(crb, sinrs, margins, power, feasible)


@dataclass(frozen=True)
class SweepRecord:
    sweep: int
    crb: float
    min_sinr_margin: float
    power: float
    accepted_layers: tuple[int, ...] = ()


@dataclass
class MaoResult:
    stack: PhaseStack | None
    solution: BeamformingSolution | None
    evaluation: Evaluation | None
    termination: str
    trace: list[SweepRecord] = field(default_factory=list)
    best_crb: list[float] = field(default_factory=list)
    reason: str = ""

    @property
    def crb(self) -> float:
        return self.best_crb[-1] if self.best_crb else np.inf

    @property
    def sweeps(self) -> int:
        return max(len(self.trace) - 1, 0)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _record(sweep, ev: Evaluation, accepted=()):
    return SweepRecord(sweep, ev.crb.crb_value, ev.min_margin, ev.power, tuple(accepted))


def mao_optimize(scenario: Scenario, geom: SimGeometry, channels: ChannelSet, params: MaoParams = MaoParams(),
                 on_sweep: Callable[[SweepRecord], None] | None = None) -> MaoResult:
    """Alternate beamforming SDP and per-layer phase SDR, layers L down to 1 in every sweep.

    A layer update (new beamformers plus new phases) is kept only if the exact
    configuration stays feasible and its true CRB does not increase.
    """
    L, n = geom.layers, geom.atoms_per_layer
    init_rng = _stream(params.seed, _INIT_STREAM)

    current = None
    for attempt in range(params.init_retries + 1):
        stack = PhaseStack.random(L, n, init_rng)
        ctx = layer_context(stack, channels, L)
        try:
            bf, sol, _, _ = solve_beamforming(ctx, scenario)
        except RankDeficientError as exc:
            return MaoResult(None, None, None, INFEASIBLE_INIT, reason=str(exc), best_crb=[np.inf])
        if bf is not None:
            current = (stack, bf)
            break
        if sol.status != INFEASIBLE:
            raise MaoError(f"initialisation attempt {attempt}: beamforming solve failed ({sol.reason})")
        log.debug("initial phases infeasible (attempt %d), redrawing", attempt)
    if current is None:
        return MaoResult(None, None, None, INFEASIBLE_INIT, reason="beamforming SDP infeasible for every initial draw",
                         best_crb=[np.inf])

    stack, bf = current
    ev = evaluate_configuration(stack, channels, bf, scenario)
    result = MaoResult(stack, bf, ev, SWEEP_CAP, trace=[_record(0, ev)], best_crb=[ev.crb.crb_value])
    if on_sweep:
        on_sweep(result.trace[-1])

    for sweep in range(1, params.max_sweeps + 1):
        start_crb = result.best_crb[-1]
        accepted = []
        for layer in range(L, 0, -1):
            ctx = layer_context(stack, channels, layer)
            cand_bf, sol, _, _ = solve_beamforming(ctx, scenario)
            if cand_bf is None:
                if sol.status == INFEASIBLE:
                    log.debug("sweep %d layer %d: beamforming infeasible, layer skipped", sweep, layer)
                    continue
                raise MaoError(f"sweep {sweep} layer {layer}: beamforming solve failed ({sol.reason})")

            cand_stack = stack
            lift, sdr = assemble_phase_sdr(ctx, cand_bf, scenario)
            sdr_sol = solve_conic(sdr)
            if sdr_sol.optimal:
                rr = randomize_phases(sdr_sol.values["V"], ctx, cand_bf, scenario, params.randomization_count,
                                      _stream(params.seed, _RANDOMIZATION_STREAM, sweep, layer))
                cand_stack = stack.with_layer(layer, rr.angles)
            elif sdr_sol.status != INFEASIBLE:
                raise MaoError(f"sweep {sweep} layer {layer}: phase SDR failed ({sdr_sol.reason})")

            cand_ev = evaluate_configuration(cand_stack, channels, cand_bf, scenario)
            if cand_ev.feasible and cand_ev.crb.crb_value <= ev.crb.crb_value:
                stack, bf, ev = cand_stack, cand_bf, cand_ev
                accepted.append(layer)

        crb_now = ev.crb.crb_value
        if crb_now > result.best_crb[-1]:
            raise AssertionError("safeguard violated: best CRB increased")
        result.best_crb.append(crb_now)
        result.trace.append(_record(sweep, ev, accepted))
        result.stack, result.solution, result.evaluation = stack, bf, ev
        if on_sweep:
            on_sweep(result.trace[-1])
        improvement = (start_crb - crb_now) / start_crb if np.isfinite(start_crb) and start_crb > 0 else 0.0
        if improvement < params.rel_tol:
            result.termination = CONVERGED
            break
    return result
