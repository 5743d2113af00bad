import dataclasses

import numpy as np
import pytest

from simisac.channels import Scenario, build_channels
from simisac.mao import (CONVERGED, INFEASIBLE_INIT, SWEEP_CAP, MaoParams, evaluate_configuration, mao_optimize)
from simisac.metrics import BeamformingSolution, crb_extended
from simisac.propagation import PhaseStack, SimGeometry, end_to_end_matrix
from simisac.subproblems import layer_context, solve_beamforming

from helpers import single_user


def run(layers, seed=0, scenario=None, **params):
    scenario = scenario or Scenario()
    geom = SimGeometry.default(layers)
    channels = build_channels(scenario, geom, seed)
    return mao_optimize(scenario, geom, channels, MaoParams(seed=seed, **params)), scenario, channels


def test_zero_sweeps_returns_initial_point():
    res, *_ = run(2, max_sweeps=0)
    assert res.termination == SWEEP_CAP
    assert len(res.trace) == 1 and res.sweeps == 0
    assert res.best_crb == [res.trace[0].crb]


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_run_is_monotone_feasible_and_deterministic(layers):
    res, scenario, channels = run(layers, seed=3)
    again, *_ = run(layers, seed=3)
    assert res.termination in (CONVERGED, SWEEP_CAP)
    assert all(b <= a for a, b in zip(res.best_crb, res.best_crb[1:]))
    ev = res.evaluation
    assert ev.feasible and ev.min_margin >= -1e-6 and ev.power <= scenario.p0 * (1 + 1e-8)
    assert res.best_crb == again.best_crb
    assert np.array_equal(res.stack.angles, again.stack.angles)
    assert [t.accepted_layers for t in res.trace] == [t.accepted_layers for t in again.trace]
    p = end_to_end_matrix(res.stack, channels.omegas)
    direct = crb_extended(p, channels.G, res.solution.transmit_cov, scenario.radar_noise, scenario.symbols)
    assert res.crb == direct.crb_value


def test_single_layer_sweep_visits_one_layer():
    res, *_ = run(1, seed=1)
    assert all(set(t.accepted_layers) <= {1} for t in res.trace)


def test_progress_callback_sees_every_sweep():
    seen = []
    scenario = Scenario()
    geom = SimGeometry.default(2)
    res = mao_optimize(scenario, geom, build_channels(scenario, geom, 0), MaoParams(), on_sweep=seen.append)
    assert seen == res.trace


def test_infeasible_thresholds_report_init_failure():
    res, *_ = run(1, scenario=Scenario().with_thresholds(1e30), init_retries=2)
    assert res.termination == INFEASIBLE_INIT and res.stack is None and res.crb == np.inf


def test_fewer_antennas_than_atoms_is_structural():
    scenario = Scenario(bs_antennas=3)
    res, *_ = run(1, scenario=scenario)
    assert res.termination == INFEASIBLE_INIT and "rank" in res.reason


def test_param_validation():
    with pytest.raises(ValueError):
        MaoParams(max_sweeps=-1)
    with pytest.raises(ValueError):
        MaoParams(rel_tol=0.0)


def _fixed_solution(layers=2):
    scenario = Scenario()
    geom = SimGeometry.default(layers)
    channels = build_channels(scenario, geom, 0)
    stack = PhaseStack.random(layers, 4, np.random.default_rng(0))
    bf, sol, sdp, _ = solve_beamforming(layer_context(stack, channels, layers), scenario)
    return scenario, channels, stack, bf


def test_evaluation_matches_sdp_covariance():
    scenario, channels, stack, bf = _fixed_solution()
    ev = evaluate_configuration(stack, channels, bf, scenario)
    p = end_to_end_matrix(stack, channels.omegas)
    sdp = crb_extended(p, channels.G, bf.sdp_transmit_cov, scenario.radar_noise, scenario.symbols)
    assert ev.crb.crb_value == pytest.approx(sdp.crb_value, rel=1e-9)


def test_evaluation_flags():
    scenario, channels, stack, bf = _fixed_solution()
    ev = evaluate_configuration(stack, channels, bf, scenario)
    assert ev.feasible
    # rescale to exactly P0: still feasible under the inclusive power test
    total = ev.power
    exact = BeamformingSolution(bf.covariances, bf.sensing_cov, bf.beamformers * np.sqrt(scenario.p0 / total),
                                bf.sensing_cov_opt * (scenario.p0 / total))
    assert evaluate_configuration(stack, channels, exact, scenario).feasible
    strict = scenario.with_thresholds([g * 1.01 * (1 + m) for g, m in zip(scenario.sinr_thresholds, ev.margins)])
    assert not evaluate_configuration(stack, channels, bf, strict).feasible


def test_small_instance_beats_tolerance():
    scenario = single_user(m=2)
    geom = SimGeometry.default(1, 2)
    res = mao_optimize(scenario, geom, build_channels(scenario, geom, 0))
    assert res.evaluation.feasible and np.isfinite(res.crb)
