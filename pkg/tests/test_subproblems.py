import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simisac.channels import build_channels
from simisac.conic import INFEASIBLE, solve_conic
from simisac.metrics import (BeamformingSolution, crb_extended, effective_channels, sinr_all, total_power,
                             trace_inverse_hermitian)
from simisac.oracles import beamformer_grid_minimum, enumerate_received_power, kkt_check
from simisac.propagation import PhaseStack, SimGeometry, end_to_end_matrix
from simisac.subproblems import (ExtractionError, assemble_beamforming_sdp, assemble_phase_sdr, candidate_scores,
                                 exhaustive_codebook_search, layer_context, randomize_phases, recover_beamformers,
                                 solve_beamforming)

from helpers import random_hermitian, single_user


def context(scenario, layers, seed=0, layer=None, stack_seed=1):
    geom = SimGeometry.default(layers, 4 if scenario.bs_antennas >= 4 else scenario.bs_antennas)
    channels = build_channels(scenario, geom, seed)
    stack = PhaseStack.random(layers, geom.atoms_per_layer, np.random.default_rng(stack_seed))
    return stack, channels, layer_context(stack, channels, layer or layers)


def certified_beamforming(ctx, scenario):
    bf, sol, sdp, surrogate = solve_beamforming(ctx, scenario)
    assert sol.optimal, sol.reason
    assert kkt_check(sdp.problem, sol).passed
    return bf, sol, sdp, surrogate


def test_layer_context_reproduces_effective_channel(layered):
    scenario, geom, channels = layered
    stack = PhaseStack.random(geom.layers, 4, np.random.default_rng(3))
    exact = effective_channels(end_to_end_matrix(stack, channels.omegas), channels)
    for layer in range(1, geom.layers + 1):
        rows = layer_context(stack, channels, layer).effective_rows()
        assert np.max(np.abs(rows - exact)) <= 1e-12 * np.max(np.abs(exact))


def test_surrogate_equals_crb_factor_at_last_layer(layered, rng):
    scenario, geom, channels = layered
    stack = PhaseStack.random(geom.layers, 4, rng)
    ctx = layer_context(stack, channels, geom.layers)
    p = end_to_end_matrix(stack, channels.omegas)
    bf, *_ = certified_beamforming(ctx, scenario)
    # the solved covariance and a well-conditioned random one; rounding grows with cond(F R F^H)
    for r in (bf.transmit_cov, np.eye(4) + 0.1 * random_hermitian(rng, 4, psd=True)):
        f = ctx.forward
        surrogate = trace_inverse_hermitian(f @ r @ f.conj().T)
        exact = crb_extended(p, channels.G, r, 1.0, 1).factor_comm
        assert surrogate == pytest.approx(exact, rel=1e-10)


def test_beamforming_sdp_certified_and_feasible(layered):
    scenario, geom, channels = layered
    stack = PhaseStack.random(geom.layers, 4, np.random.default_rng(5))
    for layer in range(geom.layers, 0, -1):
        ctx = layer_context(stack, channels, layer)
        bf, sol, sdp, surrogate = certified_beamforming(ctx, scenario)
        r = bf.sdp_transmit_cov
        direct = np.trace(np.linalg.inv(ctx.forward @ r @ ctx.forward.conj().T)).real
        assert surrogate == pytest.approx(direct, rel=1e-6)
        assert total_power(bf) <= scenario.p0 * (1 + 1e-8)


def test_vanishing_threshold_uses_full_power():
    scenario = single_user(m=4, gamma=1e-9)
    _, _, ctx = context(scenario, 1)
    bf, *_ = certified_beamforming(ctx, scenario)
    assert np.trace(bf.sdp_transmit_cov).real == pytest.approx(scenario.p0, rel=1e-6)


def test_unreachable_threshold_is_infeasible():
    scenario = single_user(m=4)
    _, _, ctx = context(scenario, 1)
    h = ctx.effective_rows()[0]
    best = scenario.p0 * np.vdot(h, h).real / scenario.user_noise[0]
    scenario = scenario.with_thresholds(2 * best)
    bf, sol, _, _ = solve_beamforming(ctx, scenario)
    assert bf is None and sol.status == INFEASIBLE


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_two_by_two_matches_grid_oracle(seed):
    scenario = single_user(m=2, gamma=1e4)
    geom = SimGeometry.default(1, 2)
    channels = build_channels(scenario, geom, seed)
    ctx = layer_context(PhaseStack.random(1, 2, np.random.default_rng(seed)), channels, 1)
    _, _, _, surrogate = certified_beamforming(ctx, scenario)
    grid = beamformer_grid_minimum(ctx.forward, ctx.effective_rows()[0], scenario.p0, scenario.user_noise[0],
                                   scenario.sinr_thresholds[0])
    assert surrogate <= grid * (1 + 1e-9)
    assert surrogate == pytest.approx(grid, rel=0.02)


def test_rank_one_extraction_idempotent(rng):
    w = rng.normal(size=3) + 1j * rng.normal(size=3)
    h = rng.normal(size=3) + 1j * rng.normal(size=3)
    r0 = random_hermitian(rng, 3, psd=True)
    sol = recover_beamformers(np.outer(w, w.conj())[None], r0, h.conj()[None])
    phase = sol.beamformers[0] @ w.conj() / np.vdot(w, w)
    assert abs(abs(phase) - 1) < 1e-12
    assert np.allclose(sol.beamformers[0], phase * w)
    assert np.allclose(sol.sensing_cov_opt, r0)


def test_extraction_failure_reported(rng):
    with pytest.raises(ExtractionError):
        recover_beamformers(np.zeros((1, 2, 2)), np.eye(2), np.ones((1, 2)))


@given(st.integers(0, 10_000))
def test_extraction_identities(seed):
    rng = np.random.default_rng(seed)
    covs = np.stack([random_hermitian(rng, 4, psd=True) for _ in range(2)])
    r0 = random_hermitian(rng, 4, psd=True)
    rows = rng.normal(size=(2, 4)) + 1j * rng.normal(size=(2, 4))
    sol = recover_beamformers(covs, r0, rows)
    total = covs.sum(axis=0) + r0
    assert np.linalg.norm(sol.transmit_cov - total) <= 1e-9 * np.linalg.norm(total)
    assert np.min(np.linalg.eigvalsh(sol.sensing_cov_opt)) >= -1e-9 * np.trace(total).real
    assert total_power(sol) == pytest.approx(np.trace(total).real, rel=1e-9)
    for k in range(2):
        h = rows[k].conj()
        assert abs(rows[k] @ sol.beamformers[k]) ** 2 == pytest.approx((h.conj() @ covs[k] @ h).real, rel=1e-9)


def _sdr(ctx, bf, scenario):
    lift, prob = assemble_phase_sdr(ctx, bf, scenario)
    sol = solve_conic(prob)
    assert sol.optimal, sol.reason
    assert kkt_check(prob, sol).passed
    v = sol.values["V"]
    assert np.max(np.abs(np.diag(v) - 1)) <= 1e-8
    assert np.min(np.linalg.eigvalsh(v)) >= -1e-8 * np.trace(v).real
    return lift, sol


def test_sdr_single_atom_aligns_phase():
    scenario = single_user(m=1, gamma=1.0)
    geom = SimGeometry.default(1, 1)
    channels = build_channels(scenario, geom, 4)
    ctx = layer_context(PhaseStack.zeros(1, 1), channels, 1)
    w = np.array([[np.sqrt(scenario.p0)]], dtype=complex)
    bf = BeamformingSolution(np.outer(w, w.conj())[None], np.zeros((1, 1)), w, np.zeros((1, 1), dtype=complex))
    lift, sol = _sdr(ctx, bf, scenario)
    res = randomize_phases(sol.values["V"], ctx, bf, scenario, count=50, rng=np.random.default_rng(0))
    grid = np.linspace(0, 2 * np.pi, 200_001)
    _, slack = candidate_scores(ctx, bf, scenario, np.exp(1j * grid)[:, None])
    best = grid[np.argmax(slack[:, 0])]
    diff = np.angle(np.exp(1j * (res.angles[0] - best)))
    assert abs(diff) <= 1e-3


def test_sdr_dark_sim_path():
    scenario = single_user(m=2, gamma=1.0)
    geom = SimGeometry.default(1, 2)
    channels = build_channels(scenario, geom, 0)
    dark = type(channels)(channels.G, channels.h_d, np.zeros_like(channels.h_r), channels.omegas)
    ctx = layer_context(PhaseStack.zeros(1, 2), dark, 1)
    w = np.array([[1e4, 2e4j]])
    bf = BeamformingSolution(np.einsum("ki,kj->kij", w, w.conj()), np.zeros((2, 2)), w,
                             np.zeros((2, 2), dtype=complex))
    lift, sol = _sdr(ctx, bf, scenario)
    direct = abs(channels.h_d[0].conj() @ w[0]) ** 2 - scenario.user_noise[0]
    assert sol.objective * lift.scale == pytest.approx(direct, rel=1e-6)
    rng = np.random.default_rng(0)
    for _ in range(3):
        v = np.exp(1j * rng.uniform(0, 2 * np.pi, 3))
        assert lift.slacks(np.outer(v, v.conj()))[0] == pytest.approx(direct, rel=1e-9)


def test_rank_one_lift_recovers_slacks(rng):
    scenario = single_user(m=4)
    stack, channels, ctx = context(scenario, 2)
    bf, *_ = certified_beamforming(ctx, scenario)
    lift, _ = assemble_phase_sdr(ctx, bf, scenario)
    v = np.exp(1j * rng.uniform(0, 2 * np.pi, 4))
    u = np.append(v.conj(), 1.0)
    big_v = np.outer(u, u.conj())
    res = randomize_phases(big_v, ctx, bf, scenario, count=20, rng=rng)
    coeffs = np.exp(1j * res.angles)
    assert np.allclose(coeffs, v) or res.source == "current"
    _, slack = candidate_scores(ctx, bf, scenario, v[None])
    assert slack[0] == pytest.approx(lift.slacks(big_v), rel=1e-9)


def test_randomization_without_draws(layered):
    scenario, geom, channels = layered
    stack = PhaseStack.random(geom.layers, 4, np.random.default_rng(2))
    ctx = layer_context(stack, channels, 1)
    bf, *_ = certified_beamforming(ctx, scenario)
    _, sol = _sdr(ctx, bf, scenario)
    res = randomize_phases(sol.values["V"], ctx, bf, scenario, count=0)
    assert len(res.candidates) == 2
    assert res.source in ("current", "eigenvector")


@pytest.mark.parametrize("layers, gamma", [(1, 10.0), (2, 10.0), (3, 100.0)])
def test_randomization_never_degrades_and_sdr_dominates(layers, gamma):
    scenario = single_user(m=4, gamma=gamma).__class__(sinr_thresholds=(gamma, gamma))
    stack, channels, ctx = context(scenario, layers, seed=layers)
    bf, *_ = certified_beamforming(ctx, scenario)
    lift, sol = _sdr(ctx, bf, scenario)
    res = randomize_phases(sol.values["V"], ctx, bf, scenario, count=200, rng=np.random.default_rng(9))
    incoming, _ = candidate_scores(ctx, bf, scenario, ctx.coefficients[None])
    assert res.min_margin >= incoming[0]
    upper = sol.objective * lift.scale
    feasible = np.all(res.candidate_slacks >= 0, axis=1)
    assert feasible.any()
    assert np.all(res.candidate_slacks[feasible].sum(axis=1) <= upper * (1 + 1e-6))


def test_codebook_search_small():
    calls = []

    def objective(stack):
        calls.append(stack.angles.copy())
        return np.cos(stack.angles[0, 0]) - np.cos(stack.angles[0, 1])

    best, val = exhaustive_codebook_search(PhaseStack.zeros(1, 2), 1, objective)
    assert len(calls) == 4
    assert np.allclose(best.angles, [[0.0, np.pi]]) and val == pytest.approx(2.0)


def test_codebook_constant_objective_first_profile():
    best, _ = exhaustive_codebook_search(PhaseStack.zeros(2, 2), 1, lambda s: 1.0)
    assert np.array_equal(best.angles, np.zeros((2, 2)))


def test_codebook_guard():
    with pytest.raises(ValueError):
        exhaustive_codebook_search(PhaseStack.zeros(5, 5), 1, lambda s: 0.0)


def test_codebook_received_power_matches_reenumeration():
    scenario = single_user(m=4)
    geom = SimGeometry.default(1, 4)
    channels = build_channels(scenario, geom, 11)
    w = np.ones(4) / 2

    def power_of(angles):
        p = np.diag(np.exp(1j * angles[0]))
        row = channels.h_d[0].conj() + channels.h_r[0].conj() @ p @ channels.G
        return abs(row @ w) ** 2

    best, val = exhaustive_codebook_search(PhaseStack.zeros(1, 4), 1, lambda s: power_of(s.angles))
    ref_val, ref_idx = enumerate_received_power((1, 4), 1, power_of)
    assert val == ref_val
    assert np.allclose(best.angles.ravel(), np.array(ref_idx) * np.pi)
