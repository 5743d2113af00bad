"""The two alternating subproblems and the 1-bit codebook search.

Beamforming: for a fixed phase stack, minimise the trace-inverse surrogate
tr((F_l R_ie F_l^H)^{-1}) with F_l = A_l G over the SDP covariances, subject to
per-user SINR constraints written with the exact effective channel and the
total power budget. With the thin SVD F_l = U S V^H the surrogate equals
tr(S^{-2} (V^H R_ie V)^{-1}), so the epigraph LMI only sees the isometry V and
the (often wide) singular value spread moves into the objective weights.
Problems are assembled in normalised units: covariances are divided by P0,
S by its smallest entry, and each SINR row by the user's channel gain.
``BeamformingSdp.unpack`` undoes the scaling.

Phases: for fixed beamformers, the layer-l phase vector v enters every received
amplitude affinely, h_k^H w = v^T t + c. Lifting u~ = [conj(v); 1] gives the SDR
max sum(rho_k) s.t. tr(D_k V) - rho_k >= Gamma_k sigma_k^2, diag(V) = 1, V >= 0.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .channels import ChannelSet, Scenario
from .conic import (INFEASIBLE, NUMERICAL_FAILURE, AffineHermitian, ConicProblem, ConicSolution,
                    add_trace_inverse_objective)
from .metrics import BeamformingSolution
from .propagation import PhaseStack, cascade_split

MAX_CODEBOOK = 2 ** 24
SINR_CHECK_RTOL = 1e-6
DEFAULT_RANDOMIZATIONS = 200


class RankDeficientError(ValueError):
    """The forward map A_l G has rank below N: the CRB objective is structurally infinite."""


class ExtractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerContext:
    layer: int
    prefix: np.ndarray      # A_l
    suffix: np.ndarray      # B_l
    forward: np.ndarray     # F_l = A_l G, N x M
    user_rows: np.ndarray   # g_k^T = h_r,k^H B_l, K x N
    direct_rows: np.ndarray  # h_d,k^H, K x M
    coefficients: np.ndarray  # current exp(j psi_l)

    def effective_rows(self, coefficients: np.ndarray | None = None) -> np.ndarray:
        """h_k^H for the given layer coefficients (current ones by default), shape (K, M)."""
        v = self.coefficients if coefficients is None else coefficients
        return self.direct_rows + (self.user_rows * v) @ self.forward


def layer_context(stack: PhaseStack, channels: ChannelSet, layer: int) -> LayerContext:
    a, b = cascade_split(stack, channels.omegas, layer)
    return LayerContext(
        layer=layer,
        prefix=a,
        suffix=b,
        forward=a @ channels.G,
        user_rows=channels.h_r.conj() @ b,
        direct_rows=channels.h_d.conj(),
        coefficients=stack.coefficients(layer),
    )


# ---------------------------------------------------------------- beamforming SDP

def _w(k):
    return f"W{k + 1}"


@dataclass
class BeamformingSdp:
    problem: ConicProblem
    rows: np.ndarray          # exact effective channels h_k^H, (K, M)
    power_scale: float        # covariance = power_scale * normalised covariance
    objective_scale: float    # surrogate = normalised objective / objective_scale
    users: int

    def unpack(self, sol: ConicSolution):
        """(covariances (K, M, M), R_0, surrogate tr(X^{-1})) in physical units."""
        w = np.stack([_herm(sol.values[_w(k)]) for k in range(self.users)]) * self.power_scale
        r0 = _herm(sol.values["R0"]) * self.power_scale
        return w, r0, sol.objective / self.objective_scale


def _herm(a):
    return 0.5 * (a + a.conj().T)


def assemble_beamforming_sdp(ctx: LayerContext, scenario: Scenario) -> BeamformingSdp:
    f = ctx.forward
    n, m = f.shape
    if m < n:
        raise RankDeficientError(f"rank(A_{ctx.layer} G) <= M = {m} < N = {n}")
    _, sv, vh = np.linalg.svd(f, full_matrices=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise RankDeficientError(f"rank(A_{ctx.layer} G) < N = {n}")
    k_users = scenario.users
    p0 = scenario.p0
    weight = np.diag((sv[-1] / sv) ** 2)

    prob = ConicProblem()
    names = [_w(k) for k in range(k_users)] + ["R0"]
    for k in range(k_users):
        prob.add_var(_w(k), m, role="W")
    prob.add_var("R0", m, role="R0")
    x_expr = AffineHermitian(n, [(name, vh) for name in names], label="V^H R_ie V")
    add_trace_inverse_objective(prob, x_expr, "Y", weight=weight)

    rows = ctx.effective_rows()
    for k in range(k_users):
        r = rows[k]
        gain = float(np.real(r @ r.conj()))
        if gain <= 0:
            raise ExtractionError(f"user {k + 1} has an all-zero effective channel")
        h_hat = np.outer(r.conj(), r) / gain
        gamma = scenario.sinr_thresholds[k]
        scale = min(1.0, gamma)  # keeps the 1/Gamma coefficient bounded
        coeffs = {name: -scale * h_hat for name in names}
        coeffs[_w(k)] = scale / gamma * h_hat
        prob.add_constraint(coeffs, ">=", scale * scenario.user_noise[k] / (p0 * gain), label=f"sinr[{k + 1}]")
    prob.add_constraint({name: np.eye(m) for name in names}, "<=", 1.0, label="power")
    return BeamformingSdp(prob, rows, p0, p0 * sv[-1] ** 2, k_users)


def recover_beamformers(covariances: np.ndarray, sensing_cov: np.ndarray, rows: np.ndarray) -> BeamformingSolution:
    """Rank-one extraction preserving sum_k W_k + R_0.

    w_k = W_k h_k / sqrt(h_k^H W_k h_k) and R_0^opt = R_0 + sum W_k - sum w_k w_k^H.
    """
    covariances = np.asarray(covariances, dtype=complex)
    k_users, m, _ = covariances.shape
    beams = np.zeros((k_users, m), dtype=complex)
    for k in range(k_users):
        wk = _herm(covariances[k])
        h = rows[k].conj()
        q = float(np.real(h.conj() @ wk @ h))
        if q <= 1e-12 * max(float(np.real(np.trace(wk))), np.finfo(float).tiny):
            raise ExtractionError(f"h^H W h vanishes for user {k + 1}")
        beams[k] = wk @ h / np.sqrt(q)
    r0_opt = sensing_cov + covariances.sum(axis=0) - beams.T @ beams.conj()
    return BeamformingSolution(covariances, np.asarray(sensing_cov, dtype=complex), beams, _herm(r0_opt))


def single_user_bound_violations(rows: np.ndarray, scenario: Scenario) -> list[int]:
    """Users whose threshold exceeds P0 |h_k|^2 / sigma_k^2, the SINR reachable with no interference at all."""
    gains = np.real(np.einsum("km,km->k", rows, rows.conj()))
    reach = scenario.p0 * gains / np.asarray(scenario.user_noise, dtype=float)
    return [k for k in range(len(gains)) if scenario.sinr_thresholds[k] > reach[k]]


def _sinr_shortfall(solution: BeamformingSolution, rows: np.ndarray, scenario: Scenario) -> float:
    gains = np.abs(rows @ solution.beamformers.T) ** 2
    signal = np.diag(gains)
    leak = np.real(np.einsum("km,mn,kn->k", rows, solution.sensing_cov_opt, rows.conj()))
    interf = gains.sum(axis=1) - signal + leak + np.asarray(scenario.user_noise, dtype=float)
    return float(np.max(1.0 - signal / (np.asarray(scenario.sinr_thresholds) * interf)))


def solve_beamforming(ctx: LayerContext, scenario: Scenario, solver=None):
    """Assemble, solve and extract. Returns (BeamformingSolution | None, ConicSolution, BeamformingSdp, surrogate).

    Thresholds beyond the interference-free bound are declared infeasible before
    solving; an SDP point whose extracted beamformers miss a threshold by more than
    ``SINR_CHECK_RTOL`` is reported as a numerical failure rather than returned.
    """
    from .conic import solve_conic
    sdp = assemble_beamforming_sdp(ctx, scenario)
    over = single_user_bound_violations(sdp.rows, scenario)
    if over:
        sol = ConicSolution({}, np.nan, INFEASIBLE, {},
                            reason=f"threshold above the interference-free SINR for users {[k + 1 for k in over]}")
        return None, sol, sdp, np.nan
    sol = (solver or solve_conic)(sdp.problem)
    if not sol.optimal:
        return None, sol, sdp, np.nan
    w, r0, surrogate = sdp.unpack(sol)
    bf = recover_beamformers(w, r0, sdp.rows)
    short = _sinr_shortfall(bf, sdp.rows, scenario)
    if short > SINR_CHECK_RTOL:
        sol.status = NUMERICAL_FAILURE
        sol.reason = f"solver point misses an SINR threshold by {short:.2e} (relative)"
        return None, sol, sdp, np.nan
    return bf, sol, sdp, surrogate


# ---------------------------------------------------------------- phase SDR

@dataclass
class SdrLift:
    """Quadratic data of the phase lift.

    ``amplitudes[k, i]`` is z_{k,i} = [t_{k,i}; c_{k,i}] for user k and transmit
    stream i, where streams are the K beamformers followed by the eigen-split
    pseudo streams of R_0^opt. Q_{k,i} = z z^H.
    """
    amplitudes: np.ndarray    # (K, K + J, N + 1)
    users: int
    thresholds: np.ndarray
    noise: np.ndarray
    scale: float
    D: np.ndarray             # (K, N + 1, N + 1)

    def quadratic(self, k: int, i: int) -> np.ndarray:
        z = self.amplitudes[k, i]
        return np.outer(z, z.conj())

    def slacks(self, V: np.ndarray) -> np.ndarray:
        """Unnormalised slack tr(D_k V) - Gamma_k sigma_k^2 for every user."""
        return np.real(np.einsum("kij,ji->k", self.D, V)) - self.thresholds * self.noise


def _rho(k):
    return f"rho{k + 1}"


def assemble_phase_sdr(ctx: LayerContext, solution: BeamformingSolution, scenario: Scenario):
    k_users = scenario.users
    lam, vecs = np.linalg.eigh(solution.sensing_cov_opt)
    keep = lam > 1e-14 * max(lam.max(initial=0.0), np.finfo(float).tiny)
    pseudo = (vecs[:, keep] * np.sqrt(lam[keep])).T  # rows are sqrt(lam_j) u_j
    streams = np.vstack([solution.beamformers, pseudo]) if pseudo.size else solution.beamformers
    fw = streams @ ctx.forward.T                          # (S, N): F s for each stream
    t = ctx.user_rows[:, None, :] * fw[None, :, :]        # (K, S, N)
    c = ctx.direct_rows @ streams.T                       # (K, S)
    z = np.concatenate([t, c[:, :, None]], axis=2)       # (K, S, N + 1)

    gammas = np.asarray(scenario.sinr_thresholds, dtype=float)
    noise = np.asarray(scenario.user_noise, dtype=float)
    q = np.einsum("ksa,ksb->ksab", z, z.conj())
    d = np.empty((k_users, z.shape[2], z.shape[2]), dtype=complex)
    for k in range(k_users):
        others = q[k].sum(axis=0) - q[k, k]
        d[k] = q[k, k] - gammas[k] * others
    scale = max(float(np.max(np.abs(d))), float(np.max(gammas * noise)), np.finfo(float).tiny)
    lift = SdrLift(z, k_users, gammas, noise, scale, d)

    size = z.shape[2]
    prob = ConicProblem(sense="max")
    prob.add_var("V", size, role="lifted phases")
    for k in range(k_users):
        prob.add_var(_rho(k), 1, role="slack")
        prob.add_constraint({"V": d[k] / scale, _rho(k): -np.eye(1)}, ">=",
                            gammas[k] * noise[k] / scale, label=f"sinr-slack[{k + 1}]")
    prob.add_objective({_rho(k): np.eye(1) for k in range(k_users)})
    for i in range(size):
        e = np.zeros((size, size))
        e[i, i] = 1.0
        prob.add_constraint({"V": e}, "==", 1.0, label=f"diag[{i + 1}]")
    return lift, prob


@dataclass
class RandomizationResult:
    angles: np.ndarray
    min_margin: float    # min_k (SINR_k - Gamma_k)
    sum_slack: float     # sum_k of the unnormalised slacks
    source: str          # "current", "eigenvector" or "draw"
    candidates: np.ndarray  # coefficient vectors evaluated, current first
    candidate_slacks: np.ndarray  # (C, K)


def candidate_scores(ctx: LayerContext, solution: BeamformingSolution, scenario: Scenario, coeffs: np.ndarray):
    """min_k(SINR_k - Gamma_k) and per-user slacks for candidate layer coefficient vectors (C, N)."""
    coeffs = np.atleast_2d(coeffs)
    rows = ctx.direct_rows[None] + (ctx.user_rows[None] * coeffs[:, None, :]) @ ctx.forward  # (C, K, M)
    gains = np.abs(rows @ solution.beamformers.T) ** 2                                       # (C, K, K)
    signal = np.diagonal(gains, axis1=1, axis2=2)
    leak = np.real(np.einsum("ckm,mn,ckn->ck", rows, solution.sensing_cov_opt, rows.conj()))
    gam = np.asarray(scenario.sinr_thresholds, dtype=float)
    noise = np.asarray(scenario.user_noise, dtype=float)
    interf = gains.sum(axis=2) - signal + leak + noise
    sinr = signal / interf
    slack = signal - gam * interf
    return np.min(sinr - gam, axis=1), slack


def _phases_from_lift(u_tilde: np.ndarray) -> np.ndarray:
    """Layer coefficients v from a lifted vector [conj(v); 1] up to scaling/rotation."""
    mag = np.abs(u_tilde)
    unit = np.where(mag > 1e-300, u_tilde / np.where(mag > 1e-300, mag, 1.0), 1.0)
    unit = unit / unit[..., -1:]
    return np.conj(unit[..., :-1])


def randomize_phases(V: np.ndarray, ctx: LayerContext, solution: BeamformingSolution, scenario: Scenario,
                     count: int = DEFAULT_RANDOMIZATIONS, rng: np.random.Generator | None = None) -> RandomizationResult:
    """Gaussian randomisation around the SDR solution.

    Candidates: the current layer profile, the leading-eigenvector profile and
    ``count`` draws from CN(0, V). The best by (min_k(SINR_k - Gamma_k), sum of
    slacks) wins; the current profile wins ties, so the result never regresses.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    V = _herm(np.asarray(V, dtype=complex))
    lam, vecs = np.linalg.eigh(V)
    cands = [ctx.coefficients, _phases_from_lift(vecs[:, -1])]
    sources = ["current", "eigenvector"]
    if count > 0:
        root = vecs * np.sqrt(np.clip(lam, 0.0, None))
        size = V.shape[0]
        zeta = (rng.standard_normal((count, size)) + 1j * rng.standard_normal((count, size))) / np.sqrt(2.0)
        xi = zeta @ root.T
        cands.extend(_phases_from_lift(xi))
        sources.extend(["draw"] * count)
    cands = np.array(cands)
    margin, slack = candidate_scores(ctx, solution, scenario, cands)
    total = slack.sum(axis=1)
    best = 0
    for i in range(1, len(cands)):
        if margin[i] > margin[best] or (margin[i] == margin[best] and total[i] > total[best]):
            best = i
    return RandomizationResult(np.mod(np.angle(cands[best]), 2 * np.pi), float(margin[best]), float(total[best]),
                               sources[best], cands, slack)


# ---------------------------------------------------------------- codebook search

def exhaustive_codebook_search(template: PhaseStack, bits: int, objective: Callable[[PhaseStack], float]):
    """Maximise ``objective`` over all 2**(bits*L*N) quantised stacks.

    Profiles are visited in lexicographic order of their level indices (layer 1,
    atom 1 most significant); the first maximiser wins ties.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    levels = 2 ** bits
    slots = template.layers * template.atoms
    if levels ** slots > MAX_CODEBOOK:
        raise ValueError(f"codebook of {levels}**{slots} profiles exceeds the {MAX_CODEBOOK} guard")
    step = 2 * np.pi / levels
    best, best_val = None, -np.inf
    for code in itertools.product(range(levels), repeat=slots):
        stack = PhaseStack(np.array(code, dtype=float).reshape(template.layers, template.atoms) * step)
        val = float(objective(stack))
        if best is None or val > best_val:
            best, best_val = stack, val
    return best, best_val
