"""Figures of merit: extended-target CRB, per-user SINR, transmit power."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_RTOL = 1e-10
HERMITIAN_TOL = 1e-10


@dataclass(frozen=True)
class BeamformingSolution:
    """SDP covariances and the beamformers/sensing covariance extracted from them.

    ``covariances`` has shape (K, M, M), ``beamformers`` shape (K, M).
    """
    covariances: np.ndarray
    sensing_cov: np.ndarray
    beamformers: np.ndarray
    sensing_cov_opt: np.ndarray

    @property
    def transmit_cov(self) -> np.ndarray:
        """R_ie built from the extracted quantities."""
        w = self.beamformers
        return w.T @ w.conj() + self.sensing_cov_opt

    @property
    def sdp_transmit_cov(self) -> np.ndarray:
        return self.covariances.sum(axis=0) + self.sensing_cov


@dataclass(frozen=True)
class CrbReport:
    crb_value: float
    factor_comm: float
    factor_geom: float
    estimable: bool


def _rank(a: np.ndarray, hermitian: bool = False) -> int:
    if a.size == 0:
        return 0
    if hermitian:
        s = np.abs(np.linalg.eigvalsh(a))
    else:
        s = np.linalg.svd(a, compute_uv=False)
    top = s.max()
    if top == 0:
        return 0
    return int(np.count_nonzero(s > RANK_RTOL * top))


def _check_hermitian(r: np.ndarray, what: str):
    scale = max(np.linalg.norm(r), np.finfo(float).tiny)
    if np.linalg.norm(r - r.conj().T) > HERMITIAN_TOL * scale:
        raise ValueError(f"{what} is not Hermitian")


def trace_inverse_hermitian(x: np.ndarray) -> float:
    """tr(X^{-1}) for Hermitian positive definite X, via its eigenvalues."""
    lam = np.linalg.eigvalsh(0.5 * (x + x.conj().T))
    return float(np.sum(1.0 / lam))


def feasibility_rank_check(P: np.ndarray, G: np.ndarray, R_ie: np.ndarray) -> tuple[bool, bool]:
    """(rank(PG) = N, rank(R_ie) >= N)."""
    n = P.shape[0]
    return _rank(P @ G) == n, _rank(R_ie, hermitian=True) >= n


def crb_extended(P: np.ndarray, G: np.ndarray, R_ie: np.ndarray, radar_noise: float, symbols: int) -> CrbReport:
    """Trace-product CRB for the N x N target response seen through the SIM.

    Returns ``inf`` when the rank conditions for estimability fail.
    """
    n = P.shape[0]
    if P.shape != (n, n) or G.shape[0] != n or R_ie.shape != (G.shape[1], G.shape[1]):
        raise ValueError(f"incompatible shapes P{P.shape} G{G.shape} R_ie{R_ie.shape}")
    if symbols < 1:
        raise ValueError("symbols must be >= 1")
    _check_hermitian(R_ie, "R_ie")
    full_pg, full_r = feasibility_rank_check(P, G, R_ie)
    if not (full_pg and full_r):
        return CrbReport(np.inf, np.inf, np.inf, False)
    pg = P @ G
    comm = trace_inverse_hermitian(pg @ R_ie @ pg.conj().T)
    geom = trace_inverse_hermitian(pg @ pg.conj().T)
    return CrbReport(radar_noise / symbols * comm * geom, comm, geom, True)


def effective_channels(P: np.ndarray, channels) -> np.ndarray:
    """Rows h_k^H = h_d,k^H + h_r,k^H P G, shape (K, M)."""
    return channels.h_d.conj() + channels.h_r.conj() @ P @ channels.G


def sinr_all(P: np.ndarray, channels, solution: BeamformingSolution, user_noise) -> np.ndarray:
    rows = effective_channels(P, channels)
    gains = np.abs(rows @ solution.beamformers.T) ** 2  # [k, i] = |h_k^H w_i|^2
    signal = np.diag(gains)
    leak = np.real(np.einsum("km,mn,kn->k", rows, solution.sensing_cov_opt, rows.conj()))
    interference = gains.sum(axis=1) - signal + leak + np.asarray(user_noise, dtype=float)
    return signal / interference


def sinr_user(k: int, P: np.ndarray, channels, solution: BeamformingSolution, user_noise) -> float:
    """SINR of user ``k`` (0-based)."""
    return float(sinr_all(P, channels, solution, user_noise)[k])


def total_power(solution: BeamformingSolution) -> float:
    w = solution.beamformers
    return float(np.sum(np.abs(w) ** 2) + np.real(np.trace(solution.sensing_cov_opt)))
