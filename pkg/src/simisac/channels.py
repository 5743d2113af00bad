"""Stochastic radio environment: path loss, Rician fading and node placement.

Random streams are derived from a single integer seed with
``numpy.random.SeedSequence(seed, spawn_key=(link, user))`` feeding PCG64, one
stream per link per user:

    link 0  BS -> SIM matrix G            (user 0)
    link 1  SIM -> CU k vector h_r,k      (user k)
    link 2  BS -> CU k direct vector h_d,k (user k)

PCG64 output is platform independent, so a seed fixes every channel bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .propagation import SimGeometry, diffraction_set

REFERENCE_LOSS = 1e-3  # -30 dB at the reference distance
REFERENCE_DISTANCE = 1.0

LINK_BS_SIM = 0
LINK_SIM_CU = 1
LINK_BS_CU = 2


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * np.log10(x)


@dataclass(frozen=True)
class Scenario:
    bs_position: tuple[float, float, float] = (0.0, 0.0, 11.0)
    sim_position: tuple[float, float, float] = (0.0, 0.0, 10.0)
    cu_positions: tuple[tuple[float, float, float], ...] = ((0.0, 10.0, 0.0), (0.0, 20.0, 0.0))
    bs_antennas: int = 4
    p0: float = dbm_to_watts(120.0)
    user_noise: tuple[float, ...] | None = None
    radar_noise: float = dbm_to_watts(-120.0)
    symbols: int = 64
    rician_factor: float = 0.5
    alpha_bs_sim: float = 2.2
    alpha_sim_cu: float = 2.8
    alpha_bs_cu: float = 3.5
    sinr_thresholds: tuple[float, ...] = field(default_factory=lambda: (10.0, 10.0))

    def __post_init__(self):
        k = len(self.cu_positions)
        if k < 1:
            raise ValueError("at least one communication user is required")
        if k > self.bs_antennas:
            raise ValueError(f"K = {k} users exceeds M = {self.bs_antennas} antennas")
        if self.user_noise is None:
            object.__setattr__(self, "user_noise", (self.radar_noise,) * k)
        if len(self.user_noise) != k or len(self.sinr_thresholds) != k:
            raise ValueError("user_noise and sinr_thresholds need one entry per user")
        if not (self.p0 > 0 and self.radar_noise > 0 and all(s > 0 for s in self.user_noise)):
            raise ValueError("powers must be positive")
        if self.symbols < 1:
            raise ValueError("symbols must be >= 1")
        if any(not g > 0 for g in self.sinr_thresholds):
            raise ValueError("SINR thresholds must be positive")
        if self.rician_factor < 0:
            raise ValueError("rician_factor must be non-negative")

    @property
    def users(self) -> int:
        return len(self.cu_positions)

    def with_thresholds(self, gamma) -> "Scenario":
        """Copy with every user's threshold set to ``gamma`` (scalar) or to a per-user sequence."""
        g = tuple(np.broadcast_to(np.asarray(gamma, dtype=float), (self.users,)).tolist())
        return replace(self, sinr_thresholds=g)


@dataclass(frozen=True)
class ChannelSet:
    """Realized channels.

    ``G`` is N x M. ``h_d[k]`` (length M) and ``h_r[k]`` (length N) are stored as
    columns, so the rows entering the received signal are their conjugates.
    """
    G: np.ndarray
    h_d: np.ndarray
    h_r: np.ndarray
    omegas: tuple[np.ndarray, ...]

    @property
    def users(self) -> int:
        return self.h_d.shape[0]


def path_loss(d: float, alpha: float) -> float:
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d}")
    return REFERENCE_LOSS * (d / REFERENCE_DISTANCE) ** (-alpha)


def rician_matrix(rows: int, cols: int, kappa: float, los_component: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Unit-power Rician draw; the caller applies sqrt(path loss)."""
    los = np.broadcast_to(np.asarray(los_component, dtype=complex), (rows, cols))
    nlos = (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)
    if np.isinf(kappa):
        return np.array(los)
    return np.sqrt(kappa / (1 + kappa)) * los + np.sqrt(1 / (1 + kappa)) * nlos


def link_rng(seed: int, link: int, user: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(link, user))))


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def bs_array_positions(m: int, wavelength: float) -> np.ndarray:
    """Uniform linear array along x, half-wavelength spacing, centred on the BS."""
    x = (np.arange(m) - (m - 1) / 2.0) * wavelength / 2.0
    return np.column_stack([x, np.zeros(m), np.zeros(m)])


def sim_atom_positions(geom: SimGeometry) -> np.ndarray:
    xy = geom.atom_positions()
    return np.column_stack([xy, np.zeros(len(xy))])


def steering_vector(positions: np.ndarray, direction, wavelength: float) -> np.ndarray:
    """Far-field response of an array to a plane wave leaving/arriving along ``direction``."""
    return np.exp(2j * np.pi / wavelength * (positions @ _unit(direction)))


def build_channels(scenario: Scenario, geom: SimGeometry, seed: int) -> ChannelSet:
    lam = geom.wavelength
    m, n = scenario.bs_antennas, geom.atoms_per_layer
    bs = np.asarray(scenario.bs_position, dtype=float)
    sim = np.asarray(scenario.sim_position, dtype=float)
    kappa = scenario.rician_factor
    bs_arr = bs_array_positions(m, lam)
    sim_arr = sim_atom_positions(geom)

    d_bs_sim = np.linalg.norm(sim - bs)
    los_g = np.outer(steering_vector(sim_arr, bs - sim, lam), steering_vector(bs_arr, sim - bs, lam).conj())
    G = np.sqrt(path_loss(d_bs_sim, scenario.alpha_bs_sim)) * rician_matrix(
        n, m, kappa, los_g, link_rng(seed, LINK_BS_SIM))

    h_r = np.empty((scenario.users, n), dtype=complex)
    h_d = np.empty((scenario.users, m), dtype=complex)
    for k, cu in enumerate(scenario.cu_positions):
        cu = np.asarray(cu, dtype=float)
        # stored as columns h with h^H the row, hence the conjugated LoS response
        los_r = steering_vector(sim_arr, cu - sim, lam).conj()
        h_r[k] = np.sqrt(path_loss(np.linalg.norm(cu - sim), scenario.alpha_sim_cu)) * rician_matrix(
            n, 1, kappa, los_r[:, None], link_rng(seed, LINK_SIM_CU, k))[:, 0]
        h_d[k] = np.sqrt(path_loss(np.linalg.norm(cu - bs), scenario.alpha_bs_cu)) * rician_matrix(
            m, 1, kappa, np.ones((m, 1)), link_rng(seed, LINK_BS_CU, k))[:, 0]
    return ChannelSet(G=G, h_d=h_d, h_r=h_r, omegas=diffraction_set(geom))
