"""Independent oracles for certifying the optimisation pipeline on tiny instances.

Repository rule: nothing in this module calls into the code it certifies
(propagation maths, metrics, the conic engine or the subproblem assemblers).
It only reads plain data off the shared value types. SDPs here are modelled
with cvxpy and solved by Clarabel; CRBs use explicit inverses; diffraction uses
scalar loops.
"""
from __future__ import annotations

import cmath
import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

GRID_GUARD = 2 ** 24


@dataclass(frozen=True)
class GridSpec:
    points_per_element: int = 16
    budget: int = GRID_GUARD

    def __post_init__(self):
        if self.points_per_element < 2:
            raise ValueError("points_per_element must be >= 2")


# ---------------------------------------------------------------- physics

def _grid_xy(count, pitch):
    # widest-first search for the most nearly square rows x cols factorisation
    cols = count
    for c in range(count, 0, -1):
        if count % c == 0 and c * c >= count:
            cols = c
    rows = count // cols
    pts = []
    for n in range(count):
        row, col = n // cols, n % cols
        pts.append(((col - (cols - 1) / 2) * pitch, (row - (rows - 1) / 2) * pitch))
    return pts


def rs_coefficient(r, d, wavelength, area):
    """Rayleigh-Sommerfeld coefficient written out term by term."""
    cos_chi = d / r
    amplitude = area * cos_chi / r
    bracket = complex(1.0 / (2 * math.pi * r), -1.0 / wavelength)
    return amplitude * bracket * cmath.exp(1j * 2 * math.pi * r / wavelength)


def naive_diffraction(geom) -> list[np.ndarray]:
    d = geom.thickness / (geom.layers - 1)
    xy = _grid_xy(geom.atoms_per_layer, geom.atom_pitch)
    mats = []
    for _ in range(geom.layers - 1):
        om = np.zeros((len(xy), len(xy)), dtype=complex)
        for m, (xm, ym) in enumerate(xy):
            for mt, (xs, ys) in enumerate(xy):
                r = math.sqrt((xm - xs) ** 2 + (ym - ys) ** 2 + d * d)
                om[m, mt] = rs_coefficient(r, d, geom.wavelength, geom.atom_area)
        mats.append(om)
    return mats


def recompute_diffraction(geom) -> float:
    """Max |difference| between the loop evaluation and ``propagation.diffraction_set``."""
    from .propagation import diffraction_set  # the value under test, compared only

    if geom.layers < 2:
        return 0.0
    ours = naive_diffraction(geom)
    theirs = diffraction_set(geom)
    return max(float(np.max(np.abs(a - b))) for a, b in zip(ours, theirs))


# ---------------------------------------------------------------- metrics

def cascade(angles: np.ndarray, omegas) -> np.ndarray:
    n = angles.shape[1]
    p = np.eye(n, dtype=complex)
    for l in range(angles.shape[0]):
        phi = np.zeros((n, n), dtype=complex)
        for i in range(n):
            phi[i, i] = cmath.exp(1j * angles[l, i])
        p = phi @ p if l == 0 else phi @ omegas[l - 1] @ p
    return p


def crb_direct(P, G, R, radar_noise, symbols) -> float:
    pg = P @ G
    a = pg @ R @ pg.conj().T
    b = pg @ pg.conj().T
    return float(radar_noise / symbols * np.real(np.trace(np.linalg.inv(a))) * np.real(np.trace(np.linalg.inv(b))))


def sinr_scalar(k, P, G, h_d, h_r, beams, r0, noise) -> float:
    """SINR of user k from explicit sums."""
    m = G.shape[1]
    n = P.shape[0]
    eff = []
    for col in range(m):
        acc = np.conj(h_d[k][col])
        for a in range(n):
            for b in range(n):
                acc += np.conj(h_r[k][a]) * P[a, b] * G[b, col]
        eff.append(acc)

    def amp(w):
        return sum(eff[c] * w[c] for c in range(m))

    signal = abs(amp(beams[k])) ** 2
    interf = sum(abs(amp(beams[i])) ** 2 for i in range(len(beams)) if i != k)
    leak = sum((eff[a] * r0[a, b] * np.conj(eff[b])) for a in range(m) for b in range(m)).real
    return float(signal / (interf + leak + noise[k]))


# ---------------------------------------------------------------- SDP oracle

class _SdpOracle:
    """cvxpy model of the full-stack beamforming SDP: min tr((F R F^H)^{-1})."""

    def __init__(self, F, users, p0, noise, gammas):
        import cvxpy as cp
        n, m = F.shape
        self.cp = cp
        u, s, vh = np.linalg.svd(F, full_matrices=False)
        self.scale = s[-1] ** 2 * p0
        self.weight = (s[-1] / s) ** 2
        self.h = [cp.Parameter((m, m), hermitian=True) for _ in range(users)]
        self.rhs = [cp.Parameter(nonneg=True) for _ in range(users)]
        self.W = [cp.Variable((m, m), hermitian=True) for _ in range(users)]
        self.R0 = cp.Variable((m, m), hermitian=True)
        Y = cp.Variable((n, n), hermitian=True)
        total = sum(self.W) + self.R0
        X = vh @ total @ vh.conj().T
        cons = [cp.bmat([[X, np.eye(n)], [np.eye(n), Y]]) >> 0, self.R0 >> 0,
                cp.real(cp.trace(total)) <= 1]
        for k in range(users):
            g = gammas[k]
            cons += [self.W[k] >> 0,
                     cp.real(cp.trace(self.h[k] @ self.W[k])) / g
                     - cp.real(cp.trace(self.h[k] @ (total - self.W[k]))) >= self.rhs[k]]
        self.problem = cp.Problem(cp.Minimize(cp.real(cp.trace(np.diag(self.weight) @ Y))), cons)
        self.p0, self.noise, self.gammas = p0, noise, gammas

    def solve(self, rows):
        cp = self.cp
        for k, r in enumerate(rows):
            gain = float(np.real(np.vdot(r, r)))
            self.h[k].value = np.outer(r.conj(), r) / gain
            self.rhs[k].value = self.noise[k] / (self.p0 * gain)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)  # "solution may be inaccurate" is judged below
                self.problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
        except cp.error.SolverError:
            return None
        if self.problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            return None
        covs = [w.value * self.p0 for w in self.W]
        R = sum(covs) + self.R0.value * self.p0
        # re-check the unnormalised SINR rows; scaled rows can vanish below solver tolerance
        for k, r in enumerate(rows):
            h = r.conj()
            own = np.real(h.conj() @ covs[k] @ h)
            rest = np.real(h.conj() @ (R - covs[k]) @ h)
            if own < self.gammas[k] * (rest + self.noise[k]) * (1 - 1e-6):
                return None
        return 0.5 * (R + R.conj().T)


def _effective_rows(P, channels):
    return np.array([channels.h_d[k].conj() + channels.h_r[k].conj() @ P @ channels.G
                     for k in range(channels.h_d.shape[0])])


@dataclass
class BruteForceResult:
    best_crb: float
    best_angles: np.ndarray | None
    feasible_profiles: int
    evaluated: int

    @property
    def found(self) -> bool:
        return self.best_angles is not None


def brute_force_joint(scenario, geom, channels, grid: GridSpec = GridSpec()) -> BruteForceResult:
    """Exhaustive phase grid; for each profile the full-stack beamforming SDP and the exact CRB."""
    L, n = geom.layers, geom.atoms_per_layer
    pts = grid.points_per_element
    if pts ** (L * n) > grid.budget:
        raise ValueError(f"{pts}**{L * n} grid profiles exceed the budget of {grid.budget}")
    if scenario.bs_antennas < n:
        raise ValueError("brute force needs M >= N")
    levels = [2 * math.pi * i / pts for i in range(pts)]
    gammas = list(scenario.sinr_thresholds)
    oracle_cache = {}
    best, best_angles, feasible, count = math.inf, None, 0, 0
    for code in itertools.product(range(pts), repeat=L * n):
        angles = np.array([levels[c] for c in code]).reshape(L, n)
        P = cascade(angles, channels.omegas)
        F = P @ channels.G
        # for L = 1 the forward map is unitary-equivalent across profiles; cache on its Gram
        key = np.round(F.conj().T @ F, 12).tobytes() if L > 1 else b"single"
        if key not in oracle_cache:
            oracle_cache[key] = _SdpOracle(F if L > 1 else channels.G, scenario.users, scenario.p0,
                                           list(scenario.user_noise), gammas)
        R = oracle_cache[key].solve(_effective_rows(P, channels))
        count += 1
        if R is None:
            continue
        crb = crb_direct(P, channels.G, R, scenario.radar_noise, scenario.symbols)
        feasible += 1
        if crb < best:
            best, best_angles = crb, angles
    return BruteForceResult(best, best_angles, feasible, count)


def beamformer_grid_minimum(F, row, p0, noise, gamma, points=(201, 101, 96)) -> float:
    """min tr((F R F^H)^{-1}) over 2 x 2 covariances on a grid, single user.

    For one user the SINR constraint on R_ie is h^H R h >= Gamma sigma^2 (all power
    along h can serve the user), and the optimum spends the whole budget. With
    R = P0 [[a, b], [b*, 1 - a]] the grid runs over a, |b| / sqrt(a (1 - a)) and arg b.
    """
    na, nr, nt = points
    a = np.linspace(0.0, 1.0, na)[:, None, None]
    rho = np.linspace(0.0, 1.0, nr)[None, :, None]
    th = np.linspace(0.0, 2 * np.pi, nt, endpoint=False)[None, None, :]
    b = rho * np.sqrt(a * (1 - a)) * np.exp(1j * th)
    r00, r11 = p0 * a, p0 * (1 - a)
    r01 = p0 * b
    h = row.conj()
    # h^H R h with h = conj(row)
    served = np.real(np.conj(h[0]) * h[0] * r00 + np.conj(h[1]) * h[1] * r11
                     + 2 * np.real(np.conj(h[0]) * r01 * h[1]))
    # X = F R F^H, 2 x 2 entries
    f = F
    x00 = (abs(f[0, 0]) ** 2 * r00 + abs(f[0, 1]) ** 2 * r11 + 2 * np.real(f[0, 0] * r01 * np.conj(f[0, 1])))
    x11 = (abs(f[1, 0]) ** 2 * r00 + abs(f[1, 1]) ** 2 * r11 + 2 * np.real(f[1, 0] * r01 * np.conj(f[1, 1])))
    x01 = (f[0, 0] * np.conj(f[1, 0]) * r00 + f[0, 1] * np.conj(f[1, 1]) * r11
           + f[0, 0] * r01 * np.conj(f[1, 1]) + f[0, 1] * np.conj(r01) * np.conj(f[1, 0]))
    det = x00 * x11 - np.abs(x01) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        tr_inv = np.where(det > 0, (x00 + x11) / det, np.inf)
    tr_inv = np.where(served >= gamma * noise, tr_inv, np.inf)
    return float(np.min(tr_inv))


def enumerate_received_power(template_shape, bits, received_power):
    """Re-enumeration oracle: returns (best value, best level indices) counting in base 2**bits."""
    L, n = template_shape
    levels = 2 ** bits
    total = levels ** (L * n)
    best_val, best_idx = -math.inf, None
    for counter in range(total):
        digits = []
        c = counter
        for _ in range(L * n):
            digits.append(c % levels)
            c //= levels
        digits = digits[::-1]  # most significant first
        angles = np.array(digits, dtype=float).reshape(L, n) * (2 * math.pi / levels)
        val = received_power(angles)
        if val > best_val:
            best_val, best_idx = val, digits
    return best_val, best_idx


# ---------------------------------------------------------------- KKT

@dataclass(frozen=True)
class KktReport:
    primal: float
    dual: float
    complementarity: float
    tol: float = 1e-6

    @property
    def passed(self) -> bool:
        return max(self.primal, self.dual, self.complementarity) <= self.tol


def _re_inner(a, b) -> float:
    return float(np.real(np.sum(np.conj(a) * b)))


def _min_eig(a) -> float:
    a = np.asarray(a, dtype=complex)
    return float(np.linalg.eigvalsh(0.5 * (a + a.conj().T))[0])


def kkt_check(problem, solution, tol: float = 1e-6) -> KktReport:
    """Recompute primal, dual and complementarity residuals from the Hermitian problem data.

    Uses only the problem statement and the solution's primal values and
    multipliers (see ``conic`` module docstring for the multiplier convention).
    """
    X = {k: np.asarray(v, dtype=complex) for k, v in solution.values.items()}
    dims = {v.name: v.dim for v in problem.variables}
    sign = 1.0 if problem.sense == "min" else -1.0
    lam = np.asarray(solution.linear_duals, dtype=float)

    primal, comp, dual = 0.0, 0.0, 0.0
    objective = sum(_re_inner(c, X[name]) for name, c in problem.objective.items())

    residual = {name: sign * np.asarray(problem.objective.get(name, np.zeros((d, d))), dtype=complex)
                for name, d in dims.items()}

    for i, con in enumerate(problem.constraints):
        val = sum(np.real(np.trace(np.asarray(c) @ X[name])) for name, c in con.coeffs.items())
        diff = val - con.rhs
        scale = 1.0 + abs(con.rhs)
        if con.sense == "==":
            primal = max(primal, abs(diff) / scale)
        elif con.sense == ">=":
            primal = max(primal, max(0.0, -diff) / scale)
            dual = max(dual, max(0.0, -lam[i]))
        else:
            primal = max(primal, max(0.0, diff) / scale)
            dual = max(dual, max(0.0, lam[i]))
        if con.sense != "==":
            comp += abs(lam[i] * diff)
        for name, c in con.coeffs.items():
            residual[name] = residual[name] - lam[i] * np.asarray(c)

    for j, lmi in enumerate(problem.lmis):
        S = lmi.const().copy()
        for name, e in lmi.terms:
            e = np.asarray(e, dtype=complex)
            S = S + e @ X[name] @ e.conj().T
        Z = solution.lmi_duals[j]
        primal = max(primal, max(0.0, -_min_eig(S)) / (1.0 + np.linalg.norm(S)))
        dual = max(dual, max(0.0, -_min_eig(Z)) / (1.0 + np.linalg.norm(Z)))
        comp += abs(_re_inner(Z, S))
        for name, e in lmi.terms:
            e = np.asarray(e, dtype=complex)
            residual[name] = residual[name] - e.conj().T @ Z @ e

    for name, x in X.items():
        Z = solution.var_duals[name]
        primal = max(primal, max(0.0, -_min_eig(x)) / (1.0 + np.linalg.norm(x)))
        dual = max(dual, max(0.0, -_min_eig(Z)) / (1.0 + np.linalg.norm(Z)))
        comp += abs(_re_inner(Z, x))
        residual[name] = residual[name] - Z

    cnorm = math.sqrt(sum(np.linalg.norm(c) ** 2 for c in problem.objective.values()))
    stationarity = math.sqrt(sum(np.linalg.norm(r) ** 2 for r in residual.values())) / (1.0 + cnorm)
    return KktReport(primal, max(dual, stationarity), comp / (1.0 + abs(objective)), tol)
