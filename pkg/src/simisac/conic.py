"""Hermitian semidefinite programs solved through a real conic backend.

A :class:`ConicProblem` is stated over Hermitian matrix variables. Every variable
is constrained PSD. Constraints are scalar (in)equalities ``Re tr(C X) ? b`` and
linear matrix inequalities ``F0 + sum E_t X_t E_t^H >= 0``. The problem is
compiled to real coordinates (n**2 per n x n variable) and handed to cvxopt's
``conelp``, with each complex cone replaced by its real 2n x 2n embedding.

Dual variables are returned in Hermitian form under the convention (min form)

    C = sum_i lam_i A_i + sum_j E_j^H Z_j E_j + sum_v Z_v

with ``lam_i >= 0`` for ``>=`` rows, ``lam_i <= 0`` for ``<=`` rows and free
multipliers for equalities.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"

RESIDUAL_TOL = 1e-7
DEFAULT_MAX_ITER = 200
SOLVER_TOLERANCES = (1e-9, 1e-8, 1e-7)


class ConicError(RuntimeError):
    pass


@dataclass(frozen=True)
class HermitianVar:
    name: str
    dim: int
    role: str = ""


@dataclass
class AffineHermitian:
    """``constant + sum_t E_t X_{v_t} E_t^H`` of size ``size``."""
    size: int
    terms: list[tuple[str, np.ndarray]] = field(default_factory=list)
    constant: np.ndarray | None = None
    label: str = ""

    def const(self) -> np.ndarray:
        if self.constant is None:
            return np.zeros((self.size, self.size), dtype=complex)
        return np.asarray(self.constant, dtype=complex)


@dataclass
class LinearConstraint:
    coeffs: dict[str, np.ndarray]
    sense: str
    rhs: float
    label: str = ""

    def __post_init__(self):
        if self.sense not in ("==", ">=", "<="):
            raise ValueError(f"unknown constraint sense {self.sense!r}")


@dataclass
class ConicProblem:
    variables: list[HermitianVar] = field(default_factory=list)
    objective: dict[str, np.ndarray] = field(default_factory=dict)
    constraints: list[LinearConstraint] = field(default_factory=list)
    lmis: list[AffineHermitian] = field(default_factory=list)
    sense: str = "min"

    def add_var(self, name: str, dim: int, role: str = "") -> HermitianVar:
        if any(v.name == name for v in self.variables):
            raise ValueError(f"duplicate variable {name!r}")
        var = HermitianVar(name, dim, role)
        self.variables.append(var)
        return var

    def add_constraint(self, coeffs, sense, rhs, label=""):
        self.constraints.append(LinearConstraint(dict(coeffs), sense, float(rhs), label))

    def add_lmi(self, expr: AffineHermitian):
        self.lmis.append(expr)

    def add_objective(self, terms: dict[str, np.ndarray]):
        for name, c in terms.items():
            self.objective[name] = self.objective.get(name, 0) + np.asarray(c, dtype=complex)

    def var(self, name: str) -> HermitianVar:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def validate(self):
        names = {v.name: v.dim for v in self.variables}
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")

        def check_coeff(name, c, where):
            if name not in names:
                raise ValueError(f"{where}: unknown variable {name!r}")
            c = np.asarray(c)
            if c.shape != (names[name], names[name]):
                raise ValueError(f"{where}: coefficient for {name!r} has shape {c.shape}")
            if np.linalg.norm(c - c.conj().T) > 1e-12 * max(1.0, np.linalg.norm(c)):
                raise ValueError(f"{where}: coefficient for {name!r} is not Hermitian")

        for name, c in self.objective.items():
            check_coeff(name, c, "objective")
        for con in self.constraints:
            for name, c in con.coeffs.items():
                check_coeff(name, c, f"constraint {con.label!r}")
        for lmi in self.lmis:
            for name, e in lmi.terms:
                if name not in names or np.shape(e) != (lmi.size, names[name]):
                    raise ValueError(f"LMI {lmi.label!r}: bad term for {name!r}")
            f0 = lmi.const()
            if f0.shape != (lmi.size, lmi.size) or np.linalg.norm(f0 - f0.conj().T) > 1e-12 * max(1.0, np.linalg.norm(f0)):
                raise ValueError(f"LMI {lmi.label!r}: constant must be Hermitian of size {lmi.size}")


@dataclass
class ConicSolution:
    values: dict[str, np.ndarray]
    objective: float
    status: str
    residuals: dict[str, float]
    linear_duals: np.ndarray | None = None
    lmi_duals: list[np.ndarray] | None = None
    var_duals: dict[str, np.ndarray] | None = None
    reason: str = ""
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


# ---------------------------------------------------------------- embedding

def embed_hermitian(h: np.ndarray) -> np.ndarray:
    """[[Re H, -Im H], [Im H, Re H]]."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("expected a square matrix")
    if np.linalg.norm(h - h.conj().T) > 1e-10 * max(1.0, np.linalg.norm(h)):
        raise ValueError("matrix is not Hermitian")
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


def extract_hermitian(s: np.ndarray) -> np.ndarray:
    """Hermitian matrix whose embedding is closest to ``s``; exact inverse of the embedding."""
    n = s.shape[0] // 2
    a, b, c, d = s[:n, :n], s[:n, n:], s[n:, :n], s[n:, n:]
    return 0.5 * (a + d) + 0.5j * (c - b)


@lru_cache(maxsize=None)
def _basis(n: int) -> np.ndarray:
    """Columns are row-major vec(B_p) for the real coordinates of an n x n Hermitian matrix."""
    cols = []
    for i in range(n):
        b = np.zeros((n, n), dtype=complex)
        b[i, i] = 1
        cols.append(b.ravel())
    for i in range(n):
        for j in range(i + 1, n):
            b = np.zeros((n, n), dtype=complex)
            b[i, j] = b[j, i] = 1
            cols.append(b.ravel())
            b = np.zeros((n, n), dtype=complex)
            b[i, j], b[j, i] = 1j, -1j
            cols.append(b.ravel())
    out = np.column_stack(cols)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _embed_index(m: int):
    a, b = np.meshgrid(np.arange(2 * m), np.arange(2 * m), indexing="ij")
    idx = ((a % m) * m + (b % m)).ravel()
    block = ((a // m) * 2 + (b // m)).ravel()
    use_imag = (block == 1) | (block == 2)
    sign = np.where(block == 1, -1.0, 1.0)
    return idx, use_imag, sign


def _embed_rows(vec_complex: np.ndarray, m: int) -> np.ndarray:
    """Row-major vec of embed(S) given rows of row-major vec(S) (works column-wise)."""
    idx, use_imag, sign = _embed_index(m)
    picked = vec_complex[idx]
    out = np.where(use_imag[:, None] if picked.ndim == 2 else use_imag, picked.imag, picked.real)
    return (sign[:, None] if picked.ndim == 2 else sign) * out


# ---------------------------------------------------------------- compilation

@dataclass
class CompiledProblem:
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A: np.ndarray
    b: np.ndarray
    dims: dict
    offsets: dict[str, int]
    # row layout of the 'l' block: ("con", i, sign) or ("var", name)
    l_rows: list
    s_cones: list  # ("lmi", j) or ("var", name)
    eq_rows: list[int]
    objective_sign: float


def _coord_count(var: HermitianVar) -> int:
    return var.dim * var.dim


def _linear_row(problem, offsets, coeffs) -> np.ndarray:
    row = np.zeros(sum(_coord_count(v) for v in problem.variables))
    for name, c in coeffs.items():
        var = problem.var(name)
        t = _basis(var.dim)
        o = offsets[name]
        row[o:o + _coord_count(var)] += np.real(np.asarray(c, dtype=complex).T.ravel() @ t)
    return row


def compile_problem(problem: ConicProblem) -> CompiledProblem:
    problem.validate()
    offsets, n = {}, 0
    for v in problem.variables:
        offsets[v.name] = n
        n += _coord_count(v)
    sign = 1.0 if problem.sense == "min" else -1.0
    c = sign * _linear_row(problem, offsets, problem.objective)

    l_rows, g_l, h_l = [], [], []
    a_rows, b_rows, eq_rows = [], [], []
    for i, con in enumerate(problem.constraints):
        row = _linear_row(problem, offsets, con.coeffs)
        if con.sense == "==":
            a_rows.append(row)
            b_rows.append(con.rhs)
            eq_rows.append(i)
        elif con.sense == ">=":
            g_l.append(-row)
            h_l.append(-con.rhs)
            l_rows.append(("con", i, 1.0))
        else:
            g_l.append(row)
            h_l.append(con.rhs)
            l_rows.append(("con", i, -1.0))
    for v in problem.variables:
        if v.dim == 1:
            row = np.zeros(n)
            row[offsets[v.name]] = -1.0
            g_l.append(row)
            h_l.append(0.0)
            l_rows.append(("var", v.name))

    g_s, h_s, s_cones, sizes = [], [], [], []

    def add_cone(expr: AffineHermitian, tag):
        m = expr.size
        block = np.zeros((4 * m * m, n))
        for name, e in expr.terms:
            var = problem.var(name)
            e = np.asarray(e, dtype=complex)
            mapped = np.kron(e, e.conj()) @ _basis(var.dim)
            o = offsets[name]
            block[:, o:o + _coord_count(var)] -= _embed_rows(mapped, m)
        g_s.append(block)
        h_s.append(_embed_rows(expr.const().ravel(), m))
        s_cones.append(tag)
        sizes.append(2 * m)

    for j, lmi in enumerate(problem.lmis):
        add_cone(lmi, ("lmi", j))
    for v in problem.variables:
        if v.dim > 1:
            add_cone(AffineHermitian(v.dim, [(v.name, np.eye(v.dim))]), ("var", v.name))

    G = np.vstack([np.array(g_l).reshape(-1, n)] + g_s)
    h = np.concatenate([np.array(h_l, dtype=float)] + h_s)
    A = np.array(a_rows).reshape(-1, n)
    b = np.array(b_rows, dtype=float)
    dims = {"l": len(g_l), "q": [], "s": sizes}
    return CompiledProblem(c, G, h, A, b, dims, offsets, l_rows, s_cones, eq_rows, sign)


def _values_from_x(problem, cp: CompiledProblem, x):
    vals = {}
    for v in problem.variables:
        o = cp.offsets[v.name]
        vals[v.name] = (_basis(v.dim) @ x[o:o + _coord_count(v)]).reshape(v.dim, v.dim)
    return vals


def _unpack_duals(problem, cp: CompiledProblem, z, y):
    lam = np.zeros(len(problem.constraints))
    var_duals = {}
    nl = cp.dims["l"]
    for r, tag in enumerate(cp.l_rows):
        if tag[0] == "con":
            lam[tag[1]] = tag[2] * z[r]
        else:
            var_duals[tag[1]] = np.array([[z[r]]], dtype=complex)
    for r, i in enumerate(cp.eq_rows):
        lam[i] = -y[r]
    lmi_duals = [None] * len(problem.lmis)
    pos = nl
    for size, tag in zip(cp.dims["s"], cp.s_cones):
        zr = z[pos:pos + size * size].reshape(size, size)
        pos += size * size
        zh = 2.0 * extract_hermitian(0.5 * (zr + zr.T))
        if tag[0] == "lmi":
            lmi_duals[tag[1]] = zh
        else:
            var_duals[tag[1]] = zh
    return lam, lmi_duals, var_duals


# ---------------------------------------------------------------- solving

def solve_conic(problem: ConicProblem, *, max_iter: int = DEFAULT_MAX_ITER,
                tol: float = RESIDUAL_TOL) -> ConicSolution:
    """Solve ``problem``; status is optimal only when all relative residuals are <= ``tol``."""
    from cvxopt import matrix, solvers

    cp = compile_problem(problem)
    args = dict(c=matrix(cp.c), G=matrix(cp.G), h=matrix(cp.h), dims=cp.dims)
    if len(cp.b):
        args.update(A=matrix(cp.A), b=matrix(cp.b))
    best = None
    # conelp can break down when pushed past what the data supports; back off
    for stop in SOLVER_TOLERANCES:
        opts = {"show_progress": False, "maxiters": max_iter, "abstol": stop, "reltol": stop,
                "feastol": stop, "refinement": 2}
        try:
            res = solvers.conelp(options=opts, **args)
        except (ArithmeticError, ValueError) as exc:
            log.debug("conelp raised %s at tolerance %g", exc, stop)
            continue
        out = _finish(problem, cp, res, tol)
        if out.status != NUMERICAL_FAILURE:
            return out
        best = best or out
    return best or ConicSolution({}, np.nan, NUMERICAL_FAILURE, {}, reason="solver breakdown at every tolerance")


def _finish(problem: ConicProblem, cp: CompiledProblem, res: dict, tol: float) -> ConicSolution:
    status = res["status"]
    if status == "primal infeasible":
        return ConicSolution({}, np.nan, INFEASIBLE, {}, reason="primal infeasibility certificate",
                             iterations=res.get("iterations", 0))
    if status == "dual infeasible":
        return ConicSolution({}, np.nan, NUMERICAL_FAILURE, {}, reason="problem is unbounded",
                             iterations=res.get("iterations", 0))
    if res["x"] is None:
        return ConicSolution({}, np.nan, NUMERICAL_FAILURE, {}, reason=f"solver status {status}")

    x = np.array(res["x"]).ravel()
    s = np.array(res["s"]).ravel()
    z = np.array(res["z"]).ravel()
    y = np.array(res["y"]).ravel() if len(cp.b) else np.zeros(0)

    pres = np.linalg.norm(cp.G @ x + s - cp.h)
    if len(cp.b):
        pres = max(pres, np.linalg.norm(cp.A @ x - cp.b))
    primal = pres / (1.0 + max(np.linalg.norm(cp.h), np.linalg.norm(cp.b) if len(cp.b) else 0.0))
    dres = cp.c + cp.G.T @ z + (cp.A.T @ y if len(cp.b) else 0.0)
    dual = np.linalg.norm(dres) / (1.0 + np.linalg.norm(cp.c))
    pobj = float(cp.c @ x)
    gap = abs(float(s @ z)) / (1.0 + abs(pobj))
    residuals = {"primal": float(primal), "dual": float(dual), "gap": float(gap)}

    values = _values_from_x(problem, cp, x)
    lam, lmi_duals, var_duals = _unpack_duals(problem, cp, z, y)
    ok = max(residuals.values()) <= tol
    out = ConicSolution(values, cp.objective_sign * pobj, OPTIMAL if ok else NUMERICAL_FAILURE, residuals,
                        lam, lmi_duals, var_duals, reason="" if ok else f"residuals above {tol:g} ({status})",
                        iterations=res.get("iterations", 0))
    if not ok:
        log.debug("conic solve not certified: %s %s", status, residuals)
    return out


# ---------------------------------------------------------------- helpers

def trace_inverse_epigraph(x_expr: AffineHermitian, name: str = "Y", weight: np.ndarray | None = None):
    """Epigraph of tr(D X^{-1}): returns (Y, LMI [[X, I], [I, Y]] >= 0, objective term tr(D Y)).

    ``weight`` D defaults to the identity; it must be Hermitian PSD.
    """
    n = x_expr.size
    y = HermitianVar(name, n, role="epigraph")
    top = np.vstack([np.eye(n), np.zeros((n, n))])
    terms = [(v, top @ np.asarray(e)) for v, e in x_expr.terms]
    terms.append((name, np.vstack([np.zeros((n, n)), np.eye(n)])))
    const = np.zeros((2 * n, 2 * n), dtype=complex)
    const[:n, :n] = x_expr.const()
    const[:n, n:] = np.eye(n)
    const[n:, :n] = np.eye(n)
    lmi = AffineHermitian(2 * n, terms, const, label=f"epigraph[{name}]")
    return y, lmi, {name: np.eye(n) if weight is None else np.asarray(weight, dtype=complex)}


def add_trace_inverse_objective(problem: ConicProblem, x_expr: AffineHermitian, name: str = "Y",
                                weight: np.ndarray | None = None) -> HermitianVar:
    y, lmi, obj = trace_inverse_epigraph(x_expr, name, weight)
    problem.variables.append(y)
    problem.add_lmi(lmi)
    problem.add_objective(obj)
    return y


def _write_matrix(fh, label, a):
    a = np.atleast_2d(a)
    fh.write(f"{label} {a.shape[0]} {a.shape[1]}\n")
    for row in a:
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def dump_problem(problem: ConicProblem, path) -> Path:
    """Write the compiled real problem as plain text.

    Layout: ``dims l <n> s <sizes...>`` then the blocks ``c``, ``G``, ``h``, ``A``,
    ``b``, each as ``<name> <rows> <cols>`` followed by that many dense rows.
    Cones follow cvxopt conventions: ``G x + s = h``, ``A x = b``, ``s`` in the cone,
    semidefinite blocks stored as full column-major matrices.
    """
    cp = compile_problem(problem)
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"sense {problem.sense}\n")
        fh.write(f"dims l {cp.dims['l']} s {' '.join(map(str, cp.dims['s']))}\n")
        _write_matrix(fh, "c", cp.c[None, :])
        _write_matrix(fh, "G", cp.G)
        _write_matrix(fh, "h", cp.h[None, :])
        _write_matrix(fh, "A", cp.A if cp.A.size else np.zeros((0, len(cp.c))))
        _write_matrix(fh, "b", cp.b[None, :] if cp.b.size else np.zeros((1, 0)))
    return path
