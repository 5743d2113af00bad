"""Monte-Carlo sweeps over SINR threshold and layer count, with CSV emission."""
from __future__ import annotations

import configparser
import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channels import Scenario, build_channels, db_to_linear, dbm_to_watts, linear_to_db
from .mao import MaoParams, mao_optimize
from .propagation import SPEED_OF_LIGHT, SimGeometry

log = logging.getLogger(__name__)

CSV_COLUMNS = ("seed", "L", "gamma_db", "crb", "crb_db", "min_sinr_margin_db", "power_w", "sweeps", "status",
               "wall_ms")
ERROR_STATUS = "error"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a sweep. Linear units throughout; dB is converted at parse time."""
    scenario: Scenario = field(default_factory=Scenario)
    atoms_per_layer: int = 4
    carrier_hz: float = 5.8e9
    thickness_wavelengths: float = 3.0
    pitch_wavelengths: float = 0.5
    gammas_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    layers: tuple[int, ...] = (1, 2, 3)
    seeds: tuple[int, ...] = tuple(range(20))
    mao: MaoParams = field(default_factory=MaoParams)
    csv_path: str = "results/sweep.csv"

    def __post_init__(self):
        for name in ("carrier_hz", "thickness_wavelengths", "pitch_wavelengths"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if self.atoms_per_layer < 1 or any(l < 1 for l in self.layers):
            raise ValueError("atoms_per_layer and every layer count must be >= 1")
        if any(not math.isfinite(g) for g in self.gammas_db):
            raise ValueError("SINR thresholds must be finite")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")

    def geometry(self, layers: int) -> SimGeometry:
        return SimGeometry.default(layers, self.atoms_per_layer, self.carrier_hz, self.thickness_wavelengths,
                                   self.pitch_wavelengths)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


# ---------------------------------------------------------------- config parsing

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _point(text: str) -> tuple[float, float, float]:
    p = _floats(text)
    if len(p) != 3:
        raise ValueError(f"expected three coordinates, got {text!r}")
    return p


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"20"`` means seeds 0..19; ``"3, 7, 11"`` lists them; ``"5-9"`` is an inclusive range."""
    text = text.strip()
    if "-" in text and "," not in text:
        lo, hi = (int(t) for t in text.split("-"))
        return tuple(range(lo, hi + 1))
    if "," in text:
        return tuple(int(t) for t in text.split(",") if t.strip())
    return tuple(range(int(text)))


def load_config(path) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not cp.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"config file not found: {path}")
    base = ExperimentConfig()
    sc = cp["scenario"] if cp.has_section("scenario") else {}
    sim = cp["sim"] if cp.has_section("sim") else {}
    sw = cp["sweep"] if cp.has_section("sweep") else {}
    mo = cp["mao"] if cp.has_section("mao") else {}
    out = cp["output"] if cp.has_section("output") else {}

    d = Scenario()
    users = tuple(_point(p) for p in sc["users"].split(";")) if "users" in sc else d.cu_positions
    radar = dbm_to_watts(float(sc["radar_noise_dbm"])) if "radar_noise_dbm" in sc else d.radar_noise
    user_noise = None
    if "user_noise_dbm" in sc:
        user_noise = (dbm_to_watts(float(sc["user_noise_dbm"])),) * len(users)
    scenario = Scenario(
        bs_position=_point(sc["bs_position"]) if "bs_position" in sc else d.bs_position,
        sim_position=_point(sc["sim_position"]) if "sim_position" in sc else d.sim_position,
        cu_positions=users,
        bs_antennas=int(sc.get("bs_antennas", d.bs_antennas)),
        p0=dbm_to_watts(float(sc["p0_dbm"])) if "p0_dbm" in sc else d.p0,
        user_noise=user_noise,
        radar_noise=radar,
        symbols=int(sc.get("symbols", d.symbols)),
        rician_factor=float(sc.get("rician_factor", d.rician_factor)),
        alpha_bs_sim=float(sc.get("alpha_bs_sim", d.alpha_bs_sim)),
        alpha_sim_cu=float(sc.get("alpha_sim_cu", d.alpha_sim_cu)),
        alpha_bs_cu=float(sc.get("alpha_bs_cu", d.alpha_bs_cu)),
        sinr_thresholds=(1.0,) * len(users),  # placeholder, set per cell
    )
    mao = MaoParams(
        max_sweeps=int(mo.get("max_sweeps", base.mao.max_sweeps)),
        rel_tol=float(mo.get("rel_tol", base.mao.rel_tol)),
        randomization_count=int(mo.get("randomization_count", base.mao.randomization_count)),
        init_retries=int(mo.get("init_retries", base.mao.init_retries)),
    )
    return ExperimentConfig(
        scenario=scenario,
        atoms_per_layer=int(sim.get("atoms_per_layer", base.atoms_per_layer)),
        carrier_hz=float(sim["carrier_ghz"]) * 1e9 if "carrier_ghz" in sim else base.carrier_hz,
        thickness_wavelengths=float(sim.get("thickness_wavelengths", base.thickness_wavelengths)),
        pitch_wavelengths=float(sim.get("pitch_wavelengths", base.pitch_wavelengths)),
        gammas_db=_floats(sw["gamma_db"]) if "gamma_db" in sw else base.gammas_db,
        layers=tuple(int(x) for x in _floats(sw["layers"])) if "layers" in sw else base.layers,
        seeds=parse_seeds(sw["seeds"]) if "seeds" in sw else base.seeds,
        mao=mao,
        csv_path=out.get("csv", base.csv_path),
    )


# ---------------------------------------------------------------- sweep

@dataclass(frozen=True)
class CellResult:
    seed: int
    layers: int
    gamma_db: float
    crb: float
    min_sinr_margin_db: float
    power_w: float
    sweeps: int
    status: str
    wall_ms: float | None = None
    message: str = ""
    best_crb: tuple[float, ...] = ()  # per-sweep trace, kept in memory only

    @property
    def crb_db(self) -> float:
        if math.isnan(self.crb):
            return math.nan
        return math.inf if math.isinf(self.crb) else linear_to_db(self.crb)

    @property
    def failed(self) -> bool:
        return self.status == ERROR_STATUS

    def sort_key(self):
        return (self.seed, self.layers, self.gamma_db)


def run_cell(config: ExperimentConfig, seed: int, layers: int, gamma_db: float, timing: bool = False) -> CellResult:
    """One MAO run. Exceptions become an ``error`` row so a sweep never aborts."""
    t0 = time.perf_counter()
    try:
        scenario = config.scenario.with_thresholds(db_to_linear(gamma_db))
        geom = config.geometry(layers)
        channels = build_channels(scenario, geom, seed)
        res = mao_optimize(scenario, geom, channels, replace(config.mao, seed=seed))
        if res.evaluation is None:
            margin_db, power = math.nan, math.nan
        else:
            margin_db = linear_to_db(1.0 + res.evaluation.min_margin)
            power = res.evaluation.power
        row = CellResult(seed, layers, gamma_db, float(res.crb), margin_db, power, res.sweeps, res.termination,
                         message=res.reason, best_crb=tuple(res.best_crb))
    except Exception as exc:  # noqa: BLE001 - recorded per cell by contract
        log.warning("cell seed=%d L=%d gamma=%g dB failed: %s", seed, layers, gamma_db, exc)
        row = CellResult(seed, layers, gamma_db, math.nan, math.nan, math.nan, 0, ERROR_STATUS,
                         message=f"{type(exc).__name__}: {exc}")
    if timing:
        row = replace(row, wall_ms=(time.perf_counter() - t0) * 1e3)
    return row


def _run_packed(args):
    return run_cell(*args)


@dataclass
class SweepTable:
    rows: list[CellResult]

    @property
    def failures(self) -> list[CellResult]:
        return [r for r in self.rows if r.failed]

    def medians(self) -> dict[tuple[int, float], float]:
        """Median final CRB over seeds for each (L, gamma_db); failed cells are left out."""
        groups: dict[tuple[int, float], list[float]] = {}
        for r in self.rows:
            if not r.failed:
                groups.setdefault((r.layers, r.gamma_db), []).append(r.crb)
        return {k: float(np.median(v)) for k, v in sorted(groups.items())}


def sweep_cells(config: ExperimentConfig):
    return [(s, l, g) for s in config.seeds for l in config.layers for g in config.gammas_db]


def run_sweep(config: ExperimentConfig, workers: int = 1, timing: bool = False, progress=None) -> SweepTable:
    cells = sweep_cells(config)
    jobs = [(config, s, l, g, timing) for s, l, g in cells]
    rows = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_packed, jobs, chunksize=1):
                rows.append(row)
                if progress:
                    progress(row)
    else:
        for job in jobs:
            rows.append(_run_packed(job))
            if progress:
                progress(rows[-1])
    rows.sort(key=CellResult.sort_key)
    return SweepTable(rows)


def plot_series(table: SweepTable) -> dict[int, list[tuple[float, float]]]:
    """Per layer count, (gamma_db, median CRB in dB) sorted by gamma."""
    series: dict[int, list[tuple[float, float]]] = {}
    for (layers, gamma), crb in table.medians().items():
        series.setdefault(layers, []).append((gamma, math.inf if math.isinf(crb) else linear_to_db(crb)))
    return series


# ---------------------------------------------------------------- waveform

def synthesize_sensing_waveform(r0: np.ndarray, symbols: int) -> np.ndarray:
    """X_0 (M x T) whose sample covariance (1/T) X_0 X_0^H equals ``r0``.

    X_0 = sqrt(T) R_0^{1/2} U where U holds the first M rows of the unitary T-point DFT.
    """
    r0 = np.asarray(r0, dtype=complex)
    m = r0.shape[0]
    if symbols < m:
        raise ValueError(f"T = {symbols} symbols cannot match an {m} x {m} sample covariance (need T >= M)")
    lam, vec = np.linalg.eigh(0.5 * (r0 + r0.conj().T))
    if lam.size and lam[0] < -1e-10 * max(abs(lam[-1]), np.finfo(float).tiny):
        raise ValueError("R_0 is not positive semidefinite")
    root = (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.conj().T
    t = np.arange(symbols)
    dft = np.exp(-2j * np.pi * np.outer(t[:m], t) / symbols) / np.sqrt(symbols)
    return np.sqrt(symbols) * root @ dft


# ---------------------------------------------------------------- emission

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def emit_csv(table: SweepTable, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in table.rows:
                w.writerow([_fmt(r.seed), _fmt(r.layers), _fmt(r.gamma_db), _fmt(r.crb), _fmt(r.crb_db),
                            _fmt(r.min_sinr_margin_db), _fmt(r.power_w), _fmt(r.sweeps), r.status, _fmt(r.wall_ms)])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_csv(path) -> SweepTable:
    rows = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(CellResult(int(rec["seed"]), int(rec["L"]), float(rec["gamma_db"]), float(rec["crb"]),
                                   float(rec["min_sinr_margin_db"]), float(rec["power_w"]), int(rec["sweeps"]),
                                   rec["status"], float(rec["wall_ms"]) if rec["wall_ms"] else None))
    return SweepTable(rows)


def emit_series(series: dict[int, list[tuple[float, float]]], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("L", "gamma_db", "median_crb_db"))
        for layers in sorted(series):
            for gamma, crb_db in series[layers]:
                w.writerow((layers, _fmt(gamma), _fmt(crb_db)))
    return path
