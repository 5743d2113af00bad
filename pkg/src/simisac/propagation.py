"""SIM geometry, inter-layer diffraction and the end-to-end cascade.

Layers are parallel planes stacked along the propagation axis. Each layer holds
``N`` meta-atoms on a uniform rows x cols grid (square whenever N is a perfect
square, otherwise the most nearly square factorisation) and all layers share the
same transverse coordinates, so only the layer spacing enters the diffraction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_CARRIER_HZ = 5.8e9


@dataclass(frozen=True)
class SimGeometry:
    layers: int
    atoms_per_layer: int
    wavelength: float
    atom_pitch: float
    atom_area: float
    thickness: float

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if self.atoms_per_layer < 1:
            raise ValueError(f"atoms_per_layer must be positive, got {self.atoms_per_layer}")
        for name in ("wavelength", "atom_pitch", "atom_area"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.layers >= 2 and not self.thickness > 0:
            raise ValueError("thickness must be positive for a multi-layer SIM")

    @classmethod
    def default(cls, layers: int, atoms_per_layer: int = 4, carrier_hz: float = DEFAULT_CARRIER_HZ,
                thickness_wavelengths: float = 3.0, pitch_wavelengths: float = 0.5) -> "SimGeometry":
        """Half-wavelength grid, square atoms filling their cell, thickness in wavelengths."""
        lam = SPEED_OF_LIGHT / carrier_hz
        pitch = pitch_wavelengths * lam
        return cls(layers=layers, atoms_per_layer=atoms_per_layer, wavelength=lam, atom_pitch=pitch,
                   atom_area=pitch * pitch, thickness=thickness_wavelengths * lam)

    @property
    def grid_shape(self) -> tuple[int, int]:
        """(rows, cols) with rows * cols = N, rows <= cols, as close to square as N allows."""
        n = self.atoms_per_layer
        cols = next(c for c in range(math.isqrt(n), n + 1) if n % c == 0 and c * c >= n)
        return n // cols, cols

    @property
    def layer_spacing(self) -> float:
        # undefined for a single layer; callers never need it there
        if self.layers < 2:
            return float("nan")
        return self.thickness / (self.layers - 1)

    def atom_positions(self) -> np.ndarray:
        """Transverse (x, y) atom coordinates, shape (N, 2), centred on the layer axis.

        Atom n sits at row n // cols, column n % cols.
        """
        nr, nc = self.grid_shape
        xs = (np.arange(nc) - (nc - 1) / 2.0) * self.atom_pitch
        ys = (np.arange(nr) - (nr - 1) / 2.0) * self.atom_pitch
        rows, cols = np.divmod(np.arange(self.atoms_per_layer), nc)
        return np.column_stack([xs[cols], ys[rows]])


@dataclass(frozen=True)
class PhaseStack:
    """Per-layer phase profiles psi[l, n] in [0, 2*pi).

    Phases are the stored representation, so every coefficient exp(j*psi) has unit
    modulus by construction.
    """
    angles: np.ndarray

    def __post_init__(self):
        a = np.array(self.angles, dtype=float, copy=True)
        if a.ndim != 2:
            raise ValueError(f"angles must be 2-D (layers, atoms), got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("angles must be finite")
        a = np.mod(a, 2 * np.pi)
        a[a >= 2 * np.pi] = 0.0
        a.setflags(write=False)
        object.__setattr__(self, "angles", a)

    @classmethod
    def zeros(cls, layers: int, atoms: int) -> "PhaseStack":
        return cls(np.zeros((layers, atoms)))

    @classmethod
    def random(cls, layers: int, atoms: int, rng: np.random.Generator) -> "PhaseStack":
        return cls(rng.uniform(0.0, 2 * np.pi, size=(layers, atoms)))

    @property
    def layers(self) -> int:
        return self.angles.shape[0]

    @property
    def atoms(self) -> int:
        return self.angles.shape[1]

    def coefficients(self, layer: int | None = None) -> np.ndarray:
        """Complex transmission coefficients; ``layer`` is 1-based."""
        if layer is None:
            return np.exp(1j * self.angles)
        return np.exp(1j * self.angles[layer - 1])

    def phase_matrix(self, layer: int) -> np.ndarray:
        return np.diag(self.coefficients(layer))

    def with_layer(self, layer: int, angles: np.ndarray) -> "PhaseStack":
        a = self.angles.copy()
        a[layer - 1] = angles
        return PhaseStack(a)


def _coefficient(r, cos_chi, wavelength, area):
    return (area * cos_chi / r) * (1.0 / (2 * np.pi * r) - 1j / wavelength) * np.exp(2j * np.pi * r / wavelength)


def diffraction_coefficient(geom: SimGeometry, source_index: int, dest_index: int) -> complex:
    """Rayleigh-Sommerfeld transmission coefficient between atoms of adjacent layers.

    Indices are 1-based. ``source_index`` lives on layer l, ``dest_index`` on l + 1.
    """
    if geom.layers < 2:
        raise ValueError("diffraction needs at least two layers")
    n = geom.atoms_per_layer
    if not (1 <= source_index <= n and 1 <= dest_index <= n):
        raise IndexError(f"atom indices must lie in 1..{n}")
    pos = geom.atom_positions()
    d = geom.layer_spacing
    delta = pos[dest_index - 1] - pos[source_index - 1]
    r = math.sqrt(float(delta @ delta) + d * d)
    if r == 0.0:
        raise ValueError("degenerate geometry: zero propagation distance")
    return complex(_coefficient(r, d / r, geom.wavelength, geom.atom_area))


def diffraction_matrix(geom: SimGeometry, layer: int) -> np.ndarray:
    """Omega_l mapping layer ``layer`` to layer ``layer + 1`` (entry [dest, source])."""
    if not 1 <= layer <= geom.layers - 1:
        raise ValueError(f"layer must be in 1..{geom.layers - 1}, got {layer}")
    pos = geom.atom_positions()
    d = geom.layer_spacing
    delta = pos[:, None, :] - pos[None, :, :]
    r = np.sqrt(np.sum(delta * delta, axis=-1) + d * d)
    if np.any(r == 0.0):
        raise ValueError("degenerate geometry: zero propagation distance")
    return _coefficient(r, d / r, geom.wavelength, geom.atom_area)


def diffraction_set(geom: SimGeometry) -> tuple[np.ndarray, ...]:
    """All L - 1 diffraction matrices (empty for a single layer)."""
    return tuple(diffraction_matrix(geom, l) for l in range(1, geom.layers))


def _check_dims(stack: PhaseStack, omegas: Sequence[np.ndarray]):
    if len(omegas) != stack.layers - 1:
        raise ValueError(f"stack has {stack.layers} layers but {len(omegas)} diffraction matrices were given")
    for om in omegas:
        if om.shape != (stack.atoms, stack.atoms):
            raise ValueError(f"diffraction matrix shape {om.shape} does not match {stack.atoms} atoms")


def end_to_end_matrix(stack: PhaseStack, omegas: Sequence[np.ndarray]) -> np.ndarray:
    """P = Phi_L Omega_{L-1} Phi_{L-1} ... Omega_1 Phi_1."""
    _check_dims(stack, omegas)
    coeffs = stack.coefficients()
    p = np.diag(coeffs[0]).astype(complex)
    for l in range(1, stack.layers):
        p = coeffs[l][:, None] * (omegas[l - 1] @ p)
    return p


def cascade_split(stack: PhaseStack, omegas: Sequence[np.ndarray], layer: int) -> tuple[np.ndarray, np.ndarray]:
    """Prefix A_l and suffix B_l around layer ``layer`` so that P = B_l Phi_l A_l."""
    _check_dims(stack, omegas)
    if not 1 <= layer <= stack.layers:
        raise ValueError(f"layer must be in 1..{stack.layers}, got {layer}")
    n = stack.atoms
    coeffs = stack.coefficients()
    a = np.eye(n, dtype=complex)
    for l in range(1, layer):
        a = omegas[l - 1] @ (coeffs[l - 1][:, None] * a)
    b = np.eye(n, dtype=complex)
    for l in range(layer + 1, stack.layers + 1):
        b = coeffs[l - 1][:, None] * (omegas[l - 2] @ b)
    return a, b


def quantize_profile(stack: PhaseStack, bits: int) -> PhaseStack:
    """Snap every phase to the nearest of 2**bits uniform levels (ties go to the lower level)."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    levels = 2 ** bits
    step = 2 * np.pi / levels
    # position measured in steps; exact halves round down
    pos = stack.angles / step
    k = np.ceil(pos - 0.5).astype(np.int64)
    # a tie between the top level and 2*pi resolves to level 0, the smaller codepoint
    lower = np.floor(pos)
    k[(pos - lower == 0.5) & (lower == levels - 1)] = 0
    return PhaseStack((k % levels) * step)
