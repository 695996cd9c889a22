"""Reciprocal-lattice geometry, beam kinematics and relativistic conversions.

Units are fixed throughout the package: lengths in nm, wave vectors in
nm^-1, potentials in nm^-2, acceleration voltages in kV.  The surface
normal is always the last coordinate axis.

Dual-lattice points are addressed by integer index tuples ``n`` with
respect to the frame's dual basis, ``g = n @ basis``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import constants as C
from .errors import DomainError, ValidationError

Index = tuple[int, ...]


@dataclass(frozen=True, eq=False)
class LatticeFrame:
    """Dual lattice spanned by the rows of ``basis`` (nm^-1).

    ``a_ref`` is the reference length (nm) used to make asymptotic error
    terms dimensionless; by default the primal lattice constant.
    """

    basis: np.ndarray
    a_ref: float

    def __post_init__(self):
        basis = np.array(self.basis, dtype=float)
        if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
            raise ValidationError("dual basis must be a square d x d array")
        if basis.shape[0] not in (1, 2, 3):
            raise ValidationError(f"dimension must be 1, 2 or 3, got {basis.shape[0]}")
        if not np.all(np.isfinite(basis)):
            raise ValidationError("dual basis has non-finite entries")
        if abs(np.linalg.det(basis)) <= 1e-12 * np.prod(np.linalg.norm(basis, axis=1)):
            raise ValidationError("dual basis vectors are linearly dependent")
        if not self.a_ref > 0:
            raise ValidationError("reference length a_ref must be positive")
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def cubic(cls, dimension: int, a0: float, step: int = 1, a_ref: float | None = None):
        """Simple (hyper)cubic dual lattice with spacing ``step / a0``."""
        if not a0 > 0:
            raise ValidationError("lattice constant a0 must be positive")
        if step < 1:
            raise ValidationError("sublattice step must be a positive integer")
        basis = (step / a0) * np.eye(dimension)
        return cls(basis, a0 if a_ref is None else a_ref)

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    @property
    def normal(self) -> np.ndarray:
        nu = np.zeros(self.dimension)
        nu[-1] = 1.0
        return nu

    @cached_property
    def covolume(self) -> float:
        return abs(float(np.linalg.det(self.basis)))

    @cached_property
    def _inverse(self) -> np.ndarray:
        return np.linalg.inv(self.basis)

    @cached_property
    def kappa_star(self) -> float:
        """Minimal distance between distinct dual-lattice points (nm^-1)."""
        # the shortest vector is no longer than the shortest basis vector
        r = float(np.min(np.linalg.norm(self.basis, axis=1)))
        idx = lattice_indices_in_ball(self, r)
        norms = np.linalg.norm(idx @ self.basis, axis=1)
        return float(np.min(norms[norms > 0]))

    def vector(self, index: Sequence[int]) -> np.ndarray:
        return np.asarray(index, dtype=float) @ self.basis

    def vectors(self, indices) -> np.ndarray:
        arr = np.asarray(indices, dtype=float).reshape(-1, self.dimension)
        return arr @ self.basis

    def index_bounds(self, radius: float) -> np.ndarray:
        """Largest |n_i| any point with |g| <= radius can have."""
        col_norms = np.linalg.norm(self._inverse, axis=0)
        return np.floor(radius * col_norms * (1 + 1e-12) + 1e-12).astype(int)


@dataclass(frozen=True, eq=False)
class WaveVector:
    """Incoming wave vector k0 (nm^-1); must enter the specimen, k0 . nu > 0."""

    components: np.ndarray

    def __post_init__(self):
        k = np.array(self.components, dtype=float).reshape(-1)
        if k.size not in (1, 2, 3) or not np.all(np.isfinite(k)):
            raise ValidationError("k0 must be a finite vector of dimension 1-3")
        if not k[-1] > 0:
            raise ValidationError(f"k0 . nu must be positive, got {k[-1]!r}")
        k.setflags(write=False)
        object.__setattr__(self, "components", k)

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.components))

    @property
    def rho0(self) -> float:
        return float(self.components[-1])

    @property
    def dimension(self) -> int:
        return self.components.size

    @classmethod
    def from_voltage(cls, E_kV: float, inplane: Sequence[float] = ()):
        """k0 with prescribed in-plane components and |k0| set by the voltage."""
        k = relativistic_params(E_kV).k0
        inplane = np.asarray(inplane, dtype=float)
        kz2 = k * k - float(inplane @ inplane)
        if kz2 <= 0:
            raise ValidationError("in-plane components exceed |k0|")
        return cls(np.append(inplane, math.sqrt(kz2)))


@dataclass(frozen=True)
class BeamGeometry:
    """Derived kinematic quantities of one beam g for a given k0.

    ``s`` is None (and ``s_defined`` False) when rho_g == 0.
    """

    index: Index
    g: np.ndarray
    rho: float
    sigma: float
    s: float | None
    ewald_dist: float

    @property
    def s_defined(self) -> bool:
        return self.s is not None


@dataclass(frozen=True)
class RelativisticParams:
    E_kV: float
    wavelength_pm: float
    k0: float  # nm^-1
    gamma_rel: float
    beta: float


def relativistic_params(E_kV: float) -> RelativisticParams:
    """Relativistic electron wavelength and kinematic factors at voltage E (kV).

    Uses lambda = h / sqrt(2 m0 q E (1 + q E / (2 m0 c^2))) with the
    (non-reduced) Planck constant h.
    """
    if not E_kV > 0:
        raise DomainError(f"acceleration voltage must be positive, got {E_kV!r}")
    qE = C.ELEMENTARY_CHARGE * E_kV * 1e3  # J
    m0c2 = C.ELECTRON_MASS * C.SPEED_OF_LIGHT**2
    lam_m = C.PLANCK_H / math.sqrt(2 * C.ELECTRON_MASS * qE * (1 + qE / (2 * m0c2)))
    gamma = 1 + qE / m0c2
    # 1 - 1/gamma^2 written to avoid cancellation for small E
    x = qE / m0c2
    beta = math.sqrt(x * (2 + x)) / (1 + x)
    lam_nm = lam_m / C.M_PER_NM
    return RelativisticParams(
        E_kV=float(E_kV),
        wavelength_pm=lam_nm * C.PM_PER_NM,
        k0=1.0 / lam_nm,
        gamma_rel=gamma,
        beta=beta,
    )


def _sigma(g: np.ndarray, k0: np.ndarray) -> np.ndarray:
    return -np.sum(g * g, axis=-1) - 2.0 * (g @ k0)


def excitation_quantities(g: np.ndarray, k0: WaveVector):
    """Vectorised (rho, sigma, ewald_dist) for an (N, d) array of beams."""
    g = np.atleast_2d(np.asarray(g, dtype=float))
    k = k0.components
    rho = k[-1] + g[:, -1]
    sigma = _sigma(g, k)
    kg = np.linalg.norm(g + k, axis=1)
    # | |k0+g| - |k0| | = |sigma| / (|k0+g| + |k0|), exact zero when sigma == 0
    dist = np.abs(sigma) / (kg + k0.magnitude)
    return rho, sigma, dist


def beam_geometry(index: Sequence[int], k0: WaveVector, frame: LatticeFrame) -> BeamGeometry:
    if k0.dimension != frame.dimension:
        raise ValidationError("k0 and lattice frame have different dimensions")
    g = frame.vector(index)
    rho, sigma, dist = (float(v[0]) for v in excitation_quantities(g, k0))
    s = sigma / (2.0 * rho) if rho != 0 else None
    return BeamGeometry(tuple(int(i) for i in index), g, rho, sigma, s, dist)


def ewald_distance(g: Sequence[float], k0: WaveVector) -> float:
    """Unsigned distance of g to the Ewald sphere |k0 + g| = |k0|."""
    return float(excitation_quantities(np.asarray(g, dtype=float), k0)[2][0])


def lattice_indices_in_ball(frame: LatticeFrame, radius: float) -> np.ndarray:
    """All integer index vectors with |n @ basis| <= radius, lexicographic order."""
    if radius < 0:
        raise DomainError("radius must be non-negative")
    bounds = frame.index_bounds(radius)
    axes = [np.arange(-b, b + 1) for b in bounds]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, frame.dimension)
    norms = np.linalg.norm(grid @ frame.basis, axis=1)
    keep = norms <= radius * (1 + 1e-12)
    return grid[keep]  # meshgrid with ij indexing is already lexicographic


def dual_points(frame: LatticeFrame, M: float) -> list[Index]:
    """Dual-lattice points with |g| <= M as index tuples, lexicographic order."""
    if M < 0:
        raise DomainError("ball radius M must be non-negative")
    return [tuple(int(v) for v in row) for row in lattice_indices_in_ball(frame, M)]


def iter_box(ranges: Iterable[tuple[int, int]]) -> list[Index]:
    """Index tuples of an integer box, inclusive ranges, lexicographic order."""
    return [tuple(p) for p in itertools.product(*(range(lo, hi + 1) for lo, hi in ranges))]
