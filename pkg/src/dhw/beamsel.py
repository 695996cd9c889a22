"""Beam-set constructors: balls, gamma-truncated half spaces, Ewald shells,
LOLZ, systematic rows and the threshold recipe, plus admissibility checks.

Every constructor returns a BeamSet whose indices are in canonical order:
the origin first, then lexicographic integer indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .crystal import (
    Index,
    LatticeFrame,
    WaveVector,
    excitation_quantities,
    lattice_indices_in_ball,
)
from .errors import AdmissibilityError, DomainError, ValidationError
from .potential import FourierPotential

IN_PLANE_TOL = 1e-9


def canonical_order(indices: Iterable[Sequence[int]]) -> tuple[Index, ...]:
    items = sorted({tuple(int(i) for i in n) for n in indices})
    zero = (0,) * len(items[0]) if items else ()
    return tuple([zero] + [n for n in items if n != zero])


@dataclass(frozen=True, eq=False)
class BeamSet:
    """Finite admissible set of beams for a given incoming wave vector.

    ``gamma`` is the realised margin min rho_g / rho_0 (so 0 < gamma <= 1);
    ``descriptor`` records the rule and its parameters.
    """

    frame: LatticeFrame
    k0: WaveVector
    indices: tuple[Index, ...]
    descriptor: dict = field(default_factory=dict)
    gamma: float = field(init=False)

    def __post_init__(self):
        raw = [tuple(int(i) for i in n) for n in self.indices]
        if not raw:
            raise ValidationError("beam set is empty")
        if len(set(raw)) != len(raw):
            raise ValidationError("beam set contains duplicate indices")
        d = self.frame.dimension
        if self.k0.dimension != d or any(len(n) != d for n in raw):
            raise ValidationError("beam indices, k0 and frame must share one dimension")
        zero = (0,) * d
        if zero not in raw:
            raise ValidationError("beam set must contain the origin")
        ordered = canonical_order(raw)
        rho = self.rho_of(ordered)
        bad = [n for n, r in zip(ordered, rho) if not r > 0]
        if bad:
            raise AdmissibilityError(f"beams with rho_g <= 0 are not admissible: {bad[:5]}")
        object.__setattr__(self, "indices", ordered)
        object.__setattr__(self, "descriptor", dict(self.descriptor))
        object.__setattr__(self, "gamma", float(np.min(rho) / self.k0.rho0))

    def rho_of(self, indices) -> np.ndarray:
        return excitation_quantities(self.frame.vectors(indices), self.k0)[0]

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, index) -> bool:
        return tuple(index) in self._positions

    @property
    def _positions(self) -> dict[Index, int]:
        cache = self.__dict__.get("_pos")
        if cache is None:
            cache = {n: i for i, n in enumerate(self.indices)}
            object.__setattr__(self, "_pos", cache)
        return cache

    def position(self, index: Sequence[int]) -> int:
        try:
            return self._positions[tuple(index)]
        except KeyError:
            raise ValidationError(f"beam {tuple(index)} is not in the set") from None

    def positions(self, indices) -> np.ndarray:
        return np.array([self.position(n) for n in indices], dtype=int)

    def vectors(self) -> np.ndarray:
        return self.frame.vectors(self.indices)

    def geometry(self):
        """Arrays (rho, sigma, s, ewald_dist) in canonical order."""
        rho, sigma, dist = excitation_quantities(self.vectors(), self.k0)
        return rho, sigma, sigma / (2 * rho), dist

    def issubset(self, other: "BeamSet") -> bool:
        return all(n in other for n in self.indices)


def _from_indices(indices, k0: WaveVector, frame: LatticeFrame, descriptor: dict) -> BeamSet:
    return BeamSet(frame, k0, tuple(map(tuple, indices)), descriptor)


def g_ball(M: float, k0: WaveVector, frame: LatticeFrame) -> BeamSet:
    """All dual points with |g| <= M; every one must have rho_g > 0."""
    if not M >= 0:
        raise DomainError("ball radius must be non-negative")
    idx = lattice_indices_in_ball(frame, M)
    return _from_indices(idx, k0, frame, {"rule": "ball", "M_nm_inv": M})


def g_gamma_truncated(gamma: float, R_cap: float, k0: WaveVector, frame: LatticeFrame) -> BeamSet:
    """{g : rho_g >= gamma rho_0, |g| <= R_cap}; the cap makes the set finite."""
    if not 0 < gamma < 1:
        raise DomainError("gamma must lie in (0, 1)")
    if not R_cap > 0:
        raise DomainError("truncation radius must be positive")
    idx = lattice_indices_in_ball(frame, R_cap)
    rho = excitation_quantities(idx @ frame.basis, k0)[0]
    keep = idx[rho >= gamma * k0.rho0]
    return _from_indices(
        keep, k0, frame, {"rule": "gamma_truncated", "gamma": gamma, "R_cap_nm_inv": R_cap}
    )


def split_ewald(beams: BeamSet, s_star: float) -> tuple[BeamSet, tuple[Index, ...]]:
    """Split into (|s_g| < s_star, the far remainder).  The far part lacks the
    origin, so it is returned as a plain index tuple."""
    if not s_star > 0:
        raise DomainError("s_star must be positive")
    s = beams.geometry()[2]
    near = [n for n, v in zip(beams.indices, s) if abs(v) < s_star]
    far = tuple(n for n, v in zip(beams.indices, s) if not abs(v) < s_star)
    desc = {"rule": "ewald", "s_star_nm_inv": s_star, "parent": beams.descriptor}
    return _from_indices(near, beams.k0, beams.frame, desc), far


def g_ewald(M: float, s_star: float, k0: WaveVector, frame: LatticeFrame):
    """Ewald-shell part of the ball G^M and its far complement."""
    return split_ewald(g_ball(M, k0, frame), s_star)


def laue_zone_radius(kappa_star: float, k0_norm: float, order: int = 0) -> float:
    """Approximate in-plane radius ((2n+1) kappa_star |k0|)^(1/2) of Laue zone n."""
    return math.sqrt((2 * order + 1) * kappa_star * k0_norm)


def lolz(k0: WaveVector, frame: LatticeFrame) -> BeamSet:
    """Lowest-order Laue zone: in-plane points within kappa_star/2 of the Ewald sphere."""
    d = frame.dimension
    kstar = frame.kappa_star
    knorm = k0.magnitude
    # for g orthogonal to k0, dist <= kstar/2  <=>  |g|^2 <= kstar |k0| + kstar^2/4
    radius = math.sqrt(kstar * knorm + kstar**2 / 4)
    search = max(radius, 4 * float(np.max(np.linalg.norm(frame.basis, axis=1))))
    idx = lattice_indices_in_ball(frame, search)
    g = idx @ frame.basis
    in_plane = np.abs(g @ k0.components) / knorm <= IN_PLANE_TOL
    plane = idx[in_plane]
    rank = np.linalg.matrix_rank(plane.astype(float)) if len(plane) > 1 else 0
    if rank < d - 1:
        raise ValidationError(
            "no (d-1)-dimensional sublattice orthogonal to k0 within the search radius; "
            "LOLZ needs a rational zone-axis orientation"
        )
    dist = excitation_quantities(plane @ frame.basis, k0)[2]
    keep = plane[dist <= kstar / 2]
    return _from_indices(
        keep, k0, frame, {"rule": "lolz", "kappa_star_nm_inv": kstar, "radius_nm_inv": radius}
    )


def systematic_row(
    g_star: Sequence[int], n_min: int, n_max: int, k0: WaveVector, frame: LatticeFrame
) -> BeamSet:
    """{n g_star : n_min <= n <= n_max}; the descriptor keeps the row order."""
    g_star = tuple(int(i) for i in g_star)
    if not any(g_star):
        raise ValidationError("row generator g_star must be nonzero")
    if not n_min <= 0 <= n_max:
        raise ValidationError(f"row range [{n_min}, {n_max}] must contain 0")
    row = [tuple(n * c for c in g_star) for n in range(n_min, n_max + 1)]
    desc = {"rule": "systematic_row", "g_star": list(g_star), "n_min": n_min, "n_max": n_max,
            "row_order": [list(r) for r in row]}
    return _from_indices(row, k0, frame, desc)


# ------------------------------------------------------ integer lattices


def integer_row_basis(generators) -> np.ndarray:
    """Row-echelon (Hermite-style) basis of the integer span of the generator rows."""
    A = [list(map(int, row)) for row in generators]
    if not A:
        return np.zeros((0, 0), dtype=int)
    ncol = len(A[0])
    basis = []
    rows = [r for r in A if any(r)]
    for col in range(ncol):
        # Euclid on column ``col`` across remaining rows
        while True:
            live = [r for r in rows if r[col] != 0]
            if len(live) <= 1:
                break
            live.sort(key=lambda r: abs(r[col]))
            pivot = live[0]
            for r in live[1:]:
                q = r[col] // pivot[col]
                for j in range(ncol):
                    r[j] -= q * pivot[j]
            rows = [r for r in rows if any(r)]
        live = [r for r in rows if r[col] != 0]
        if live:
            pivot = live[0]
            if pivot[col] < 0:
                pivot[:] = [-x for x in pivot]
            basis.append(pivot)
            rows = [r for r in rows if r is not pivot]
    return np.array(basis, dtype=int).reshape(len(basis), ncol)


def in_integer_span(basis: np.ndarray, n: Sequence[int]) -> bool:
    """Membership of integer vector ``n`` in the span of an echelon ``basis``."""
    r = [int(x) for x in n]
    for row in basis:
        col = next(j for j, x in enumerate(row) if x != 0)
        if r[col] % row[col]:
            return False
        q = r[col] // row[col]
        r = [a - q * int(b) for a, b in zip(r, row)]
    return not any(r)


def threshold_select(
    pot: FourierPotential,
    u_min: float,
    s_max: float,
    k0: WaveVector,
    frame: LatticeFrame,
    radius_cap: float | None = None,
) -> BeamSet:
    """Three-stage recipe: in-plane beams (g . nu = 0), the sublattice generated
    by coefficients with |U_g| >= u_min, then |s_g| < s_max.

    ``radius_cap`` is required when s_max is infinite.
    """
    if not u_min >= 0:
        raise DomainError("u_min must be non-negative")
    if not s_max > 0:
        raise DomainError("s_max must be positive")
    kpar = float(np.linalg.norm(k0.components[:-1]))
    if math.isfinite(s_max):
        # in-plane beams have rho_g = rho_0, so |s_g| < s_max bounds |g|
        radius = kpar + math.sqrt(kpar**2 + 2 * k0.rho0 * s_max)
        if radius_cap is not None:
            radius = min(radius, radius_cap)
    elif radius_cap is None:
        raise DomainError("an infinite s_max needs an explicit radius_cap")
    else:
        radius = radius_cap
    idx = lattice_indices_in_ball(frame, radius)
    g = idx @ frame.basis
    idx = idx[np.abs(g[:, -1]) <= IN_PLANE_TOL * k0.magnitude]
    if u_min > 0:
        gens = [
            k for k, v in pot.nonzero().items()
            if abs(v) >= u_min and abs(frame.vector(k)[-1]) <= IN_PLANE_TOL * k0.magnitude
        ]
        basis = integer_row_basis(gens)
        idx = np.array([n for n in idx if in_integer_span(basis, n)], dtype=int).reshape(
            -1, frame.dimension
        )
    s = excitation_quantities(idx @ frame.basis, k0)
    s = s[1] / (2 * s[0])
    keep = idx[np.abs(s) < s_max]
    if len(keep) == 0:
        raise ValidationError("threshold selection left no beams")
    desc = {"rule": "threshold", "u_min_nm2": u_min, "s_max_nm_inv": s_max,
            "radius_cap_nm_inv": radius_cap}
    return _from_indices(keep, k0, frame, desc)


# ---------------------------------------------------------- validation


@dataclass(frozen=True)
class AdmissibilityReport:
    passed: bool
    margin: float
    contains_origin: bool
    duplicates: tuple[Index, ...]
    offending: tuple[Index, ...]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}: margin={self.margin:.6g} origin={self.contains_origin} "
                f"duplicates={len(self.duplicates)} below_gamma={len(self.offending)}")


def validate(beams, gamma: float, k0: WaveVector, frame: LatticeFrame | None = None):
    """Report-style admissibility check of a BeamSet or raw index sequence."""
    if isinstance(beams, BeamSet):
        frame = beams.frame
        indices = list(beams.indices)
    else:
        if frame is None:
            raise ValidationError("a frame is required for raw index sequences")
        indices = [tuple(int(i) for i in n) for n in beams]
    seen, dups = set(), []
    for n in indices:
        if n in seen:
            dups.append(n)
        seen.add(n)
    zero = (0,) * frame.dimension
    if indices:
        rho = excitation_quantities(frame.vectors(indices), k0)[0]
        margin = float(np.min(rho) / k0.rho0)
        offending = tuple(n for n, r in zip(indices, rho) if r < gamma * k0.rho0 or r <= 0)
    else:
        margin, offending = float("nan"), ()
    has_origin = zero in seen
    passed = bool(indices) and has_origin and not dups and not offending and gamma > 0
    return AdmissibilityReport(passed, margin, has_origin, tuple(dups), offending)


def inscribed_radius(indices: Iterable[Sequence[int]], frame: LatticeFrame) -> float:
    """Largest M with G^M contained in the given index set (open at the first miss).

    Returned slightly shrunk so that G^M is genuinely a subset.
    """
    members = {tuple(int(i) for i in n) for n in indices}
    r = float(np.max(np.linalg.norm(frame.basis, axis=1)))
    while True:
        idx = lattice_indices_in_ball(frame, r)
        missing = [n for n in map(tuple, idx.tolist()) if n not in members]
        if missing:
            norms = np.linalg.norm(frame.vectors(missing), axis=1)
            return float(np.min(norms)) * (1 - 1e-9)
        r *= 2


def beam_table(beams: BeamSet) -> str:
    """Text table: integer indices and rho, sigma, s columns."""
    d = beams.frame.dimension
    rho, sigma, s, _ = beams.geometry()
    head = " ".join(f"{'n' + str(i + 1):>5}" for i in range(d))
    lines = [f"{head} {'rho_nm-1':>16} {'sigma_nm-2':>16} {'s_nm-1':>16}"]
    for n, r, sg, sv in zip(beams.indices, rho, sigma, s):
        ids = " ".join(f"{i:>5d}" for i in n)
        lines.append(f"{ids} {r:16.9f} {sg:16.9f} {sv:16.9f}")
    return "\n".join(lines)
