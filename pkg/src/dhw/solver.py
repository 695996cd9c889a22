"""Finite DHW system R psi' = i (Sigma + U) psi and its evolution.

R = diag(rho_g / pi) keeps the factor pi explicitly, so the symmetrised
Hamiltonian H~ = R^(-1/2) (Sigma + U) R^(-1/2) = pi (Sigma + U) / sqrt(rho_g rho_h)
has units nm^-1.  The production propagator diagonalises H~ once and is
exactly unitary for the flux inner product; an adaptive Runge-Kutta
integration serves as an independent oracle.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .beamsel import BeamSet
from .crystal import Index
from .errors import NumericError, ValidationError
from .potential import FourierPotential



@dataclass(frozen=True, eq=False)
class DhwSystem:
    beams: BeamSet
    potential: FourierPotential
    rho: np.ndarray  # nm^-1
    sigma: np.ndarray  # nm^-2
    U: np.ndarray  # nm^-2, U[g, h] = U_{g-h}

    @property
    def size(self) -> int:
        return len(self.rho)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.rho / np.pi)

    @cached_property
    def H_sym(self) -> np.ndarray:
        """pi (Sigma + U) / sqrt(rho_g rho_h), Hermitian by construction."""
        sq = np.sqrt(self.rho)
        H = np.pi * (np.diag(self.sigma) + self.U) / np.outer(sq, sq)
        return 0.5 * (H + H.conj().T)

    @cached_property
    def sigma_sym(self) -> np.ndarray:
        return np.diag(np.pi * self.sigma / self.rho)

    @cached_property
    def U_sym(self) -> np.ndarray:
        sq = np.sqrt(self.rho)
        return np.pi * self.U / np.outer(sq, sq)

    @cached_property
    def generator(self) -> np.ndarray:
        """R^-1 (Sigma + U), the right-hand side matrix of psi' = i G psi."""
        return (np.pi / self.rho)[:, None] * (np.diag(self.sigma) + self.U)

    @cached_property
    def spectral(self) -> tuple[np.ndarray, np.ndarray]:
        H = self.H_sym
        if not np.all(np.isfinite(H)):
            raise NumericError("Hamiltonian has non-finite entries")
        try:
            return np.linalg.eigh(H)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"eigendecomposition failed: {exc}") from exc

    def hermitian_residual(self) -> float:
        return float(np.max(np.abs(self.U - self.U.conj().T), initial=0.0))

    def delta(self) -> np.ndarray:
        e = np.zeros(self.size, dtype=complex)
        e[0] = 1.0
        return e


def assemble(beams: BeamSet, pot: FourierPotential) -> DhwSystem:
    """Build (R, Sigma, U) in the beam set's canonical order."""
    if pot.frame is not beams.frame and not np.array_equal(pot.frame.basis, beams.frame.basis):
        raise ValidationError("potential and beam set use different lattice frames")
    rho, sigma, _, _ = beams.geometry()
    if not np.all(rho > 0):
        raise ValidationError("assembly refused: some rho_g <= 0")
    sigma = np.where(np.all(np.asarray(beams.indices) == 0, axis=1), 0.0, sigma)
    idx = np.asarray(beams.indices, dtype=int)
    n = len(idx)
    U = np.zeros((n, n), dtype=complex)
    coeffs = pot.coefficients
    for i in range(n):
        diffs = idx[i] - idx
        for j, dv in enumerate(map(tuple, diffs.tolist())):
            U[i, j] = coeffs.get(dv, 0j)
    rho = np.array(rho, dtype=float)
    sigma = np.array(sigma, dtype=float)
    for a in (rho, sigma, U):
        a.setflags(write=False)
    return DhwSystem(beams, pot, rho, sigma, U)


def _check_grid(z_grid) -> np.ndarray:
    z = np.asarray(z_grid, dtype=float).reshape(-1)
    if z.size == 0 or not np.all(np.isfinite(z)):
        raise ValidationError("z grid must be a non-empty finite array")
    if np.any(np.diff(z) <= 0):
        raise ValidationError("z grid must be strictly increasing")
    if not np.any(z == 0):
        raise ValidationError("z grid must contain z = 0")
    return z


def _check_psi0(sys: DhwSystem, psi0) -> np.ndarray:
    if psi0 is None:
        return sys.delta()
    psi0 = np.asarray(psi0, dtype=complex).reshape(-1)
    if psi0.shape != (sys.size,):
        raise ValidationError(f"initial vector has length {psi0.size}, expected {sys.size}")
    return psi0


@dataclass(frozen=True, eq=False)
class Solution:
    """Amplitudes psi[k, j] = psi_{g_j}(z_k) on a z grid."""

    system: DhwSystem
    z: np.ndarray
    psi: np.ndarray
    method: str = "eigh"

    @property
    def beams(self) -> BeamSet:
        return self.system.beams

    def amplitude(self, index: Sequence[int]) -> np.ndarray:
        return self.psi[:, self.beams.position(index)]

    def restrict(self, indices) -> np.ndarray:
        return self.psi[:, self.beams.positions(indices)]

    def final(self) -> np.ndarray:
        return self.psi[-1]

    def csv_text(self) -> str:
        """Long format: z_nm, n1..nd, re_psi, im_psi, intensity with 17 significant digits."""
        d = self.beams.frame.dimension
        buf = io.StringIO()
        cols = ["z_nm"] + [f"n{i + 1}" for i in range(d)] + ["re_psi", "im_psi", "intensity"]
        buf.write(",".join(cols) + "\n")
        for k, zk in enumerate(self.z):
            for j, n in enumerate(self.beams.indices):
                p = self.psi[k, j]
                ids = ",".join(str(i) for i in n)
                buf.write(f"{zk:.17g},{ids},{p.real:.17g},{p.imag:.17g},{abs(p) ** 2:.17g}\n")
        return buf.getvalue()


def evolve(sys: DhwSystem, z_grid, psi0=None) -> Solution:
    """psi(z) = R^-1/2 Q exp(i z D) Q^H R^1/2 psi0 with H~ = Q D Q^H."""
    z = _check_grid(z_grid)
    psi0 = _check_psi0(sys, psi0)
    D, Q = sys.spectral
    sq = np.sqrt(sys.rho)
    coeff = Q.conj().T @ (sq * psi0)
    phases = np.exp(1j * np.outer(z, D))
    psi = ((phases * coeff) @ Q.T) / sq
    psi[z == 0] = psi0
    if not np.all(np.isfinite(psi)):
        raise NumericError("propagation produced non-finite amplitudes")
    psi.setflags(write=False)
    return Solution(sys, z, psi, "eigh")


def evolve_oracle(sys: DhwSystem, z_grid, psi0=None, tol: float = 1e-12) -> Solution:
    """Independent check: DOP853 on psi' = i R^-1 (Sigma + U) psi with rtol = atol = tol."""
    if not 1e-13 <= tol <= 1e-6:
        raise ValidationError("oracle tolerance must lie in [1e-13, 1e-6]")
    z = _check_grid(z_grid)
    psi0 = _check_psi0(sys, psi0)
    G = 1j * sys.generator

    def rhs(_, y):
        return G @ y

    out = np.empty((z.size, sys.size), dtype=complex)
    for part in (z[z > 0], z[z < 0][::-1]):
        if part.size == 0:
            continue
        res = solve_ivp(rhs, (0.0, part[-1]), psi0, method="DOP853", t_eval=part,
                        rtol=tol, atol=tol)
        if res.status != 0:
            raise NumericError(f"oracle integrator failed: {res.message}")
        for zk, col in zip(res.t, res.y.T):
            out[np.searchsorted(z, zk)] = col
    out[z == 0] = psi0
    out.setflags(write=False)
    return Solution(sys, z, out, "dop853")


# --------------------------------------------------------------- norms


def _rows(psi) -> np.ndarray:
    return np.atleast_2d(np.asarray(psi, dtype=complex))


def norm(sys: DhwSystem, psi, mode: str = "flux", alpha: float | None = None):
    """Flux, energy or exponentially weighted norm of one vector or of each row.

    flux: (sum rho |psi|^2)^1/2; energy: flux norm of R^-1 (Sigma + U) psi;
    weighted: (sum exp(2 alpha |g|) rho |psi|^2)^1/2.
    """
    if isinstance(psi, Solution):
        psi = psi.psi
    single = np.ndim(psi) == 1
    rows = _rows(psi)
    rho = sys.rho
    if mode == "flux":
        w = rho
        vals = rows
    elif mode == "energy":
        w = rho
        vals = rows @ sys.generator.T
    elif mode == "weighted":
        if alpha is None:
            raise ValidationError("weighted norm needs alpha")
        gnorm = np.linalg.norm(sys.beams.vectors(), axis=1)
        w = rho * np.exp(2 * alpha * gnorm)
        vals = rows
    else:
        raise ValidationError(f"unknown norm mode {mode!r}")
    out = np.sqrt(np.sum(w * np.abs(vals) ** 2, axis=1))
    return float(out[0]) if single else out


def sigma_norm(sys: DhwSystem, psi):
    """||R^-1 Sigma psi||_G, the quantity controlled by the energy bound."""
    if isinstance(psi, Solution):
        psi = psi.psi
    single = np.ndim(psi) == 1
    rows = _rows(psi) * (np.pi * sys.sigma / sys.rho)
    out = np.sqrt(np.sum(sys.rho * np.abs(rows) ** 2, axis=1))
    return float(out[0]) if single else out


def subset_flux_norm(rho: np.ndarray, psi_rows: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(rho * np.abs(_rows(psi_rows)) ** 2, axis=1))


# ------------------------------------------------------------ analytic


def analytic_two_beam(U_ghat: complex, rho0: float, z):
    """Two-beam intensities cos^2(pi |U| z / rho0), sin^2(pi |U| z / rho0)."""
    if not rho0 > 0:
        raise ValidationError("rho0 must be positive")
    phase = np.pi * abs(U_ghat) * np.asarray(z, dtype=float) / rho0
    return np.cos(phase) ** 2, np.sin(phase) ** 2


def analytic_free_beam(U0: float, rho0: float, z):
    """Single-beam solution exp(i z pi U0 / rho0)."""
    if not rho0 > 0:
        raise ValidationError("rho0 must be positive")
    return np.exp(1j * np.pi * float(np.real(U0)) * np.asarray(z, dtype=float) / rho0)


@dataclass(frozen=True)
class Comparison:
    z: np.ndarray
    common: tuple[Index, ...]
    error: np.ndarray  # flux norm of the difference on the common set
    differences: np.ndarray  # (nz, len(common)) complex, A - B

    @property
    def max_error(self) -> float:
        return float(np.max(self.error))


def restrict_and_compare(sol_a: Solution, sol_b: Solution, common) -> Comparison:
    """e(z) = || psi_A|common - psi_B|common ||_common on a shared z grid."""
    if sol_a.z.shape != sol_b.z.shape or not np.array_equal(sol_a.z, sol_b.z):
        raise ValidationError("solutions live on different z grids")
    common = tuple(common.indices) if isinstance(common, BeamSet) else tuple(map(tuple, common))
    for sol in (sol_a, sol_b):
        missing = [n for n in common if n not in sol.beams]
        if missing:
            raise ValidationError(f"common set not contained in both beam sets: {missing[:3]}")
    diff = sol_a.restrict(common) - sol_b.restrict(common)
    rho = sol_a.beams.rho_of(common) if common else np.zeros(0)
    err = subset_flux_norm(rho, diff) if common else np.zeros(sol_a.z.size)
    return Comparison(sol_a.z, common, err, diff)


def beating_period(U_ghat: complex, rho0: float) -> float:
    """Full intensity period rho0 / |U_ghat| of the two-beam exchange."""
    return rho0 / abs(U_ghat)


def default_grid(z_star: float, samples: int = 512) -> np.ndarray:
    """``samples`` uniform intervals on [0, z_star], endpoint included."""
    if not z_star > 0 or samples < 1:
        raise ValidationError("need z_star > 0 and at least one sample")
    return np.linspace(0.0, z_star, samples + 1)


def flux_drift(sys: DhwSystem, sol: Solution) -> float:
    n = norm(sys, sol.psi, "flux")
    return float(np.max(np.abs(n - n[0])) / n[0])


def energy_drift(sys: DhwSystem, sol: Solution) -> float:
    e = norm(sys, sol.psi, "energy")
    return float(np.max(np.abs(e - e[0])) / e[0]) if e[0] > 0 else float(np.max(e))


__all__ = [
    "DhwSystem", "Solution", "Comparison", "assemble", "evolve", "evolve_oracle", "norm",
    "sigma_norm", "analytic_two_beam", "analytic_free_beam", "restrict_and_compare",
    "beating_period", "default_grid", "flux_drift", "energy_drift",
]
