"""Fourier scattering potential U_g, atomic form-factor model, decay envelope
and the lattice sums S_m(beta) that enter every error bound.

Coefficients are keyed by integer index tuples of the frame's dual basis and
carry units of nm^-2.  Missing coefficients read as zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special

from . import constants as C
from .crystal import Index, LatticeFrame, lattice_indices_in_ball
from .errors import DomainError, InvariantViolation, ValidationError

HERMITIAN_TOL = 1e-12  # nm^-2


def _neg(index: Index) -> Index:
    return tuple(-i for i in index)


@dataclass(frozen=True, eq=False)
class FourierPotential:
    """Hermitian map index -> U_g (nm^-2) on a lattice frame."""

    frame: LatticeFrame
    coefficients: Mapping[Index, complex] = field(default_factory=dict)

    def __post_init__(self):
        coeffs = {tuple(int(i) for i in k): complex(v) for k, v in self.coefficients.items()}
        d = self.frame.dimension
        for k, v in coeffs.items():
            if len(k) != d:
                raise ValidationError(f"index {k} does not have dimension {d}")
            if not (math.isfinite(v.real) and math.isfinite(v.imag)):
                raise ValidationError(f"coefficient at {k} is not finite")
            partner = coeffs.get(_neg(k), 0j)
            if abs(partner - v.conjugate()) > HERMITIAN_TOL:
                raise ValidationError(
                    f"Hermitian symmetry violated: U{_neg(k)}={partner} but conj(U{k})={v.conjugate()}"
                )
        object.__setattr__(self, "coefficients", coeffs)

    def __getitem__(self, index: Sequence[int]) -> complex:
        return self.coefficients.get(tuple(int(i) for i in index), 0j)

    def __len__(self) -> int:
        return len(self.coefficients)

    def nonzero(self) -> dict[Index, complex]:
        return {k: v for k, v in self.coefficients.items() if v != 0}

    def max_abs(self) -> float:
        return max((abs(v) for v in self.coefficients.values()), default=0.0)

    def to_json(self) -> dict:
        rows = [
            {"index": list(k), "re": v.real, "im": v.imag}
            for k, v in sorted(self.coefficients.items())
        ]
        return {"coefficients": rows}


def from_coefficients(entries, frame: LatticeFrame) -> FourierPotential:
    """Build a potential from ``(index, U)`` pairs, completing U_{-g} = conj(U_g).

    ``entries`` may be a mapping or an iterable of pairs.  Duplicate indices
    and conflicting Hermitian partners raise ValidationError; U_0 must be real.
    """
    pairs = entries.items() if isinstance(entries, Mapping) else entries
    given: dict[Index, complex] = {}
    for index, value in pairs:
        key = tuple(int(i) for i in index)
        if key in given:
            raise ValidationError(f"duplicate coefficient for index {key}")
        given[key] = complex(value)
    full = dict(given)
    for key, value in given.items():
        partner = _neg(key)
        if partner in given:
            if abs(given[partner] - value.conjugate()) > HERMITIAN_TOL:
                raise ValidationError(
                    f"Hermitian conflict between {key} -> {value} and {partner} -> {given[partner]}"
                )
        else:
            full[partner] = value.conjugate()
    return FourierPotential(frame, full)


# ---------------------------------------------------------------- atoms


FormFactor = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GaussianFormFactor:
    """Sum-of-Gaussians electron scattering factor f(s) = sum a_i exp(-b_i s^2).

    ``a`` in Angstrom, ``b`` in Angstrom^2, s = |g|/2 in Angstrom^-1.  Called
    with an (N, d) array of g vectors in nm^-1, returns f in nm.
    """

    a: tuple[float, ...]
    b: tuple[float, ...]

    def __call__(self, g: np.ndarray) -> np.ndarray:
        g = np.atleast_2d(np.asarray(g, dtype=float))
        s = 0.5 * np.linalg.norm(g, axis=1) * C.NM_PER_ANGSTROM
        f = sum(ai * np.exp(-bi * s * s) for ai, bi in zip(self.a, self.b))
        return f * C.NM_PER_ANGSTROM


@dataclass(frozen=True)
class ConstantFormFactor:
    value: float = 1.0

    def __call__(self, g: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(g).shape[0], float(self.value))


# Approximate four-Gaussian fits for a few III-V elements.  Good enough for
# envelope sanity checks; not a reference database.
FORM_FACTORS = {
    "Ga": GaussianFormFactor((2.321, 2.486, 1.688, 0.599), (65.602, 15.458, 2.581, 0.351)),
    "As": GaussianFormFactor((2.399, 2.790, 1.529, 0.594), (45.718, 12.817, 2.280, 0.328)),
    "In": GaussianFormFactor((3.153, 3.557, 2.818, 0.884), (66.915, 14.449, 2.976, 0.335)),
}


@dataclass(frozen=True)
class AtomSite:
    """Atom at fractional cell position ``position`` with Debye-Waller factor (nm^2)."""

    position: tuple[float, ...]
    form_factor: FormFactor
    debye_waller_nm2: float = 0.0

    def __post_init__(self):
        pos = tuple(float(x) for x in self.position)
        if not all(0.0 <= x < 1.0 for x in pos):
            raise ValidationError(f"fractional position {pos} outside [0, 1)")
        if not self.debye_waller_nm2 >= 0:
            raise ValidationError("Debye-Waller factor must be non-negative")
        object.__setattr__(self, "position", pos)


def from_atoms(
    sites: Sequence[AtomSite], frame: LatticeFrame, cutoff: float, scale: float
) -> FourierPotential:
    """U_g = scale * sum_nu f_nu(g) exp(2 pi i n.x_nu) exp(-M_nu |g|^2) for |g| <= cutoff.

    Positions are fractional coordinates of the primal cell dual to the
    frame basis, so the phase is exp(2 pi i n . x).  ``scale`` (nm^-3 when f
    is in nm) has no default: the overall normalisation is a modelling choice.
    """
    if not sites:
        raise ValidationError("at least one atom site is required")
    if not cutoff > 0:
        raise ValidationError("cutoff radius must be positive")
    if not math.isfinite(scale):
        raise ValidationError("scale must be finite")
    idx = lattice_indices_in_ball(frame, cutoff)
    g = idx @ frame.basis
    g2 = np.sum(g * g, axis=1)
    total = np.zeros(len(idx), dtype=complex)
    for site in sites:
        if len(site.position) != frame.dimension:
            raise ValidationError("atom position dimension does not match the frame")
        f = np.asarray(site.form_factor(g))
        f_neg = np.asarray(site.form_factor(-g))
        if np.iscomplexobj(f) and np.any(f.imag != 0):
            raise ValidationError("form factor must be real-valued")
        f = np.real(f).astype(float)
        if not np.allclose(f, np.real(f_neg), rtol=1e-12, atol=0):
            raise ValidationError("form factor must be even in g")
        phase = np.exp(2j * np.pi * (idx @ np.asarray(site.position)))
        total += f * phase * np.exp(-site.debye_waller_nm2 * g2)
    total *= scale
    # extinct reflections come out as ~1e-16 noise; make them exact zeros
    total[np.abs(total) <= 1e-13 * np.max(np.abs(total))] = 0
    coeffs = dict(zip(map(tuple, idx.tolist()), total))
    # symmetrise exactly: rounding in the phases leaves ~1e-16 asymmetry
    for k in list(coeffs):
        nk = _neg(k)
        avg = 0.5 * (coeffs[k] + coeffs[nk].conjugate())
        coeffs[k], coeffs[nk] = avg, avg.conjugate()
    zero = (0,) * frame.dimension
    coeffs[zero] = complex(coeffs[zero].real, 0.0)
    return FourierPotential(frame, coeffs)


# ------------------------------------------------------------ envelope


@dataclass(frozen=True)
class DecayEnvelope:
    """Certified majorant |U_g| <= C_U exp(-alpha_U |g|)."""

    C_U: float  # nm^-2
    alpha_U: float  # nm

    def __post_init__(self):
        if not (self.C_U > 0 and self.alpha_U > 0):
            raise ValidationError("decay envelope needs C_U > 0 and alpha_U > 0")

    def __call__(self, g_norm):
        return self.C_U * np.exp(-self.alpha_U * np.asarray(g_norm, dtype=float))


def fit_decay(pot: FourierPotential, C_U: float | None = None) -> DecayEnvelope:
    """Fastest exponential majorant of the stored coefficients.

    With C_U fixed (default: max |U_g|) the largest admissible rate is
    alpha_U = min over g != 0 of ln(C_U/|U_g|)/|g|.  The result is shrunk by
    one part in 1e12 so the inequality survives rounding, then re-checked.
    """
    items = pot.nonzero()
    if len(items) < 2:
        raise ValidationError("decay rate needs at least two nonzero coefficients")
    peak = pot.max_abs()
    C_fit = peak if C_U is None else float(C_U)
    if C_fit < peak:
        raise ValidationError(f"C_U={C_fit} is below max |U_g|={peak}")
    zero = (0,) * pot.frame.dimension
    rates = []
    for k, v in items.items():
        if k == zero:
            continue
        gn = float(np.linalg.norm(pot.frame.vector(k)))
        rates.append(math.log(C_fit / abs(v)) / gn)
    alpha = min(rates) * (1 - 1e-12)
    if not alpha > 0:
        raise ValidationError("coefficients do not decay: some |U_g| with g != 0 reaches C_U")
    env = DecayEnvelope(C_fit, alpha)
    for k, v in items.items():
        gn = float(np.linalg.norm(pot.frame.vector(k)))
        if abs(v) > env(gn):
            raise InvariantViolation(f"fitted envelope fails at {k}")
    return env


# --------------------------------------------------------- lattice sums


def _ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def lattice_sum_tail_bound(m: int, beta: float, frame: LatticeFrame, R: float) -> float:
    """Upper bound on sum_{|k|>R} |k|^m exp(-beta |k|), valid for R >= m/beta.

    Counting bound N(r) <= omega_d (r + delta)^d / covolume with
    delta = sum |b_i|, then summation by parts against the decreasing
    summand; the resulting integrals are upper incomplete gamma functions.
    """
    if R < m / beta:
        raise DomainError("tail bound needs R >= m/beta")
    d = frame.dimension
    delta = float(np.sum(np.linalg.norm(frame.basis, axis=1)))
    total = 0.0
    for j in range(d + 1):
        k = j + m
        upper = special.gammaincc(k + 1, beta * R) * math.gamma(k + 1) / beta ** (k + 1)
        total += math.comb(d, j) * delta ** (d - j) * upper
    return _ball_volume(d) / frame.covolume * beta * total


@lru_cache(maxsize=256)
def _lattice_sum_cached(m: int, beta: float, frame: LatticeFrame, tol: float) -> float:
    R = max(m / beta, float(np.max(np.linalg.norm(frame.basis, axis=1))))
    step = math.log(10.0) / beta
    while lattice_sum_tail_bound(m, beta, frame, R) >= tol / 2:
        R += step
    idx = lattice_indices_in_ball(frame, R)
    r = np.linalg.norm(idx @ frame.basis, axis=1)
    terms = r**m * np.exp(-beta * r) if m > 0 else np.exp(-beta * r)
    return math.fsum(terms.tolist())


def lattice_sum_S(m: int, beta: float, frame: LatticeFrame, tol: float = 1e-10) -> float:
    """S_m(beta) = sum over the dual lattice of |k|^m exp(-beta |k|), to absolute ``tol``."""
    if m not in (0, 1, 2):
        raise DomainError(f"lattice sum order m must be 0, 1 or 2, got {m}")
    if not beta > 0:
        raise DomainError(f"lattice sum diverges for beta={beta!r} <= 0")
    if not tol > 0:
        raise DomainError("tolerance must be positive")
    return _lattice_sum_cached(int(m), float(beta), frame, float(tol))


# ------------------------------------------------------------------ I/O


def _site_from_json(row: dict) -> AtomSite:
    ff = row.get("form_factor", row.get("element"))
    if isinstance(ff, str):
        if ff not in FORM_FACTORS:
            raise ValidationError(f"unknown element {ff!r}; known: {sorted(FORM_FACTORS)}")
        form = FORM_FACTORS[ff]
    elif isinstance(ff, dict) and "a" in ff and "b" in ff:
        form = GaussianFormFactor(tuple(ff["a"]), tuple(ff["b"]))
    elif isinstance(ff, (int, float)):
        form = ConstantFormFactor(float(ff))
    else:
        raise ValidationError(f"cannot interpret form factor {ff!r}")
    return AtomSite(tuple(row["position"]), form, float(row.get("debye_waller_nm2", 0.0)))


def potential_from_dict(data: dict, frame: LatticeFrame) -> FourierPotential:
    """Parse the potential schema: either ``coefficients`` or ``atoms``.

    ``{"coefficients": [{"index": [i, j], "re": x, "im": y}, ...]}`` or
    ``{"atoms": [{"position": [...], "element": "Ga", "debye_waller_nm2": 0}],
    "scale": s, "cutoff_nm_inv": M}``.
    """
    if "coefficients" in data and "atoms" in data:
        raise ValidationError("potential must give either coefficients or atoms, not both")
    if "coefficients" in data:
        entries = []
        for row in data["coefficients"]:
            try:
                entries.append((row["index"], complex(row["re"], row.get("im", 0.0))))
            except (KeyError, TypeError) as exc:
                raise ValidationError(f"bad coefficient row {row!r}") from exc
        return from_coefficients(entries, frame)
    if "atoms" in data:
        for key in ("scale", "cutoff_nm_inv"):
            if key not in data:
                raise ValidationError(f"atom-based potential needs {key!r}")
        sites = [_site_from_json(r) for r in data["atoms"]]
        return from_atoms(sites, frame, float(data["cutoff_nm_inv"]), float(data["scale"]))
    raise ValidationError("potential must define 'coefficients' or 'atoms'")


def load_potential(path: str | Path, frame: LatticeFrame) -> FourierPotential:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"potential file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"potential file {path} is not valid JSON: {exc}") from exc
    return potential_from_dict(data, frame)

