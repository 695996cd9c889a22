"""Closed-form a-priori error certificates for beam-set restrictions.

Every bound is assembled from the envelope (C_U, alpha_U), the admissibility
margin gamma, rho_0 = k0 . nu and the lattice sums S_m.  Certificates are
evaluated in log space so that astronomically large (but valid) bounds come
out as large floats or +inf instead of overflow warnings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .crystal import LatticeFrame
from .errors import DomainError, ValidationError
from .potential import DecayEnvelope, lattice_sum_S


@dataclass(frozen=True, eq=False)
class BoundContext:
    """Inputs shared by all certificates.

    gamma may equal 1 (e.g. the free-beam set {0}); alpha defaults to alpha_U/2
    and a_ref to the frame's reference length.
    """

    gamma: float
    rho0: float  # nm^-1
    C_U: float  # nm^-2
    alpha_U: float  # nm
    frame: LatticeFrame
    alpha: float | None = None  # nm
    a_ref: float | None = None  # nm
    sum_tol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValidationError("gamma must lie in (0, 1]")
        if not self.rho0 > 0:
            raise ValidationError("rho0 must be positive")
        if not (self.C_U > 0 and self.alpha_U > 0):
            raise ValidationError("envelope needs C_U > 0 and alpha_U > 0")
        alpha = self.alpha_U / 2 if self.alpha is None else float(self.alpha)
        if not abs(alpha) < self.alpha_U:
            raise DomainError(f"|alpha|={abs(alpha)} must be below alpha_U={self.alpha_U}")
        a_ref = self.frame.a_ref if self.a_ref is None else float(self.a_ref)
        if not a_ref > 0:
            raise ValidationError("reference length must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "a_ref", a_ref)

    @classmethod
    def from_envelope(cls, envelope: DecayEnvelope, gamma: float, rho0: float,
                      frame: LatticeFrame, **kw) -> "BoundContext":
        return cls(gamma, rho0, envelope.C_U, envelope.alpha_U, frame, **kw)

    def S(self, m: int, beta: float) -> float:
        return lattice_sum_S(m, beta, self.frame, self.sum_tol)

    @property
    def delta_norm(self) -> float:
        """Flux norm of the unit incoming beam, sqrt(rho0)."""
        return math.sqrt(self.rho0)

    @property
    def S0(self) -> float:
        return self.S(0, self.alpha_U)

    @property
    def n_cpl(self) -> float:
        """Coupling constant pi C_U (S_0(alpha_U) - 1) / (gamma rho0), nm^-1."""
        return math.pi * self.C_U * (self.S0 - 1) / (self.gamma * self.rho0)


@dataclass(frozen=True)
class ErrorCertificate:
    """bound(z) = min(cap, prefactor * |z|^power * exp(rate |z| + offset))."""

    name: str
    formula: str
    prefactor: float
    rate: float = 0.0  # nm^-1
    offset: float = 0.0
    power: int = 0
    cap: float = math.inf
    constants: dict = field(default_factory=dict)

    def __call__(self, z):
        za = np.abs(np.asarray(z, dtype=float))
        scalar = za.ndim == 0
        za = np.atleast_1d(za)
        out = np.zeros_like(za)
        if self.prefactor > 0:
            with np.errstate(divide="ignore"):
                log_b = math.log(self.prefactor) + self.rate * za + self.offset
                if self.power:
                    log_b = log_b + self.power * np.log(za)
            big = log_b > 700
            out = np.where(big, np.inf, np.exp(np.minimum(log_b, 700)))
        out = np.minimum(out, self.cap)
        return float(out[0]) if scalar else out

    def report(self, zs) -> str:
        lines = [f"{self.name}: {self.formula}"]
        lines += [f"  {k} = {v:.10g}" for k, v in self.constants.items()]
        for zk in np.atleast_1d(zs):
            lines.append(f"  bound(z={zk:.6g} nm) = {self(zk):.10g}")
        return "\n".join(lines)


def kappa(ctx: BoundContext, alpha: float | None = None) -> float:
    """Growth rate (pi C_U / (gamma rho0)) |alpha| S_1(alpha_U - |alpha|), nm^-1."""
    a = ctx.alpha if alpha is None else float(alpha)
    if not abs(a) < ctx.alpha_U:
        raise DomainError(f"|alpha|={abs(a)} must be below alpha_U={ctx.alpha_U}")
    if a == 0:
        return 0.0
    return math.pi * ctx.C_U / (ctx.gamma * ctx.rho0) * abs(a) * ctx.S(1, ctx.alpha_U - abs(a))


def weighted_growth_bound(ctx: BoundContext, initial_weighted_norm: float,
                          alpha: float | None = None) -> ErrorCertificate:
    """||psi(z)||_alpha <= exp(kappa(alpha) |z|) ||psi(0)||_alpha."""
    a = ctx.alpha if alpha is None else float(alpha)
    k = kappa(ctx, a)
    return ErrorCertificate(
        "weighted_growth", "exp(kappa |z|) ||psi0||_alpha", initial_weighted_norm, rate=k,
        constants={"alpha_nm": a, "kappa_nm-1": k},
    )


def operator_norm_bound(B, rho_rows, rho_cols=None) -> float:
    """Schur-test bound on the flux-weighted operator norm of B.

    With B~_gh = sqrt(rho_g / rho_h) B_gh returns
    (max column sum of |B~|)^1/2 (max row sum of |B~|)^1/2.
    """
    B = np.atleast_2d(np.asarray(B))
    rho_rows = np.asarray(rho_rows, dtype=float)
    rho_cols = rho_rows if rho_cols is None else np.asarray(rho_cols, dtype=float)
    if np.any(rho_rows <= 0) or np.any(rho_cols <= 0):
        raise ValidationError("weights must be positive")
    if B.shape != (rho_rows.size, rho_cols.size):
        raise ValidationError("matrix shape does not match the weights")
    Bt = np.abs(B) * np.sqrt(np.outer(rho_rows, 1.0 / rho_cols))
    col = float(np.max(Bt.sum(axis=0), initial=0.0))
    row = float(np.max(Bt.sum(axis=1), initial=0.0))
    return math.sqrt(col * row)


def weighted_operator_norm(B, rho_rows, rho_cols=None) -> float:
    """Exact flux-weighted operator norm (largest singular value of B~)."""
    B = np.atleast_2d(np.asarray(B))
    rho_rows = np.asarray(rho_rows, dtype=float)
    rho_cols = rho_rows if rho_cols is None else np.asarray(rho_cols, dtype=float)
    Bt = B * np.sqrt(np.outer(rho_rows, 1.0 / rho_cols))
    return float(np.linalg.norm(Bt, 2)) if Bt.size else 0.0


def _require_positive_alpha(ctx: BoundContext):
    if not ctx.alpha > 0:
        raise DomainError("cut-off bounds need alpha > 0")


def cutoff_bounds(ctx: BoundContext, M: float) -> tuple[ErrorCertificate, ErrorCertificate]:
    """(inner, outer) certificates for the ball G^M inside a larger admissible set.

    inner: ||psi^M - psi|G^M|| <= (S0(aU)-1)/(a S1(aU-a)) exp(kappa|z| - a M) ||delta||
    outer: ||psi|outside G^M|| <= exp(kappa|z| - a M) ||delta||
    """
    _require_positive_alpha(ctx)
    if not M >= 0:
        raise DomainError("M must be non-negative")
    a = ctx.alpha
    k = kappa(ctx)
    S0 = ctx.S0
    S1 = ctx.S(1, ctx.alpha_U - a)
    ratio = (S0 - 1) / (a * S1)
    consts = {"kappa_nm-1": k, "S0(alpha_U)": S0, "S1(alpha_U-alpha)": S1, "alpha_nm": a,
              "M_nm-1": M, "delta_norm": ctx.delta_norm}
    inner = ErrorCertificate(
        "cutoff_inner", "(S0-1)/(alpha S1) exp(kappa|z| - alpha M) ||delta||",
        ratio * ctx.delta_norm, rate=k, offset=-a * M, constants=consts,
    )
    outer = ErrorCertificate(
        "cutoff_outer", "exp(kappa|z| - alpha M) ||delta||",
        ctx.delta_norm, rate=k, offset=-a * M, constants=consts,
    )
    return inner, outer


def arbitrary_set_bound(ctx: BoundContext, M: float) -> ErrorCertificate:
    """Twice the inner cut-off bound: two sets both containing G^M agree on G^M."""
    inner, _ = cutoff_bounds(ctx, M)
    return ErrorCertificate(
        "arbitrary_sets", "2 (S0-1)/(alpha S1) exp(kappa|z| - alpha M) ||delta||",
        2 * inner.prefactor, rate=inner.rate, offset=inner.offset, constants=inner.constants,
    )


def energy_bound(ctx: BoundContext) -> ErrorCertificate:
    """||R^-1 Sigma psi(z)|| <= 2 pi C_U S0(alpha_U) / (gamma rho0) ||delta||, all z."""
    c = 2 * math.pi * ctx.C_U * ctx.S0 / (ctx.gamma * ctx.rho0)
    return ErrorCertificate(
        "energy", "2 pi C_U S0 / (gamma rho0) ||delta||", c * ctx.delta_norm,
        constants={"S0(alpha_U)": ctx.S0, "constant_nm-1": c},
    )


def ewald_bounds(ctx: BoundContext, s_star: float) -> tuple[ErrorCertificate, ErrorCertificate]:
    """(far-mode amplitude, Ewald-reduction error) for the split at |s_g| < s_star."""
    if not s_star > 0:
        raise DomainError("s_star must be positive")
    S0 = ctx.S0
    far_c = ctx.C_U * S0 / (ctx.gamma * ctx.rho0) / s_star
    red_c = math.pi / s_star * ctx.C_U**2 * (S0 - 1) * S0 / (ctx.gamma * ctx.rho0) ** 2
    consts = {"S0(alpha_U)": S0, "s_star_nm-1": s_star}
    far = ErrorCertificate("ewald_far", "(1/s*) C_U S0 / (gamma rho0) ||delta||",
                           far_c * ctx.delta_norm, constants=consts)
    red = ErrorCertificate(
        "ewald_reduction", "|z| (pi/s*) C_U^2 (S0-1) S0 / (gamma rho0)^2 ||delta||",
        red_c * ctx.delta_norm, power=1, constants=consts,
    )
    return far, red


def free_beam_bounds(ctx: BoundContext) -> tuple[ErrorCertificate, ErrorCertificate]:
    """(|free-beam amplitude - psi_0| <= min(N|z|, 2), off-beam flux <= min(N|z|, 1) ||delta||)."""
    n = ctx.n_cpl
    consts = {"N_cpl_nm-1": n}
    a = ErrorCertificate("free_beam_amplitude", "min(N_cpl |z|, 2)", n, power=1, cap=2.0,
                         constants=consts)
    b = ErrorCertificate("free_beam_leakage", "min(N_cpl |z|, 1) ||delta||",
                         n * ctx.delta_norm, power=1, cap=ctx.delta_norm, constants=consts)
    return a, b


def asymptotic_error_terms(ctx: BoundContext, k0_norm: float, z_star: float,
                           variant: str = "lolz") -> tuple[float, float]:
    """Structural error terms of the LOLZ and systematic-row limits, up to an
    unknown absolute constant.

    lolz:   (1/|a k0|^2, a z*/l^2);  sysrow: (1/|a k0|^2, a^(3/2) |k0|^(1/2) z*/l^2)
    with a the reference length and l = |k0|/C_U.
    """
    a = ctx.a_ref
    ell = scattering_length(ctx, k0_norm)
    first = 1.0 / (a * k0_norm) ** 2
    if variant == "lolz":
        second = a * z_star / ell**2
    elif variant == "sysrow":
        second = a**1.5 * math.sqrt(k0_norm) * z_star / ell**2
    else:
        raise ValidationError(f"unknown variant {variant!r}; use 'lolz' or 'sysrow'")
    return first, second


def scattering_length(ctx: BoundContext, k0_norm: float) -> float:
    return k0_norm / ctx.C_U


def thickness_ratio(ctx: BoundContext, k0_norm: float, z_star: float) -> float:
    """z* / (|a k0|^(1/3) l_scatt); the asymptotic limits need it to be O(1)."""
    return z_star / ((ctx.a_ref * k0_norm) ** (1 / 3) * scattering_length(ctx, k0_norm))


@dataclass(frozen=True)
class CharacteristicLengths:
    scattering: float  # nm
    collective: float  # alpha / kappa(alpha), nm^2: thickness per unit |g|
    extinction: dict  # index -> nm, inf where U_g = 0
    excitation: dict  # index -> nm, inf where s_g = 0


def characteristic_lengths(ctx: BoundContext, k0_norm: float, beams, pot) -> CharacteristicLengths:
    """Scattering, collective, extinction |rho_g|/|U_g| and excitation 1/|s_g| lengths."""
    k = kappa(ctx)
    collective = ctx.alpha / k if k > 0 else math.inf
    rho, _, s, _ = beams.geometry()
    ext, exc = {}, {}
    for n, r, sv in zip(beams.indices, rho, s):
        u = abs(pot[n])
        ext[n] = abs(r) / u if u > 0 else math.inf
        exc[n] = 1.0 / abs(sv) if sv != 0 else math.inf
    return CharacteristicLengths(scattering_length(ctx, k0_norm), collective, ext, exc)
