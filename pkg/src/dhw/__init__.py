"""Darwin-Howie-Whelan beam simulations with a-priori beam-selection error certificates."""

from .beamsel import BeamSet, g_ball, g_ewald, lolz, systematic_row, threshold_select, validate
from .bounds import BoundContext, ErrorCertificate
from .crystal import LatticeFrame, WaveVector, beam_geometry, dual_points, relativistic_params
from .errors import DhwError, InvariantViolation, NumericError, ValidationError
from .potential import FourierPotential, fit_decay, from_atoms, from_coefficients, lattice_sum_S
from .solver import assemble, evolve, evolve_oracle

__version__ = "0.1.0"

__all__ = [
    "BeamSet", "BoundContext", "DhwError", "ErrorCertificate", "FourierPotential",
    "InvariantViolation", "LatticeFrame", "NumericError", "ValidationError", "WaveVector",
    "assemble", "beam_geometry", "dual_points", "evolve", "evolve_oracle", "fit_decay",
    "from_atoms", "from_coefficients", "g_ball", "g_ewald", "lattice_sum_S", "lolz",
    "relativistic_params", "systematic_row", "threshold_select", "validate",
]
