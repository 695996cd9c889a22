"""Physical constants (CODATA 2018 via scipy.constants) and unit conversions."""

from scipy import constants as _c

PLANCK_H = _c.h  # J s
ELECTRON_MASS = _c.m_e  # kg
ELEMENTARY_CHARGE = _c.e  # C
SPEED_OF_LIGHT = _c.c  # m / s

M_PER_NM = 1e-9
PM_PER_NM = 1e3
NM_PER_ANGSTROM = 0.1
