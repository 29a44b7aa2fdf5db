"""Physical constants (SI units, CODATA 2018)."""

import math

C0 = 299_792_458.0            # speed of light in vacuum, m/s
EPSILON_0 = 8.8541878128e-12  # vacuum permittivity, F/m


def wavenumber(f_c: float) -> float:
    """Free-space wavenumber 2*pi*f_c/c in rad/m."""
    return 2.0 * math.pi * f_c / C0


def wavelength(f_c: float) -> float:
    """Free-space wavelength c/f_c in meters."""
    return C0 / f_c
