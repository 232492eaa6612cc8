"""Closed-form spectral line shapes.

Two profiles are used throughout the simulator:

* a peak-normalized Lorentzian

      L(nu) = 1 / (1 + 4 (nu - nu0)^2 / Gamma^2)

  with maximum 1 at line center and FWHM Gamma, modelling the natural
  (and saturation-broadened) response of a single velocity class;

* an area-normalized Doppler Gaussian

      g(nu) = 2 sqrt(ln 2) / (sqrt(pi) dnuD)
              * exp(-(2 sqrt(ln 2) (nu - nu0) / dnuD)^2)

  with FWHM dnuD and unit integral, modelling the thermal velocity
  distribution of the vapor.

The normalization asymmetry (peak vs. area) is intentional; all amplitude
scaling of synthesized spectra lives in the spectrum module.
"""

import math
from dataclasses import dataclass

import numpy as np

from .constants import CODATA, PhysicalConstants

_TWO_SQRT_LN2 = 2.0 * math.sqrt(math.log(2.0))


@dataclass(frozen=True)
class LorentzianParams:
    """Center detuning nu0 (Hz) and full width at half maximum (Hz)."""

    nu0: float
    gamma_fwhm: float

    def __post_init__(self):
        if not self.gamma_fwhm > 0:
            raise ValueError(f"gamma_fwhm must be > 0, got {self.gamma_fwhm}")


@dataclass(frozen=True)
class GaussianParams:
    """Center detuning nu0 (Hz) and Doppler full width at half maximum (Hz)."""

    nu0: float
    fwhm: float

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError(f"fwhm must be > 0, got {self.fwhm}")


def lorentzian(nu, p: LorentzianParams):
    """Peak-normalized Lorentzian; accepts scalar or array detuning (Hz)."""
    x = (np.asarray(nu, dtype=float) - p.nu0) / p.gamma_fwhm
    out = 1.0 / (1.0 + 4.0 * x * x)
    return float(out) if np.isscalar(nu) else out


def doppler_gaussian(nu, p: GaussianParams):
    """Area-normalized Gaussian density per Hz; scalar or array detuning."""
    arg = _TWO_SQRT_LN2 * (np.asarray(nu, dtype=float) - p.nu0) / p.fwhm
    out = (_TWO_SQRT_LN2 / (math.sqrt(math.pi) * p.fwhm)) * np.exp(-arg * arg)
    return float(out) if np.isscalar(nu) else out


def doppler_fwhm(temperature, mass, nu0_abs, c: PhysicalConstants = CODATA):
    """Doppler FWHM (Hz) of a line at absolute frequency nu0_abs.

        dnuD = 2 sqrt(2 kB T ln2 / (m c^2)) * nu0

    temperature in K, mass in kg. Scales as sqrt(T) and linearly in nu0.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if not mass > 0:
        raise ValueError(f"mass must be > 0, got {mass}")
    if not nu0_abs > 0:
        raise ValueError(f"nu0_abs must be > 0, got {nu0_abs}")
    return (
        2.0
        * math.sqrt(2.0 * c.boltzmann * temperature * math.log(2.0) / (mass * c.speed_of_light**2))
        * nu0_abs
    )


def saturation_broadened_width(gamma_fwhm, s):
    """Power-broadened Lorentzian FWHM: Gamma * sqrt(1 + s), s >= 0."""
    if not gamma_fwhm > 0:
        raise ValueError(f"gamma_fwhm must be > 0, got {gamma_fwhm}")
    if s < 0:
        raise ValueError(f"saturation parameter must be >= 0, got {s}")
    return gamma_fwhm * math.sqrt(1.0 + s)
