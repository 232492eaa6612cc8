"""Physical constants used by the line-shape formulas.

Values are the exact 2019 SI definitions; they are pinned here rather than
pulled from scipy so the package output cannot drift with library updates.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    boltzmann: float = 1.380649e-23      # J/K
    speed_of_light: float = 299792458.0  # m/s


CODATA = PhysicalConstants()
