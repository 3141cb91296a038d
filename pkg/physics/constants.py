"""Physical constants and material parameters.

Units used everywhere in the package: frequencies in MHz, fields in mT,
nuclear gyromagnetic ratios in kHz/mT, distances in nm, Raman shifts in cm^-1.
"""
from scipy import constants as codata

# CODATA values (SI)
MU_0 = codata.mu_0  # T m / A
PLANCK = codata.h  # J s

# Electron spin of the boron vacancy
GAMMA_E = 28.0  # MHz/mT
D_GROUND = 3466.0  # MHz, fitted ground-state zero-field splitting
D_EXCITED = 2130.0  # MHz, excited-state zero-field splitting at zero field

# Nearest-neighbour nitrogen nuclei
GAMMA_14N = 3.077  # kHz/mT
GAMMA_15N = -4.316  # kHz/mT
A_ZZ_14N = 43.0  # MHz, sign most likely positive
A_ZZ_15N = -64.0  # MHz, sign inferred from the polarization trend

# Atomic masses (u)
MASS_10B = 10.0129
MASS_11B = 11.0093
MASS_14N = 14.0031
MASS_15N = 15.0001
NATURAL_10B_FRACTION = 0.199

# Empirical phonon line: shift = RAMAN_SLOPE * sqrt(mu) + RAMAN_INTERCEPT
RAMAN_SLOPE = -537.0  # cm^-1
RAMAN_INTERCEPT = 2691.0  # cm^-1

# Unit conversions
KHZ_PER_MHZ = 1e3
HZ_PER_T_FROM_MHZ_PER_MT = 1e9  # 1 MHz/mT = 1e9 Hz/T
HZ_PER_T_FROM_KHZ_PER_MT = 1e6  # 1 kHz/mT = 1e6 Hz/T
M_PER_NM = 1e-9
