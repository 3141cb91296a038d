"""Quantities derived from spectra and fits.

Magnetometry slope and sensitivity, nuclear polarization from line areas, field
and anticrossing estimates, and the reduced-mass Raman line.
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Mapping

import numpy as np
from scipy.optimize import brentq

from physics import constants
from physics.fit import FitResult, line_areas
from physics.spectrum import (
    Curve,
    SpectrumModel,
    enumerate_ladder,
    line_positions,
    lorentzian,
    mixture_slope,
)
from utils.errors import VBScopeError

logger = logging.getLogger(__name__)

GRID_RESOLUTION_FACTOR = 20  # grid step must not exceed linewidth / 20
REDUCED_MASS_BOUNDS = (5.83, 6.35)

Normalization = Literal["raw", "per_contrast"]


class AnalysisError(VBScopeError, ValueError):
    """A derived quantity is undefined for the given input"""


@dataclass(frozen=True, eq=False)
class SensitivityReport:
    max_slope: float  # per MHz
    slope_curve: Curve
    eta_relative: float  # 1 / max_slope
    normalization: Normalization
    argmax_frequency: float  # MHz

    def to_dict(self) -> dict:
        return {
            "normalization": self.normalization,
            "max_slope_per_mhz": self.max_slope,
            "eta_relative": self.eta_relative if math.isfinite(self.eta_relative) else None,
            "max_slope_frequency_mhz": self.argmax_frequency,
        }


def spectral_slope(model: SpectrumModel, grid, normalization: Normalization = "raw") -> SensitivityReport:
    """Closed-form dR/df of the mixture spectrum and its maximum magnitude on ``grid``"""
    if normalization not in ("raw", "per_contrast"):
        raise AnalysisError(f"Unknown normalization {normalization!r}")
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise AnalysisError("Slope grid needs at least two points")
    step = float(np.max(np.diff(grid)))
    if step > model.linewidth / GRID_RESOLUTION_FACTOR * (1 + 1e-12):
        raise AnalysisError(
            f"Grid step {step:.4g} MHz is coarser than linewidth/{GRID_RESOLUTION_FACTOR} = "
            f"{model.linewidth / GRID_RESOLUTION_FACTOR:.4g} MHz"
        )

    if normalization == "per_contrast":
        # slope is linear in C, so evaluate the unit-contrast shape
        slope = mixture_slope(model.replace(contrast=0.5), grid) / 0.5
    else:
        slope = mixture_slope(model, grid)
    index = int(np.argmax(np.abs(slope)))
    max_slope = float(abs(slope[index]))
    eta = 1.0 / max_slope if max_slope > 0 else math.inf
    return SensitivityReport(
        max_slope=max_slope,
        slope_curve=Curve(grid, slope),
        eta_relative=eta,
        normalization=normalization,
        argmax_frequency=float(grid[index]),
    )


def relative_sensitivity(report_a: SensitivityReport, report_b: SensitivityReport) -> float:
    """eta_a / eta_b, i.e. max_slope_b / max_slope_a"""
    if report_a.normalization != report_b.normalization:
        raise AnalysisError(
            f"Cannot compare {report_a.normalization} and {report_b.normalization} slopes"
        )
    if report_a.max_slope == 0 or report_b.max_slope == 0:
        raise AnalysisError("Relative sensitivity is undefined for a zero slope")
    return report_b.max_slope / report_a.max_slope


def triangle_slope(contrast: float, linewidth: float) -> float:
    """C / dnu, the slope of a single dip approximated as a triangle"""
    if not linewidth > 0:
        raise AnalysisError(f"Linewidth must be positive, got {linewidth}")
    return contrast / linewidth


def field_sensitivity(
    report: SensitivityReport,
    photon_rate: float,
    duration: float | None = None,
    gamma_e: float = constants.GAMMA_E,
) -> float:
    """Shot-noise limited field resolution.

    Returns the minimum detectable field in mT for a measurement of
    ``duration`` seconds, or eta_B in mT/sqrt(Hz) when no duration is given.
    """
    if report.normalization != "raw":
        raise AnalysisError("Absolute sensitivity needs a raw (not per-contrast) slope")
    if report.max_slope == 0:
        raise AnalysisError("Sensitivity is undefined for a zero slope")
    if not photon_rate > 0:
        raise AnalysisError(f"Photon rate must be positive, got {photon_rate}")
    eta = 1.0 / (gamma_e * report.max_slope * math.sqrt(photon_rate))
    if duration is None:
        return eta
    if not duration > 0:
        raise AnalysisError(f"Duration must be positive, got {duration}")
    return eta / math.sqrt(duration)


@dataclass(frozen=True)
class PolarizationReport:
    areas: dict[float, float]
    polarization: float
    m_max: float

    def to_dict(self) -> dict:
        return {
            "areas": [{"m_tot": m, "area": a} for m, a in sorted(self.areas.items())],
            "polarization": self.polarization,
            "m_max": self.m_max,
        }


def polarization_from_areas(areas: Mapping[float, float], m_max: float | None = None) -> PolarizationReport:
    """sum(m * A_m) / (m_max * sum(A_m)); ``m_max`` defaults to the largest |m_tot| present"""
    areas = {float(m): float(a) for m, a in areas.items()}
    if not areas:
        raise AnalysisError("No line areas given")
    if any(a < 0 for a in areas.values()):
        raise AnalysisError("Line areas must be non-negative")
    total = sum(areas.values())
    if total == 0:
        raise AnalysisError("All line areas are zero")
    largest = max(abs(m) for m in areas)
    m_max = largest if m_max is None else float(m_max)
    if not m_max > 0 or m_max < largest:
        raise AnalysisError(f"m_max = {m_max} does not bound the given m_tot values")
    polarization = sum(m * a for m, a in areas.items()) / (m_max * total)
    return PolarizationReport(areas=areas, polarization=polarization, m_max=m_max)


def quartet_m_values(n_lines: int) -> tuple[float, ...]:
    """m_tot of equally spaced lines in ascending frequency order"""
    if n_lines < 1:
        raise AnalysisError(f"Need at least one line, got {n_lines}")
    return tuple(-(n_lines - 1) / 2 + k for k in range(n_lines))


def polarization_from_fit(result: FitResult, n_lines: int = 4) -> PolarizationReport:
    """Areas of a free-Lorentzian fit mapped to ascending m_tot"""
    areas = dict(zip(quartet_m_values(n_lines), line_areas(result, n_lines)))
    return polarization_from_areas(areas)


def field_from_center(d_gs: float, f_center: float, gamma_e: float = constants.GAMMA_E) -> float:
    """B_z = (D - f_center) / gamma_e for the lower branch"""
    field = (d_gs - f_center) / gamma_e
    if field < 0:
        raise AnalysisError(
            f"Negative field {field:.3f} mT: centre {f_center} MHz lies above D = {d_gs} MHz (wrong branch?)"
        )
    return field


def level_anticrossing_fields(
    d: float = constants.D_EXCITED,
    a_zz: float = constants.A_ZZ_15N,
    n15_count: int = 3,
    gamma_e: float = constants.GAMMA_E,
) -> dict[float, float]:
    """Field in mT at which the m_S = 0 and -1 levels of each m_tot cross: (D - A m_tot) / gamma_e"""
    return {m: (d - a_zz * m) / gamma_e for m in enumerate_ladder(n15_count).m_values}


def line_selectivity(model: SpectrumModel, n15_count: int) -> list[tuple[float, float]]:
    """Share of the dip depth at each line centre that belongs to that line"""
    lines = line_positions(model, n15_count)
    result = []
    for line in lines:
        total = sum(other.weight * float(lorentzian(line.frequency, other.frequency, model.linewidth)) for other in lines)
        result.append((line.frequency, line.weight / total if total > 0 else math.nan))
    return result


@dataclass(frozen=True)
class RamanPoint:
    boron_frac_10: float
    nitrogen_frac_15: float
    reduced_mass: float
    shift: float  # cm^-1

    def __post_init__(self):
        lo, hi = REDUCED_MASS_BOUNDS
        if not lo <= self.reduced_mass <= hi:
            raise AnalysisError(f"Reduced mass {self.reduced_mass:.4f} outside [{lo}, {hi}]")

    def to_dict(self) -> dict:
        return {
            "boron_frac_10": self.boron_frac_10,
            "nitrogen_frac_15": self.nitrogen_frac_15,
            "reduced_mass": self.reduced_mass,
            "shift_cm1": self.shift,
        }


def reduced_mass(
    boron_frac_10: float = constants.NATURAL_10B_FRACTION,
    nitrogen_frac_15: float = 0.0,
    masses: Mapping[str, float] | None = None,
) -> float:
    """m_B m_N / (m_B + m_N) with composition-averaged masses.

    ``masses`` may override any of the keys "10B", "11B", "14N", "15N".
    """
    for name, value in (("boron_frac_10", boron_frac_10), ("nitrogen_frac_15", nitrogen_frac_15)):
        if not 0.0 <= value <= 1.0:
            raise AnalysisError(f"{name} must lie in [0, 1], got {value}")
    table = {"10B": constants.MASS_10B, "11B": constants.MASS_11B, "14N": constants.MASS_14N, "15N": constants.MASS_15N}
    table.update(masses or {})
    m_b = boron_frac_10 * table["10B"] + (1 - boron_frac_10) * table["11B"]
    m_n = nitrogen_frac_15 * table["15N"] + (1 - nitrogen_frac_15) * table["14N"]
    return m_b * m_n / (m_b + m_n)


def raman_shift(mu: float) -> float:
    if not mu > 0:
        raise AnalysisError(f"Reduced mass must be positive, got {mu}")
    return constants.RAMAN_SLOPE * math.sqrt(mu) + constants.RAMAN_INTERCEPT


def raman_point(boron_frac_10: float = constants.NATURAL_10B_FRACTION, nitrogen_frac_15: float = 0.0) -> RamanPoint:
    mu = reduced_mass(boron_frac_10, nitrogen_frac_15)
    return RamanPoint(boron_frac_10, nitrogen_frac_15, mu, raman_shift(mu))


def nitrogen_fraction_from_shift(shift: float, boron_frac_10: float = constants.NATURAL_10B_FRACTION) -> float:
    """15N fraction whose predicted Raman shift equals ``shift``"""

    def mismatch(fraction):
        return raman_shift(reduced_mass(boron_frac_10, fraction)) - shift

    low, high = mismatch(0.0), mismatch(1.0)
    if low * high > 0:
        raise AnalysisError(
            f"Shift {shift} cm^-1 is outside the range {raman_shift(reduced_mass(boron_frac_10, 1.0)):.1f}"
            f"-{raman_shift(reduced_mass(boron_frac_10, 0.0)):.1f} cm^-1 for this boron composition"
        )
    if low == 0:
        return 0.0
    if high == 0:
        return 1.0
    return float(brentq(mismatch, 0.0, 1.0, xtol=1e-12))
