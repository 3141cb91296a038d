"""Analytic ODMR spectra: level ladders, Lorentzian dips and isotope mixtures.

A defect configuration #n has ``n`` of its three nearest nitrogen sites
occupied by 15N. Line positions follow the secular model
f = f_center + branch * sum_j A_zz,j m_I,j and every nuclear product state
contributes one unit-peak Lorentzian weighted by its population.
"""
import dataclasses
import itertools
import logging
import math
from dataclasses import dataclass
from functools import reduce
from typing import Mapping, NamedTuple

import numpy as np

from physics import constants
from physics.spin_core import IsotopeSpecies
from utils.errors import VBScopeError

logger = logging.getLogger(__name__)

MERGE_TOLERANCE = 1e-9  # MHz
NORMALIZATION_TOLERANCE = 1e-12
DEFAULT_HALF_SPAN = 250.0  # MHz
DEFAULT_POINTS = 801

N14_MULTIPLICITY = (1, 1, 1)
N15_MULTIPLICITY = (1, 1)


class SpectrumError(VBScopeError, ValueError):
    """Invalid spectrum parameters or grid"""


@dataclass(frozen=True)
class LevelLadder:
    n15_count: int
    rungs: tuple[tuple[float, int], ...]  # (m_tot, degeneracy), ascending m_tot
    n_level: int

    def __post_init__(self):
        total = sum(d for _, d in self.rungs)
        if total != self.n_level:
            raise SpectrumError(f"Degeneracies sum to {total}, expected N_level = {self.n_level}")
        degeneracies = self.degeneracies
        if degeneracies != degeneracies[::-1]:
            raise SpectrumError(f"Ladder is not symmetric: {degeneracies}")

    @property
    def m_values(self) -> tuple[float, ...]:
        return tuple(m for m, _ in self.rungs)

    @property
    def degeneracies(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.rungs)

    @property
    def m_max(self) -> float:
        return self.rungs[-1][0]

    def degeneracy(self, m_tot: float) -> int:
        for m, d in self.rungs:
            if m == m_tot:
                return d
        return 0


def configuration_species(n15_count: int) -> tuple[IsotopeSpecies, ...]:
    """Site species of configuration #n, 15N on the first ``n15_count`` sites"""
    if not 0 <= n15_count <= 3:
        raise SpectrumError(f"n15_count must be in [0, 3], got {n15_count}")
    return (IsotopeSpecies.N15,) * n15_count + (IsotopeSpecies.N14,) * (3 - n15_count)


def enumerate_ladder(n15_count: int) -> LevelLadder:
    """Total-projection ladder of configuration #n by convolving per-site multiplicities"""
    if not 0 <= n15_count <= 3:
        raise SpectrumError(f"n15_count must be in [0, 3], got {n15_count}")
    factors = [N15_MULTIPLICITY] * n15_count + [N14_MULTIPLICITY] * (3 - n15_count)
    counts = reduce(np.convolve, factors, np.array([1]))
    m_max = (3 - n15_count) + n15_count / 2
    rungs = tuple((-m_max + k, int(c)) for k, c in enumerate(counts))
    n_level = 3 ** (3 - n15_count) * 2**n15_count
    return LevelLadder(n15_count=n15_count, rungs=rungs, n_level=n_level)


@dataclass(frozen=True)
class Populations:
    """Per-nuclear-state occupation keyed by m_tot; unpolarized means 1/N_level each"""

    ladder: LevelLadder
    weights: Mapping[float, float]

    def __post_init__(self):
        weights = {float(m): float(self.weights.get(m, 0.0)) for m in self.ladder.m_values}
        unknown = set(float(m) for m in self.weights) - set(weights)
        if unknown:
            raise SpectrumError(f"m_tot values {sorted(unknown)} are not on the ladder of #{self.ladder.n15_count}")
        if any(w < 0 for w in weights.values()):
            raise SpectrumError("Populations must be non-negative")
        total = sum(self.ladder.degeneracy(m) * w for m, w in weights.items())
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            raise SpectrumError(f"Populations sum to {total}, expected 1")
        object.__setattr__(self, "weights", weights)

    def weight(self, m_tot: float) -> float:
        return self.weights.get(float(m_tot), 0.0)

    @classmethod
    def unpolarized(cls, ladder: LevelLadder) -> "Populations":
        return cls(ladder, {m: 1.0 / ladder.n_level for m in ladder.m_values})

    @classmethod
    def from_weights(cls, ladder: LevelLadder, weights: Mapping[float, float]) -> "Populations":
        """Normalise relative per-state weights so that sum(degeneracy * weight) = 1"""
        total = sum(ladder.degeneracy(float(m)) * w for m, w in weights.items())
        if not total > 0:
            raise SpectrumError("Relative weights must have a positive total")
        return cls(ladder, {float(m): w / total for m, w in weights.items()})

    @classmethod
    def spin_temperature(cls, ladder: LevelLadder, beta: float) -> "Populations":
        """Weights proportional to exp(beta * m_tot); beta > 0 favours high m_tot"""
        shift = max(abs(m) for m in ladder.m_values) * abs(beta)
        return cls.from_weights(ladder, {m: math.exp(beta * m - shift) for m in ladder.m_values})


@dataclass(frozen=True)
class SpectrumModel:
    f_center: float
    contrast: float
    linewidth: float
    branch: int = -1
    a14: float = constants.A_ZZ_14N
    a15: float = constants.A_ZZ_15N
    p15: float = 0.0
    populations: Mapping[int, Populations] | None = None

    def __post_init__(self):
        if not 0.0 <= self.contrast < 1.0:
            raise SpectrumError(f"Contrast must lie in [0, 1), got {self.contrast}")
        if not self.linewidth > 0:
            raise SpectrumError(f"Linewidth must be positive, got {self.linewidth}")
        if not 0.0 <= self.p15 <= 1.0:
            raise SpectrumError(f"p15 must lie in [0, 1], got {self.p15}")
        if self.branch not in (1, -1):
            raise SpectrumError(f"Branch must be +1 or -1, got {self.branch}")

    def populations_for(self, n15_count: int) -> Populations:
        if self.populations and n15_count in self.populations:
            return self.populations[n15_count]
        return Populations.unpolarized(enumerate_ladder(n15_count))

    def hyperfine(self, species: IsotopeSpecies) -> float:
        return self.a15 if species is IsotopeSpecies.N15 else self.a14

    def replace(self, **changes) -> "SpectrumModel":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "f_center_mhz": self.f_center,
            "contrast": self.contrast,
            "linewidth_mhz": self.linewidth,
            "branch": self.branch,
            "a14_mhz": self.a14,
            "a15_mhz": self.a15,
            "p15": self.p15,
            "polarized": bool(self.populations),
        }


@dataclass(frozen=True, eq=False)
class Curve:
    frequencies: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        frequencies = np.array(self.frequencies, dtype=float)
        values = np.array(self.values, dtype=float)
        if frequencies.ndim != 1 or frequencies.size == 0:
            raise SpectrumError("Curve needs a non-empty one-dimensional frequency grid")
        if values.shape != frequencies.shape:
            raise SpectrumError("Curve frequencies and values differ in length")
        if np.any(np.diff(frequencies) <= 0):
            raise SpectrumError("Curve frequencies must be strictly increasing")
        frequencies.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "frequencies", frequencies)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.frequencies.size


class SpectralLine(NamedTuple):
    frequency: float
    count: int  # nuclear product states on this line
    weight: float  # summed per-state population


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise SpectrumError("Frequency grid must be a non-empty 1-D array")
    if np.any(np.diff(grid) <= 0):
        raise SpectrumError("Frequency grid must be strictly increasing")
    return grid


def default_grid(f_center: float, half_span: float = DEFAULT_HALF_SPAN, points: int = DEFAULT_POINTS) -> np.ndarray:
    return np.linspace(f_center - half_span, f_center + half_span, points)


def lorentzian(f, f0: float, fwhm: float):
    """Unit-peak Lorentzian: L(f0) = 1, L(f0 +- fwhm/2) = 1/2"""
    if not fwhm > 0:
        raise SpectrumError(f"FWHM must be positive, got {fwhm}")
    hw2 = (fwhm / 2) ** 2
    return hw2 / ((np.asarray(f, dtype=float) - f0) ** 2 + hw2)


def lorentzian_derivative(f, f0: float, fwhm: float):
    """dL/df of the unit-peak Lorentzian"""
    if not fwhm > 0:
        raise SpectrumError(f"FWHM must be positive, got {fwhm}")
    hw2 = (fwhm / 2) ** 2
    x = np.asarray(f, dtype=float) - f0
    return -2 * x * hw2 / (x**2 + hw2) ** 2


def line_positions(model: SpectrumModel, n15_count: int) -> list[SpectralLine]:
    """Distinct resonance lines of configuration #n, ascending in frequency.

    Product states are enumerated site by site with species-specific A_zz and
    merged when their frequencies agree within 1e-9 MHz.
    """
    species = configuration_species(n15_count)
    populations = model.populations_for(n15_count)
    couplings = [model.hyperfine(s) for s in species]
    grouped: list[list[float]] = []
    for label in itertools.product(*(s.projections for s in species)):
        shift = sum(a * m for a, m in zip(couplings, label))
        frequency = model.f_center + model.branch * shift
        weight = populations.weight(sum(label))
        for entry in grouped:
            if abs(entry[0] - frequency) <= MERGE_TOLERANCE:
                entry[1] += 1
                entry[2] += weight
                break
        else:
            grouped.append([frequency, 1, weight])
    grouped.sort(key=lambda entry: entry[0])
    return [SpectralLine(float(f), int(c), float(w)) for f, c, w in grouped]


def config_spectrum(model: SpectrumModel, n15_count: int, grid) -> Curve:
    """R(f) = 1 - C * sum_states weight * L(f_state, dnu) for configuration #n"""
    grid = _check_grid(grid)
    depth = np.zeros_like(grid)
    for line in line_positions(model, n15_count):
        depth += line.weight * lorentzian(grid, line.frequency, model.linewidth)
    return Curve(grid, 1.0 - model.contrast * depth)


def config_slope(model: SpectrumModel, n15_count: int, grid) -> np.ndarray:
    """Closed-form dR/df of ``config_spectrum``"""
    grid = _check_grid(grid)
    slope = np.zeros_like(grid)
    for line in line_positions(model, n15_count):
        slope -= line.weight * lorentzian_derivative(grid, line.frequency, model.linewidth)
    return model.contrast * slope


def binomial_fractions(p15: float) -> tuple[float, float, float, float]:
    """Fractions P_0..P_3 of configurations #0..#3 for a uniform 15N fraction"""
    if not 0.0 <= p15 <= 1.0:
        raise SpectrumError(f"p15 must lie in [0, 1], got {p15}")
    q = 1.0 - p15
    return (q**3, 3 * q**2 * p15, 3 * q * p15**2, p15**3)


def mixture_spectrum(model: SpectrumModel, grid) -> Curve:
    """Ensemble spectrum R_tot = sum_n P_n R_n"""
    grid = _check_grid(grid)
    total = np.zeros_like(grid)
    for n, fraction in enumerate(binomial_fractions(model.p15)):
        if fraction == 0.0:
            continue
        total += fraction * config_spectrum(model, n, grid).values
    return Curve(grid, total)


def mixture_slope(model: SpectrumModel, grid) -> np.ndarray:
    grid = _check_grid(grid)
    total = np.zeros_like(grid)
    for n, fraction in enumerate(binomial_fractions(model.p15)):
        if fraction == 0.0:
            continue
        total += fraction * config_slope(model, n, grid)
    return total


def predict_a15_from_a14(a14: float) -> float:
    """Scale a 14N hyperfine constant to 15N by the gyromagnetic-ratio ratio"""
    return a14 * constants.GAMMA_15N / constants.GAMMA_14N
