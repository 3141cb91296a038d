"""Self-check of an installation: runs invariant groups and reports pass/fail for each."""
import itertools
import logging
from collections import Counter

import numpy as np

from physics import constants
from physics.analysis import raman_point, relative_sensitivity, spectral_slope
from physics.spectrum import SpectrumModel, configuration_species, enumerate_ladder, predict_a15_from_a14
from physics.spin_core import (
    ElectronParams,
    IsotopeSpecies,
    NuclearSite,
    SpinSystem,
    build_full_hamiltonian,
    eigen_hermitian,
    eigen_residual,
    transition_frequencies,
)
from utils.command import Command, RunContext
from utils.config import RamanBlock, ValidateBlock
from utils.errors import EXIT_OK, EXIT_VALIDATION, VBScopeError
from utils.files import write_json_report

logger = logging.getLogger(__name__)

EXPECTED_LEVELS = (27, 18, 12, 8)
SLOPE_RATIO_TARGET = 1.8
SLOPE_RATIO_TOLERANCE = 0.05
MEASURED_A15 = 64.0  # MHz
DEFAULT_SEED = 0


def brute_force_degeneracies(n15_count: int) -> list[int]:
    """Degeneracy of each m_tot, ascending, from explicit product-state enumeration"""
    species = configuration_species(n15_count)
    counts = Counter(sum(label) for label in itertools.product(*(s.projections for s in species)))
    return [counts[m] for m in sorted(counts)]


class Validate(Command):
    name = "validate"
    help = "Run the built-in invariant groups and report pass/fail per group"

    def run(self, context: RunContext) -> int:
        block = context.config.validate_ or ValidateBlock()
        seed = DEFAULT_SEED if context.seed is None else context.seed
        groups = {}
        for group in block.groups:
            rng = np.random.default_rng(seed)
            check = getattr(self, f"check_{group}")
            try:
                passed, details = check(block, rng)
            except VBScopeError as e:
                passed, details = False, {"error": str(e)}
            groups[group] = {"passed": bool(passed), **details}
            (logger.info if passed else logger.error)(f"Group {group}: {'passed' if passed else 'FAILED'}")

        all_passed = all(entry["passed"] for entry in groups.values())
        write_json_report(
            context.output_path("validate.json"),
            {"command": self.name, "seed": seed, "passed": all_passed, "groups": groups},
        )
        return EXIT_OK if all_passed else EXIT_VALIDATION

    def check_ladder(self, block: ValidateBlock, rng):
        injected = block.inject_degeneracies or {}
        mismatches = []
        tables = {}
        for n in range(4):
            ladder = enumerate_ladder(n)
            table = list(injected.get(str(n), ladder.degeneracies))
            expected = brute_force_degeneracies(n)
            tables[str(n)] = table
            if table != expected:
                mismatches.append(f"#{n}: got {table}, enumeration gives {expected}")
            if sum(table) != EXPECTED_LEVELS[n]:
                mismatches.append(f"#{n}: N_level {sum(table)} != {EXPECTED_LEVELS[n]}")
        zero = enumerate_ladder(0)
        central = zero.degeneracy(0.0) / zero.n_level
        if abs(central - 7 / 27) > 1e-15:
            mismatches.append(f"#0 central occupancy {central} != 7/27")
        if list(enumerate_ladder(3).degeneracies) != [1, 3, 3, 1]:
            mismatches.append("#3 ladder is not (1, 3, 3, 1)")
        return not mismatches, {"tables": tables, "mismatches": mismatches}

    @staticmethod
    def _random_configuration(n: int, rng, b_max: float, **flags) -> SpinSystem:
        return SpinSystem.from_configuration(
            n,
            a14=rng.uniform(20.0, 60.0),
            a15=-rng.uniform(40.0, 90.0),
            b_z=rng.uniform(0.0, b_max),
            d_gs=rng.uniform(3400.0, 3500.0),
            **flags,
        )

    @staticmethod
    def _deviation(sys: SpinSystem) -> float:
        effective = transition_frequencies(sys, "effective")
        full = transition_frequencies(sys, "full")
        worst = 0.0
        for branch in (1, -1):
            a, b = effective.frequencies(branch), full.frequencies(branch)
            if a.size != b.size:
                return float("inf")
            worst = max(worst, float(np.max(np.abs(a - b))))
        return worst

    def check_oracle(self, block: ValidateBlock, rng):
        worst = 0.0
        for n in range(4):
            for _ in range(block.draws):
                worst = max(worst, self._deviation(self._random_configuration(n, rng, block.max_field_mt)))
        return worst <= block.oracle_tolerance_mhz, {
            "max_deviation_mhz": worst,
            "tolerance_mhz": block.oracle_tolerance_mhz,
            "draws_per_configuration": block.draws,
        }

    def check_nuclear_zeeman_bound(self, block: ValidateBlock, rng):
        violations = 0
        worst_ratio = 0.0
        for n in range(4):
            for _ in range(block.draws):
                sys = self._random_configuration(n, rng, block.max_field_mt, include_nuclear_zeeman=True)
                bound = sum(abs(s.species.gamma_n) for s in sys.sites) / constants.KHZ_PER_MHZ * sys.electron.b_z
                deviation = self._deviation(sys)
                if deviation > bound + block.oracle_tolerance_mhz:
                    violations += 1
                if bound > 0:
                    worst_ratio = max(worst_ratio, deviation / bound)
        return violations == 0, {"violations": violations, "max_deviation_over_bound": worst_ratio}

    @staticmethod
    def _random_full_system(n: int, rng) -> SpinSystem:
        sites = []
        for j in range(1, 4):
            if j <= n:
                a_zz = -rng.uniform(40.0, 90.0)
                sites.append(NuclearSite(IsotopeSpecies.N15, np.diag([0.3 * a_zz, 0.3 * a_zz, a_zz]), site_index=j))
            else:
                a_zz = rng.uniform(20.0, 60.0)
                quadrupole = tuple(rng.uniform(-2.0, 2.0, size=3))
                sites.append(
                    NuclearSite(IsotopeSpecies.N14, np.diag([0.3 * a_zz, 0.3 * a_zz, a_zz]), quadrupole, site_index=j)
                )
        electron = ElectronParams(
            d_gs=rng.uniform(3400.0, 3500.0),
            e_x=rng.uniform(0.0, 20.0),
            e_y=rng.uniform(0.0, 20.0),
            b_field=tuple(rng.uniform(-30.0, 30.0, size=3)),
        )
        return SpinSystem(electron, tuple(sites))

    def check_eigensolver(self, block: ValidateBlock, rng):
        worst = 0.0
        for n in range(4):
            for _ in range(block.eigensolver_draws):
                hamiltonian = build_full_hamiltonian(self._random_full_system(n, rng))
                worst = max(worst, eigen_residual(hamiltonian, eigen_hermitian(hamiltonian)))
        return worst <= block.eigensolver_tolerance, {
            "max_residual": worst,
            "tolerance": block.eigensolver_tolerance,
        }

    def check_hyperfine_ratio(self, block: ValidateBlock, rng):
        predicted = abs(predict_a15_from_a14(constants.A_ZZ_14N))
        ratio = abs(constants.GAMMA_15N / constants.GAMMA_14N)
        passed = (
            abs(predicted - 60.3) < 0.05
            and abs(ratio - 1.4027) < 5e-5
            and abs(MEASURED_A15 - predicted) <= 0.1 * predicted
        )
        return passed, {"predicted_a15_mhz": predicted, "gamma_ratio": ratio, "measured_a15_mhz": MEASURED_A15}

    def check_slope_ratio(self, block: ValidateBlock, rng):
        base = SpectrumModel(f_center=2312.0, contrast=0.05, linewidth=50.0)
        grid = np.linspace(base.f_center - 250.0, base.f_center + 250.0, 2001)
        n14 = spectral_slope(base.replace(p15=0.0), grid, "per_contrast")
        n15 = spectral_slope(base.replace(p15=1.0), grid, "per_contrast")
        gain = relative_sensitivity(n14, n15)
        return abs(gain - SLOPE_RATIO_TARGET) <= SLOPE_RATIO_TOLERANCE, {
            "slope_ratio_15n_over_14n": gain,
            "max_slope_14n_per_mhz": n14.max_slope,
            "max_slope_15n_per_mhz": n15.max_slope,
        }

    def check_raman(self, block: ValidateBlock, rng):
        reference = RamanBlock()
        deviations = {}
        for sample in reference.samples:
            point = raman_point(sample.boron_frac_10, sample.nitrogen_frac_15)
            deviations[sample.name] = point.shift - sample.measured_shift_cm1
        passed = all(abs(d) <= reference.tolerance_cm1 for d in deviations.values())
        return passed, {"deviations_cm1": deviations, "tolerance_cm1": reference.tolerance_cm1}


def setup(app):
    app.add_command(Validate(app))
