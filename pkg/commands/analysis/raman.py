import logging

import numpy as np

from physics import constants
from physics.analysis import AnalysisError, nitrogen_fraction_from_shift, raman_point, raman_shift, reduced_mass
from utils.command import Command, RunContext
from utils.config import RamanBlock
from utils.errors import EXIT_OK
from utils.files import write_curve_csv, write_json_report

logger = logging.getLogger(__name__)

CURVE_POINTS = 101


class Raman(Command):
    name = "raman"
    help = "Predict Raman shifts from isotope composition and invert measured shifts"

    def run(self, context: RunContext) -> int:
        block = context.config.raman or RamanBlock()
        rows = []
        for sample in block.samples:
            point = raman_point(sample.boron_frac_10, sample.nitrogen_frac_15)
            row = {"name": sample.name, **point.to_dict()}
            if sample.measured_shift_cm1 is not None:
                deviation = point.shift - sample.measured_shift_cm1
                row["measured_shift_cm1"] = sample.measured_shift_cm1
                row["deviation_cm1"] = deviation
                row["within_tolerance"] = abs(deviation) <= block.tolerance_cm1
                try:
                    row["inferred_nitrogen_frac_15"] = nitrogen_fraction_from_shift(
                        sample.measured_shift_cm1, sample.boron_frac_10
                    )
                except AnalysisError as e:
                    logger.warning(f"{sample.name}: {e}")
                    row["inferred_nitrogen_frac_15"] = None
                logger.info(f"{sample.name}: predicted {point.shift:.1f} cm^-1, measured {sample.measured_shift_cm1}")
            rows.append(row)

        boron = context.config.isotopes.boron_frac_10
        fractions = np.linspace(0.0, 1.0, CURVE_POINTS)
        masses = np.array([reduced_mass(boron, x) for x in fractions])
        write_curve_csv(
            context.output_path("raman_curve.csv"),
            {
                "nitrogen_frac_15": fractions,
                "reduced_mass": masses,
                "shift_cm1": [raman_shift(mu) for mu in masses],
            },
        )
        write_json_report(
            context.output_path("raman.json"),
            {
                "command": self.name,
                "line": {"slope_cm1": constants.RAMAN_SLOPE, "intercept_cm1": constants.RAMAN_INTERCEPT},
                "tolerance_cm1": block.tolerance_cm1,
                "samples": rows,
            },
        )
        return EXIT_OK


def setup(app):
    app.add_command(Raman(app))
