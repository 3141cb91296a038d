import logging
import math

import numpy as np

from physics.analysis import (
    GRID_RESOLUTION_FACTOR,
    AnalysisError,
    field_sensitivity,
    relative_sensitivity,
    spectral_slope,
    triangle_slope,
)
from physics.spectrum import SpectrumModel
from utils.command import Command, RunContext
from utils.config import SensitivityBlock
from utils.errors import EXIT_OK
from utils.files import write_curve_csv, write_json_report

logger = logging.getLogger(__name__)


class Sensitivity(Command):
    """Compare the maximum spectral slope, and so the field sensitivity, of several models"""

    name = "sensitivity"
    help = "Spectral slopes and relative magnetometry sensitivity of named models"

    def slope_grid(self, model: SpectrumModel, block: SensitivityBlock, context: RunContext) -> np.ndarray:
        if block.grid is not None:
            return np.linspace(block.grid.f_min_mhz, block.grid.f_max_mhz, block.grid.points)
        half_span = context.defaults.grid_half_span_mhz
        step = model.linewidth / GRID_RESOLUTION_FACTOR
        points = max(context.defaults.grid_points, math.ceil(2 * half_span / step) + 1)
        return np.linspace(model.f_center - half_span, model.f_center + half_span, points)

    def run(self, context: RunContext) -> int:
        block = context.config.sensitivity or SensitivityBlock()
        reports = {}
        entries = {}
        for name, model_block in block.models.items():
            model = model_block.to_model(context.config.isotopes, context.defaults)
            report = spectral_slope(model, self.slope_grid(model, block, context), block.normalization)
            reports[name] = report
            entry = {"model": model.to_dict(), **report.to_dict()}
            amplitude = 1.0 if block.normalization == "per_contrast" else model.contrast
            entry["triangle_slope_per_mhz"] = triangle_slope(amplitude, model.linewidth)
            if block.photon_rate_hz is not None and block.normalization == "raw" and report.max_slope > 0:
                entry["eta_b_mt_per_sqrt_hz"] = field_sensitivity(
                    report, block.photon_rate_hz, gamma_e=context.defaults.gamma_e_mhz_per_mt
                )
                if block.duration_s is not None:
                    entry["b_min_mt"] = field_sensitivity(
                        report, block.photon_rate_hz, block.duration_s, context.defaults.gamma_e_mhz_per_mt
                    )
            entries[name] = entry
            write_curve_csv(
                context.output_path(f"slope_{name}.csv"),
                {"frequency_mhz": report.slope_curve.frequencies, "slope_per_mhz": report.slope_curve.values},
            )
            logger.info(f"{name}: max |dR/df| = {report.max_slope:.4e} per MHz ({block.normalization})")

        reference = block.reference or next(iter(block.models))
        for name, entry in entries.items():
            try:
                entry["eta_relative_to_reference"] = relative_sensitivity(reports[name], reports[reference])
                entry["slope_gain_vs_reference"] = 1.0 / entry["eta_relative_to_reference"]
            except AnalysisError as e:
                logger.warning(f"{name}: {e}")
                entry["eta_relative_to_reference"] = None
                entry["slope_gain_vs_reference"] = None

        write_json_report(
            context.output_path("sensitivity.json"),
            {"command": self.name, "normalization": block.normalization, "reference": reference, "models": entries},
        )
        return EXIT_OK


def setup(app):
    app.add_command(Sensitivity(app))
