import logging

import numpy as np

from physics.fit import synthesize_measurement
from physics.spectrum import binomial_fractions, config_spectrum, default_grid, line_positions
from utils.command import Command, RunContext
from utils.errors import EXIT_OK
from utils.files import write_curve_csv, write_json_report

logger = logging.getLogger(__name__)


class Simulate(Command):
    """Synthesise an isotope-mixture ODMR spectrum from a parameter block"""

    name = "simulate"
    help = "Simulate an ODMR spectrum and write it as CSV plus a JSON parameter echo"

    def run(self, context: RunContext) -> int:
        block = self.require_block(context, "simulate")
        defaults = context.defaults
        model = block.model.to_model(context.config.isotopes, defaults)
        if block.grid is not None:
            grid = np.linspace(block.grid.f_min_mhz, block.grid.f_max_mhz, block.grid.points)
        else:
            grid = default_grid(model.f_center, defaults.grid_half_span_mhz, defaults.grid_points)

        seed = context.seed if block.noise_sigma > 0 else None
        spectrum = synthesize_measurement(model, grid, block.noise_sigma, seed)
        logger.info(
            f"Simulated {len(spectrum)} points around {model.f_center} MHz "
            f"(p15={model.p15}, noise sigma={block.noise_sigma})"
        )

        name = block.output_name
        write_curve_csv(context.output_path(f"{name}.csv"), {"frequency_mhz": grid, "ratio": spectrum.ratios})
        if block.per_configuration:
            columns = {"frequency_mhz": grid}
            for n in range(4):
                columns[f"ratio_config_{n}"] = config_spectrum(model, n, grid).values
            write_curve_csv(context.output_path(f"{name}_configurations.csv"), columns)

        fractions = binomial_fractions(model.p15)
        report = {
            "command": self.name,
            "model": model.to_dict(),
            "grid": {"f_min_mhz": grid[0], "f_max_mhz": grid[-1], "points": grid.size},
            "noise_sigma": block.noise_sigma,
            "seed": seed,
            "configurations": [
                {
                    "n15_count": n,
                    "fraction": fractions[n],
                    "lines": [
                        {"frequency_mhz": line.frequency, "states": line.count, "weight": line.weight}
                        for line in line_positions(model, n)
                    ],
                }
                for n in range(4)
            ],
        }
        write_json_report(context.output_path(f"{name}.json"), report)
        return EXIT_OK


def setup(app):
    app.add_command(Simulate(app))
