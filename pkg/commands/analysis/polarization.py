import logging

from physics.analysis import level_anticrossing_fields, polarization_from_areas, quartet_m_values
from physics.fit import estimate_free_model, fit_free_lorentzians, line_areas
from utils.command import Command, RunContext
from utils.errors import EXIT_NOT_CONVERGED, EXIT_OK, ConfigError
from utils.files import ingest_csv, write_json_report

logger = logging.getLogger(__name__)


class Polarization(Command):
    """Nuclear polarization from line areas, given directly or from a free-Lorentzian fit"""

    name = "polarization"
    help = "Estimate nuclear-spin polarization from resolved line areas"

    def run(self, context: RunContext) -> int:
        block = self.require_block(context, "polarization")
        report = {"command": self.name}
        code = EXIT_OK

        if block.areas is not None:
            areas = {}
            for entry in block.areas:
                if entry.m_tot in areas:
                    raise ConfigError(f"Area for m_tot = {entry.m_tot} given twice")
                areas[entry.m_tot] = entry.area
            report["source"] = "areas"
        else:
            spectrum = ingest_csv(block.input)
            init = estimate_free_model(spectrum, block.n_lines, block.spacing_mhz, block.linewidth_guess_mhz)
            result = fit_free_lorentzians(spectrum, block.n_lines, init)
            areas = dict(zip(quartet_m_values(block.n_lines), line_areas(result, block.n_lines)))
            report["source"] = "fit"
            report["input"] = block.input
            report["fit"] = result.to_dict()
            report["assignment"] = "ascending frequency is ascending m_tot"
            if not result.converged:
                logger.error(f"Line fit did not converge ({result.message})")
                code = EXIT_NOT_CONVERGED

        estimate = polarization_from_areas(areas, block.m_max)
        logger.info(f"Polarization {estimate.polarization:+.4f} (m_max = {estimate.m_max})")
        report.update(estimate.to_dict())
        defaults = context.defaults
        # excited-state anticrossing field of each 15N quartet level
        fields = level_anticrossing_fields(defaults.d_excited_mhz, defaults.a15_mhz, 3, defaults.gamma_e_mhz_per_mt)
        report["eslac_fields_mt"] = [{"m_tot": m, "field_mt": f} for m, f in sorted(fields.items())]
        write_json_report(context.output_path("polarization.json"), report)
        return code


def setup(app):
    app.add_command(Polarization(app))
