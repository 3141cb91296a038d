import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from physics.analysis import AnalysisError, field_from_center, polarization_from_fit, quartet_m_values
from physics.fit import (
    FitResult,
    LMOptions,
    estimate_free_model,
    estimate_initial_model,
    fit_free_lorentzians,
    fit_physical,
    free_model_from_result,
)
from physics.spectrum import mixture_spectrum
from utils.command import Command, RunContext
from utils.errors import EXIT_NOT_CONVERGED, EXIT_OK, IngestionError
from utils.files import ingest_csv, write_curve_csv, write_json_report

logger = logging.getLogger(__name__)


class Fit(Command):
    """Fit one or more measured spectra; inputs are fitted concurrently"""

    name = "fit"
    help = "Fit measured spectra with the isotope-mixture model or free Lorentzians"

    def run(self, context: RunContext) -> int:
        block = self.require_block(context, "fit")
        missing = [str(path) for path in block.inputs if not path.is_file()]
        if missing:
            raise IngestionError("Input spectrum not found", missing)

        with ThreadPoolExecutor(max_workers=block.workers) as pool:
            codes = list(pool.map(lambda path: self.fit_one(path, context), block.inputs))
        return max(codes)

    def fit_one(self, path: Path, context: RunContext) -> int:
        block = context.config.fit
        defaults = context.defaults
        spectrum = ingest_csv(path)
        options = LMOptions(max_iterations=block.max_iterations)
        report = {"command": self.name, "input": path, "mode": block.mode, "samples": len(spectrum)}

        if block.mode == "physical":
            p15_mode = block.p15 if block.p15 is not None else context.config.isotopes.p15
            if block.init is not None:
                init = block.init.to_model(context.config.isotopes, defaults)
                if p15_mode != "free":
                    init = init.replace(p15=p15_mode)
            else:
                init = estimate_initial_model(
                    spectrum,
                    p15=0.5 if p15_mode == "free" else p15_mode,
                    a14=defaults.a14_mhz,
                    a15=defaults.a15_mhz,
                )
            result = fit_physical(spectrum, p15_mode, init, block.fixed, options)
            values = result.values()
            fitted = init.replace(
                f_center=values.get("f_center", init.f_center),
                contrast=values.get("contrast", init.contrast),
                linewidth=values.get("linewidth", init.linewidth),
                a14=np.copysign(values.get("a14_abs", abs(init.a14)), init.a14),
                a15=np.copysign(values.get("a15_abs", abs(init.a15)), init.a15),
                p15=values.get("p15", init.p15 if p15_mode == "free" else p15_mode),
            )
            model_curve = mixture_spectrum(fitted, spectrum.frequencies).values
            center = fitted.f_center
            report["p15_mode"] = p15_mode
            report["model"] = fitted.to_dict()
            if block.polarization:
                logger.warning("Polarization is only estimated from free-Lorentzian fits; flag ignored")
        else:
            init = estimate_free_model(spectrum, block.n_lines, block.spacing_mhz, block.linewidth_guess_mhz)
            result = fit_free_lorentzians(spectrum, block.n_lines, init, block.starts, options)
            free = free_model_from_result(result, block.n_lines)
            model_curve = free.evaluate(spectrum.frequencies)
            center = float(np.mean(free.centers))
            report["n_lines"] = block.n_lines
            if block.polarization:
                report["polarization"] = self.polarization_entry(result, block.n_lines)

        report["fit"] = result.to_dict()
        derived = {}
        if block.d_gs_mhz is not None:
            try:
                derived["field_mt"] = field_from_center(block.d_gs_mhz, center, defaults.gamma_e_mhz_per_mt)
            except AnalysisError as e:
                logger.warning(f"{path.name}: {e}")
                derived["field_error"] = str(e)
        report["derived"] = derived

        stem = path.stem
        write_curve_csv(
            context.output_path(f"{stem}_fit.csv"),
            {
                "frequency_mhz": spectrum.frequencies,
                "ratio": spectrum.ratios,
                "model": model_curve,
                "residual": spectrum.ratios - model_curve,
            },
        )
        write_json_report(context.output_path(f"{stem}_fit.json"), report)

        if not result.converged:
            logger.error(f"{path.name}: fit did not converge ({result.message})")
            return EXIT_NOT_CONVERGED
        logger.info(f"{path.name}: residual RMS {result.residual_norm:.3e} after {result.iterations} iterations")
        return EXIT_OK

    @staticmethod
    def polarization_entry(result: FitResult, n_lines: int) -> dict:
        entry = polarization_from_fit(result, n_lines).to_dict()
        entry["assignment"] = {
            "m_tot_by_ascending_frequency": list(quartet_m_values(n_lines)),
            "convention": "lower branch with A_zz(15N) < 0: ascending frequency is ascending m_tot",
        }
        return entry


def setup(app):
    app.add_command(Fit(app))
