import json

import numpy as np
import pytest

from physics.spectrum import SpectrumModel


@pytest.fixture()
def hbn15_model():
    # hB15N parameter set: 2308 MHz, C = 11 %, 51 MHz, |A15| = 64 MHz
    return SpectrumModel(f_center=2308.0, contrast=0.11, linewidth=51.0, a15=-64.0, p15=1.0)


@pytest.fixture()
def hbn14_model():
    return SpectrumModel(f_center=2312.0, contrast=0.056, linewidth=47.0, a14=43.0, p15=0.0)


@pytest.fixture()
def grid():
    return np.linspace(2058.0, 2562.0, 801)


@pytest.fixture()
def write_config(tmp_path):
    def write(payload, name="run.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return write


@pytest.fixture()
def write_spectrum(tmp_path):
    def write(frequencies, ratios, name="spectrum.csv", sigmas=None):
        path = tmp_path / name
        lines = ["frequency_mhz,ratio" + (",sigma" if sigmas is not None else "")]
        for k, (f, r) in enumerate(zip(frequencies, ratios)):
            row = f"{float(f)!r},{float(r)!r}"
            if sigmas is not None:
                row += f",{float(sigmas[k])!r}"
            lines.append(row)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return write
