"""Run configuration: a strict pydantic schema over JSON files.

Relative paths in a config file resolve against the file's directory while the
document is validated, so every command sees absolute paths.
"""
import json
import logging
import os
from pathlib import Path
from typing import Annotated, Literal

from pydantic import AfterValidator, BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, model_validator

from physics import constants
from physics.spectrum import Populations, SpectrumModel, enumerate_ladder
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"
DEFAULTS_PATH = CONFIG_DIR / "defaults.json"
DEFAULT_OUTPUT_DIR = Path("output")
MAX_SEED = 2**64 - 1

ENV_OUTPUT_DIR = "VBSCOPE_OUTPUT_DIR"
ENV_LOG_LEVEL = "VBSCOPE_LOG_LEVEL"
ENV_SEED = "VBSCOPE_SEED"

VALIDATE_GROUPS = ("ladder", "oracle", "nuclear_zeeman_bound", "eigensolver", "hyperfine_ratio", "slope_ratio", "raman")


def _resolve_path(value: Path, info: ValidationInfo) -> Path:
    base = (info.context or {}).get("base_dir")
    if base is not None and not value.is_absolute():
        value = Path(base) / value
    return value.resolve()


ResolvedPath = Annotated[Path, AfterValidator(_resolve_path)]


class Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PhysicalDefaults(Block):
    d_ground_mhz: float = constants.D_GROUND
    d_excited_mhz: float = constants.D_EXCITED
    gamma_e_mhz_per_mt: float = Field(constants.GAMMA_E, gt=0)
    a14_mhz: float = constants.A_ZZ_14N
    a15_mhz: float = constants.A_ZZ_15N
    grid_half_span_mhz: float = Field(250.0, gt=0)
    grid_points: int = Field(801, ge=8)


class IsotopeBlock(Block):
    p15: float = Field(0.0, ge=0, le=1)
    boron_frac_10: float = Field(constants.NATURAL_10B_FRACTION, ge=0, le=1)


class GridBlock(Block):
    f_min_mhz: float
    f_max_mhz: float
    points: int = Field(801, ge=8)

    @model_validator(mode="after")
    def _ordered(self):
        if self.f_max_mhz <= self.f_min_mhz:
            raise ValueError("f_max_mhz must exceed f_min_mhz")
        return self


class ModelBlock(Block):
    f_center_mhz: float
    contrast: float = Field(ge=0, lt=1)
    linewidth_mhz: float = Field(gt=0)
    branch: Literal[-1, 1] = -1
    a14_mhz: float | None = None
    a15_mhz: float | None = None
    p15: float | None = Field(None, ge=0, le=1)
    # exp(beta * m_tot) nuclear populations in every configuration
    polarization_beta: float | None = None

    def to_model(self, isotopes: IsotopeBlock, defaults: PhysicalDefaults) -> SpectrumModel:
        populations = None
        if self.polarization_beta is not None:
            populations = {
                n: Populations.spin_temperature(enumerate_ladder(n), self.polarization_beta) for n in range(4)
            }
        return SpectrumModel(
            f_center=self.f_center_mhz,
            contrast=self.contrast,
            linewidth=self.linewidth_mhz,
            branch=self.branch,
            a14=defaults.a14_mhz if self.a14_mhz is None else self.a14_mhz,
            a15=defaults.a15_mhz if self.a15_mhz is None else self.a15_mhz,
            p15=isotopes.p15 if self.p15 is None else self.p15,
            populations=populations,
        )


class SimulateBlock(Block):
    model: ModelBlock
    grid: GridBlock | None = None
    noise_sigma: float = Field(0.0, ge=0)
    per_configuration: bool = False
    output_name: str = "spectrum"


class FitBlock(Block):
    inputs: list[ResolvedPath] = Field(min_length=1)
    mode: Literal["physical", "free"] = "physical"
    p15: float | Literal["free"] | None = None
    init: ModelBlock | None = None
    fixed: list[Literal["f_center", "contrast", "linewidth", "a14_abs", "a15_abs", "p15"]] = []
    n_lines: int = Field(4, ge=1)
    spacing_mhz: float = Field(abs(constants.A_ZZ_15N), gt=0)
    linewidth_guess_mhz: float = Field(50.0, gt=0)
    starts: int = Field(5, ge=1, le=5)
    max_iterations: int = Field(500, ge=1)
    d_gs_mhz: float | None = None
    polarization: bool = False
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _p15_range(self):
        if isinstance(self.p15, float) and not 0 <= self.p15 <= 1:
            raise ValueError("p15 must lie in [0, 1] or be 'free'")
        return self


def _default_sensitivity_models() -> dict[str, ModelBlock]:
    return {
        "hB14N": ModelBlock(f_center_mhz=2312.0, contrast=0.05, linewidth_mhz=50.0, a14_mhz=constants.A_ZZ_14N, p15=0.0),
        "hB15N": ModelBlock(f_center_mhz=2312.0, contrast=0.05, linewidth_mhz=50.0, a15_mhz=constants.A_ZZ_15N, p15=1.0),
    }


class SensitivityBlock(Block):
    models: dict[str, ModelBlock] = Field(default_factory=_default_sensitivity_models, min_length=1)
    reference: str | None = None
    normalization: Literal["raw", "per_contrast"] = "per_contrast"
    grid: GridBlock | None = None
    photon_rate_hz: float | None = Field(None, gt=0)
    duration_s: float | None = Field(None, gt=0)

    @model_validator(mode="after")
    def _reference_known(self):
        if self.reference is not None and self.reference not in self.models:
            raise ValueError(f"reference {self.reference!r} is not one of the models")
        return self


class AreaEntry(Block):
    m_tot: float
    area: float = Field(ge=0)


class PolarizationBlock(Block):
    areas: list[AreaEntry] | None = None
    input: ResolvedPath | None = None
    n_lines: int = Field(4, ge=1)
    m_max: float | None = Field(None, gt=0)
    spacing_mhz: float = Field(abs(constants.A_ZZ_15N), gt=0)
    linewidth_guess_mhz: float = Field(50.0, gt=0)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.areas is None) == (self.input is None):
            raise ValueError("give exactly one of 'areas' or 'input'")
        return self


class RamanSample(Block):
    name: str
    boron_frac_10: float = Field(constants.NATURAL_10B_FRACTION, ge=0, le=1)
    nitrogen_frac_15: float = Field(ge=0, le=1)
    measured_shift_cm1: float | None = None


def _default_raman_samples() -> list[RamanSample]:
    return [
        RamanSample(name="hB14N", nitrogen_frac_15=0.0, measured_shift_cm1=1366.3),
        RamanSample(name="hB15N-60", nitrogen_frac_15=0.6, measured_shift_cm1=1354.8),
        RamanSample(name="hB15N", nitrogen_frac_15=1.0, measured_shift_cm1=1346.6),
    ]


class RamanBlock(Block):
    samples: list[RamanSample] = Field(default_factory=_default_raman_samples, min_length=1)
    tolerance_cm1: float = Field(2.5, gt=0)


class ValidateBlock(Block):
    groups: list[Literal[VALIDATE_GROUPS]] = list(VALIDATE_GROUPS)
    draws: int = Field(100, ge=1)
    oracle_tolerance_mhz: float = Field(1e-6, gt=0)
    eigensolver_tolerance: float = Field(1e-10, gt=0)
    eigensolver_draws: int = Field(2, ge=1)
    max_field_mt: float = Field(100.0, gt=0)
    # replaces the degeneracy table checked by the ladder group, keyed by 15N count
    inject_degeneracies: dict[Literal["0", "1", "2", "3"], list[int]] | None = None


class RunConfig(Block):
    output_dir: ResolvedPath | None = None
    seed: int | None = Field(None, ge=0, le=MAX_SEED)
    isotopes: IsotopeBlock = IsotopeBlock()
    defaults: PhysicalDefaults | None = None
    simulate: SimulateBlock | None = None
    fit: FitBlock | None = None
    sensitivity: SensitivityBlock | None = None
    polarization: PolarizationBlock | None = None
    raman: RamanBlock | None = None
    validate_: ValidateBlock | None = Field(None, alias="validate")

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


def _format_errors(exc: ValidationError) -> list[str]:
    return [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()]


def _read_json(path: Path, description: str) -> dict:
    if not path.is_file():
        raise ConfigError(f"{description} not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{description} {path} is not valid JSON (line {e.lineno}): {e.msg}") from e
    except OSError as e:
        logger.error(f"Error reading {description}: {e}")
        raise ConfigError(f"Could not read {description} {path}: {e}") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"{description} {path} must contain a JSON object")
    return payload


def load_config(path: Path | str | None) -> RunConfig:
    """Parse and validate a run configuration; ``None`` gives the all-defaults config"""
    if path is None:
        return RunConfig()
    path = Path(path).resolve()
    payload = _read_json(path, "Config file")
    try:
        config = RunConfig.model_validate(payload, context={"base_dir": path.parent})
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}", _format_errors(e)) from e
    logger.info(f"Loaded config: {path}")
    return config


def load_defaults(path: Path | str = DEFAULTS_PATH) -> PhysicalDefaults:
    """Physical defaults from ``config/defaults.json``; built-in values when the file is absent"""
    path = Path(path)
    if not path.exists():
        return PhysicalDefaults()
    try:
        return PhysicalDefaults.model_validate(_read_json(path, "Defaults file"))
    except ValidationError as e:
        raise ConfigError(f"Invalid defaults {path}", _format_errors(e)) from e


def effective_defaults(config: RunConfig) -> PhysicalDefaults:
    return config.defaults if config.defaults is not None else load_defaults()


def resolve_output_dir(config: RunConfig, override: Path | str | None = None) -> Path:
    """``--out`` beats the config file, which beats VBSCOPE_OUTPUT_DIR"""
    if override is not None:
        return Path(override).resolve()
    if config.output_dir is not None:
        return config.output_dir
    return Path(os.getenv(ENV_OUTPUT_DIR, str(DEFAULT_OUTPUT_DIR))).resolve()


def resolve_seed(config: RunConfig, override: int | None = None) -> int | None:
    """``--seed`` beats the config file, which beats VBSCOPE_SEED"""
    if override is not None:
        seed = override
    elif config.seed is not None:
        return config.seed
    else:
        raw = os.getenv(ENV_SEED)
        if raw is None or raw == "":
            return None
        try:
            seed = int(raw)
        except ValueError as e:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {raw!r}") from e
    if not 0 <= seed <= MAX_SEED:
        raise ConfigError(f"Seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def resolve_log_level(quiet: bool = False) -> int:
    if quiet:
        return logging.WARNING
    name = os.getenv(ENV_LOG_LEVEL, "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO
