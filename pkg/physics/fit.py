"""Least-squares estimation of spectrum parameters.

``lm_minimize`` is a Levenberg-Marquardt loop with bound projection and
forward-difference Jacobians. The three model fits built on it are the
constrained isotope-mixture model, a set of equally spaced free Lorentzians and
the PL saturation curve I_max * P / (P + P_sat).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal, Mapping

import numpy as np
import scipy.linalg
from scipy.optimize import nnls

from physics import constants
from physics.spectrum import (
    SpectrumModel,
    binomial_fractions,
    default_grid,
    lorentzian,
    mixture_spectrum,
)
from utils.errors import IngestionError, VBScopeError

logger = logging.getLogger(__name__)

MIN_SAMPLES = 8
DUPLICATE_TOLERANCE = 1e-9  # MHz
MULTISTART_SCALES = (1.0, 0.9, 1.1, 0.8, 1.2)
WIDTH_SCAN = tuple(float(w) for w in range(10, 155, 5))  # MHz
DEGENERACY_RCOND = 1e-12
P15_EDGE = 1e-3


class FitError(VBScopeError, RuntimeError):
    """A fit could not be set up or evaluated"""


@dataclass(frozen=True, eq=False)
class MeasuredSpectrum:
    frequencies: np.ndarray
    ratios: np.ndarray
    sigmas: np.ndarray | None = None
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        frequencies = np.array(self.frequencies, dtype=float)
        ratios = np.array(self.ratios, dtype=float)
        if frequencies.ndim != 1 or ratios.shape != frequencies.shape:
            raise IngestionError("Frequencies and ratios must be 1-D arrays of equal length")
        if frequencies.size < MIN_SAMPLES:
            raise IngestionError(f"insufficient samples: {frequencies.size} < {MIN_SAMPLES}")
        order = np.argsort(frequencies, kind="stable")
        frequencies, ratios = frequencies[order], ratios[order]
        gaps = np.diff(frequencies)
        if np.any(gaps <= DUPLICATE_TOLERANCE):
            duplicate = frequencies[1:][gaps <= DUPLICATE_TOLERANCE][0]
            raise IngestionError(f"Duplicate frequency {duplicate} MHz")
        if not (np.all(np.isfinite(frequencies)) and np.all(np.isfinite(ratios))):
            raise IngestionError("Spectrum contains non-finite values")

        sigmas = None
        if self.sigmas is not None:
            sigmas = np.array(self.sigmas, dtype=float)[order]
            if sigmas.shape != frequencies.shape or np.any(sigmas <= 0):
                raise IngestionError("Sigmas must be positive and match the samples")
            sigmas.setflags(write=False)

        metadata = dict(self.metadata)
        metadata.setdefault("rows", int(frequencies.size))
        metadata.setdefault("frequency_min_mhz", float(frequencies[0]))
        metadata.setdefault("frequency_max_mhz", float(frequencies[-1]))

        frequencies.setflags(write=False)
        ratios.setflags(write=False)
        object.__setattr__(self, "frequencies", frequencies)
        object.__setattr__(self, "ratios", ratios)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "metadata", metadata)

    def __len__(self):
        return self.frequencies.size


@dataclass(frozen=True)
class ParameterEstimate:
    value: float
    stderr: float


@dataclass(frozen=True, eq=False)
class FitResult:
    params: dict[str, ParameterEstimate]
    residual_norm: float  # root-mean-square of the (weighted) residual
    iterations: int
    converged: bool
    covariance: np.ndarray
    cost: float = 0.0  # sum of squared residuals
    message: str = ""
    diagnostics: tuple[str, ...] = ()
    derived: dict[str, float] = field(default_factory=dict)

    def value(self, name: str) -> float:
        return self.params[name].value

    def stderr(self, name: str) -> float:
        return self.params[name].stderr

    def values(self) -> dict[str, float]:
        return {name: p.value for name, p in self.params.items()}

    def to_dict(self) -> dict:
        def finite(x):
            return float(x) if math.isfinite(x) else None

        return {
            "params": {name: {"value": finite(p.value), "stderr": finite(p.stderr)} for name, p in self.params.items()},
            "residual_norm": finite(self.residual_norm),
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            "diagnostics": list(self.diagnostics),
            "covariance": [[finite(c) for c in row] for row in np.asarray(self.covariance)],
            "derived": {k: finite(v) for k, v in self.derived.items()},
        }


@dataclass(frozen=True)
class LMOptions:
    max_iterations: int = 500
    ftol: float = 1e-10  # relative cost change
    gtol: float = 1e-10  # gradient infinity norm
    initial_damping: float = 1e-3
    max_damping: float = 1e16
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None


def forward_jacobian(residual_fn, x, r0=None, lower=None, upper=None) -> np.ndarray:
    """Forward differences with step max(1e-6 |p|, 1e-8), stepping backwards at an upper bound"""
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(residual_fn(x), dtype=float) if r0 is None else r0
    upper = np.full_like(x, np.inf) if upper is None else upper
    jac = np.empty((r0.size, x.size))
    for k in range(x.size):
        h = max(1e-6 * abs(x[k]), 1e-8)
        if x[k] + h > upper[k]:
            h = -h
        shifted = x.copy()
        shifted[k] += h
        jac[:, k] = (np.asarray(residual_fn(shifted), dtype=float) - r0) / h
    return jac


def _degenerate_parameters(jac: np.ndarray, names: tuple[str, ...]) -> list[str]:
    normal = jac.T @ jac
    flat = [names[k] for k in range(len(names)) if not np.any(jac[:, k])]
    if flat:
        return [f"degenerate parameters (no effect on the residual): {', '.join(flat)}"]
    eigenvalues, eigenvectors = np.linalg.eigh(normal)
    if eigenvalues[-1] <= 0 or eigenvalues[0] > DEGENERACY_RCOND * eigenvalues[-1]:
        return []
    weakest = eigenvectors[:, 0]
    involved = [names[k] for k in np.argsort(-np.abs(weakest)) if abs(weakest[k]) > 0.3]
    return [f"degenerate parameters (identifiable only jointly): {', '.join(involved)}"]


def lm_minimize(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    init_params: Mapping[str, float],
    bounds: Mapping[str, tuple[float, float]] | None = None,
    options: LMOptions | None = None,
) -> FitResult:
    """Minimise sum(residual_fn(x)**2) over the named parameters"""
    options = options or LMOptions()
    bounds = bounds or {}
    names = tuple(init_params)
    x = np.array([float(init_params[n]) for n in names])
    lower = np.array([bounds.get(n, (-np.inf, np.inf))[0] for n in names], dtype=float)
    upper = np.array([bounds.get(n, (-np.inf, np.inf))[1] for n in names], dtype=float)
    outside = [n for n, v, lo, hi in zip(names, x, lower, upper) if not lo <= v <= hi]
    if outside:
        raise FitError(f"Initial values outside bounds: {', '.join(outside)}")

    r = np.asarray(residual_fn(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise FitError("Residual is not finite at the initial parameters")
    cost = float(r @ r)

    def jacobian_at(point, residual):
        if options.jacobian is not None:
            return np.asarray(options.jacobian(point), dtype=float)
        return forward_jacobian(residual_fn, point, residual, lower, upper)

    damping = options.initial_damping
    converged = False
    message = "iteration cap reached"
    iterations = 0
    while iterations < options.max_iterations:
        iterations += 1
        jac = jacobian_at(x, r)
        gradient = jac.T @ r
        if cost == 0.0 or np.max(np.abs(gradient)) < options.gtol:
            converged, message = True, "gradient below tolerance"
            break

        normal = jac.T @ jac
        scale = np.diag(normal).copy()
        scale[scale <= 0] = 1.0
        accepted = False
        while damping <= options.max_damping:
            try:
                step = scipy.linalg.solve(normal + damping * np.diag(scale), -gradient, assume_a="sym")
            except (scipy.linalg.LinAlgError, ValueError):
                damping *= 10
                continue
            candidate = np.clip(x + step, lower, upper)
            r_new = np.asarray(residual_fn(candidate), dtype=float)
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new < cost:
                accepted = True
                break
            damping *= 10
        if not accepted:
            converged, message = True, "no further reduction possible"
            break

        relative = (cost - cost_new) / cost
        x, r, cost = candidate, r_new, cost_new
        damping = max(damping / 10, 1e-15)
        if relative < options.ftol:
            converged, message = True, "relative cost change below tolerance"
            break

    jac = jacobian_at(x, r)
    n_samples, n_params = r.size, x.size
    dof = n_samples - n_params
    variance = cost / dof if dof > 0 else np.nan
    covariance = variance * np.linalg.pinv(jac.T @ jac)
    covariance = (covariance + covariance.T) / 2
    stderr = np.sqrt(np.clip(np.diag(covariance), 0, None))
    diagnostics = _degenerate_parameters(jac, names)
    for line in diagnostics:
        logger.warning(line)
    if not converged:
        logger.warning(f"Fit stopped after {iterations} iterations without converging")

    params = {n: ParameterEstimate(float(v), float(s)) for n, v, s in zip(names, x, stderr)}
    return FitResult(
        params=params,
        residual_norm=math.sqrt(cost / n_samples),
        iterations=iterations,
        converged=converged,
        covariance=covariance,
        cost=cost,
        message=message,
        diagnostics=tuple(diagnostics),
    )


def synthesize_measurement(
    model: SpectrumModel,
    grid=None,
    noise_sigma: float = 0.0,
    seed: int | None = None,
    metadata: Mapping[str, object] | None = None,
) -> MeasuredSpectrum:
    """Mixture spectrum of ``model`` with optional seeded Gaussian noise"""
    grid = default_grid(model.f_center) if grid is None else np.asarray(grid, dtype=float)
    ratios = mixture_spectrum(model, grid).values
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        ratios = ratios + rng.normal(0.0, noise_sigma, size=ratios.size)
    info = {"sample_id": "synthetic", "seed": seed, "noise_sigma": noise_sigma}
    info.update(metadata or {})
    return MeasuredSpectrum(grid, ratios, metadata=info)


def _dip_centroid(meas: MeasuredSpectrum) -> float:
    depth = np.clip(1.0 - meas.ratios, 0.0, None)
    if not np.any(depth > 0):
        return float(meas.frequencies[np.argmin(meas.ratios)])
    mask = depth >= 0.5 * depth.max()
    return float(np.sum(meas.frequencies[mask] * depth[mask]) / np.sum(depth[mask]))


def estimate_initial_model(
    meas: MeasuredSpectrum,
    p15: float = 0.0,
    a14: float = constants.A_ZZ_14N,
    a15: float = constants.A_ZZ_15N,
    branch: int = -1,
) -> SpectrumModel:
    """Starting point for ``fit_physical``.

    Centre from the depth-weighted centroid of the dip, linewidth from a scan
    over 10-150 MHz, contrast from a linear solve at each scanned width.
    The centroid replaces the spectrum minimum, which sits on a single line
    once the multiplet is resolved.
    """
    f_center = _dip_centroid(meas)
    depth = 1.0 - meas.ratios
    best = None
    for width in WIDTH_SCAN:
        unit = SpectrumModel(f_center=f_center, contrast=0.5, linewidth=width, branch=branch, a14=a14, a15=a15, p15=p15)
        shape = (1.0 - mixture_spectrum(unit, meas.frequencies).values) / 0.5
        contrast = float(shape @ depth / (shape @ shape))
        ssr = float(np.sum((depth - contrast * shape) ** 2))
        if best is None or ssr < best[0]:
            best = (ssr, width, contrast)
    _, width, contrast = best
    contrast = min(max(contrast, 1e-4), 0.9)
    logger.info(f"Initial model: f_center={f_center:.1f} MHz, C={contrast:.4f}, dnu={width:.0f} MHz")
    return SpectrumModel(f_center=f_center, contrast=contrast, linewidth=width, branch=branch, a14=a14, a15=a15, p15=p15)


def _residual_weights(meas: MeasuredSpectrum) -> np.ndarray | float:
    return 1.0 / meas.sigmas if meas.sigmas is not None else 1.0


def fit_physical(
    meas: MeasuredSpectrum,
    p15_mode: float | Literal["free"],
    init: SpectrumModel,
    fixed: Iterable[str] = (),
    options: LMOptions | None = None,
) -> FitResult:
    """Fit the isotope-mixture model to a measured spectrum.

    Hyperfine constants are fitted as magnitudes (``a14_abs``, ``a15_abs``);
    their signs are taken from ``init``. Parameters listed in ``fixed`` stay at
    their ``init`` values.
    """
    if isinstance(p15_mode, str):
        if p15_mode != "free":
            raise FitError(f"p15 mode must be a fraction or 'free', got {p15_mode!r}")
        p15_free, p15_value = True, init.p15
    else:
        p15_free, p15_value = False, float(p15_mode)
        if not 0.0 <= p15_value <= 1.0:
            raise FitError(f"Fixed p15 must lie in [0, 1], got {p15_value}")

    sign14 = -1.0 if init.a14 < 0 else 1.0
    sign15 = -1.0 if init.a15 < 0 else 1.0
    start = {"f_center": init.f_center, "contrast": init.contrast, "linewidth": init.linewidth}
    if p15_free or p15_value < 1.0:
        start["a14_abs"] = abs(init.a14)
    if p15_free or p15_value > 0.0:
        start["a15_abs"] = abs(init.a15)
    if p15_free:
        start["p15"] = p15_value
    fixed = set(fixed)
    unknown = fixed - {"f_center", "contrast", "linewidth", "a14_abs", "a15_abs", "p15"}
    if unknown:
        raise FitError(f"Unknown fixed parameters: {', '.join(sorted(unknown))}")
    for name in fixed:
        start.pop(name, None)

    bounds = {
        "contrast": (0.0, 0.999),
        "linewidth": (1e-3, np.inf),
        "a14_abs": (0.0, np.inf),
        "a15_abs": (0.0, np.inf),
        "p15": (0.0, 1.0),
    }
    names = tuple(start)
    weights = _residual_weights(meas)

    def build(x) -> SpectrumModel:
        values = dict(zip(names, x))
        return init.replace(
            f_center=values.get("f_center", init.f_center),
            contrast=values.get("contrast", init.contrast),
            linewidth=values.get("linewidth", init.linewidth),
            a14=sign14 * values.get("a14_abs", abs(init.a14)),
            a15=sign15 * values.get("a15_abs", abs(init.a15)),
            p15=values.get("p15", p15_value),
        )

    def residual(x):
        return (mixture_spectrum(build(x), meas.frequencies).values - meas.ratios) * weights

    logger.info(f"Physical fit of {len(meas)} samples, p15 {'free' if p15_free else p15_value}, parameters: {', '.join(names)}")
    result = lm_minimize(residual, start, bounds, options)

    diagnostics = list(result.diagnostics)
    if "p15" in result.params and not P15_EDGE < result.value("p15") < 1.0 - P15_EDGE:
        diagnostics.append(
            "p15 free on single-species data: the hyperfine constant of the absent isotope is not identifiable"
        )
    fitted = build(np.array([result.value(n) for n in names]))
    derived = {name: value for name, value in zip(("P0", "P1", "P2", "P3"), binomial_fractions(fitted.p15))}
    derived["p15"] = fitted.p15
    logger.info(f"Physical fit finished after {result.iterations} iterations (converged={result.converged})")
    return FitResult(
        params=result.params,
        residual_norm=result.residual_norm,
        iterations=result.iterations,
        converged=result.converged,
        covariance=result.covariance,
        cost=result.cost,
        message=result.message,
        diagnostics=tuple(diagnostics),
        derived=derived,
    )


@dataclass(frozen=True)
class FreeLorentzianModel:
    n_lines: int
    f_first: float
    spacing: float
    depths: tuple[float, ...]
    widths: tuple[float, ...]

    def __post_init__(self):
        depths = tuple(float(d) for d in self.depths)
        widths = tuple(float(w) for w in self.widths)
        if self.n_lines < 1:
            raise FitError(f"Need at least one line, got {self.n_lines}")
        if len(depths) != self.n_lines or len(widths) != self.n_lines:
            raise FitError(f"Expected {self.n_lines} depths and widths")
        if not self.spacing > 0:
            raise FitError(f"Spacing must be positive, got {self.spacing}")
        if any(d < 0 for d in depths) or any(w <= 0 for w in widths):
            raise FitError("Depths must be non-negative and widths positive")
        object.__setattr__(self, "depths", depths)
        object.__setattr__(self, "widths", widths)

    @property
    def centers(self) -> tuple[float, ...]:
        return tuple(self.f_first + m * self.spacing for m in range(self.n_lines))

    def evaluate(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        depth = np.zeros_like(grid)
        for center, c_m, width in zip(self.centers, self.depths, self.widths):
            depth += c_m * lorentzian(grid, center, width)
        return 1.0 - depth

    def areas(self) -> tuple[float, ...]:
        """Area proxies C_m * dnu_m"""
        return tuple(d * w for d, w in zip(self.depths, self.widths))


def _free_names(n_lines: int) -> tuple[str, ...]:
    names = ["f_first"]
    if n_lines > 1:
        names.append("spacing")
    names += [f"depth_{m}" for m in range(1, n_lines + 1)]
    names += [f"width_{m}" for m in range(1, n_lines + 1)]
    return tuple(names)


def free_model_from_result(result: FitResult, n_lines: int) -> FreeLorentzianModel:
    values = result.values()
    return FreeLorentzianModel(
        n_lines=n_lines,
        f_first=values["f_first"],
        spacing=values.get("spacing", 1.0),
        depths=tuple(values[f"depth_{m}"] for m in range(1, n_lines + 1)),
        widths=tuple(values[f"width_{m}"] for m in range(1, n_lines + 1)),
    )


def estimate_free_model(
    meas: MeasuredSpectrum,
    n_lines: int,
    spacing: float = abs(constants.A_ZZ_15N),
    linewidth: float = 50.0,
) -> FreeLorentzianModel:
    """Lines centred on the dip centroid, depths from a non-negative linear solve"""
    if n_lines < 1:
        raise FitError(f"Need at least one line, got {n_lines}")
    center = _dip_centroid(meas)
    f_first = center - (n_lines - 1) / 2 * spacing
    centers = [f_first + m * spacing for m in range(n_lines)]
    design = np.column_stack([lorentzian(meas.frequencies, c, linewidth) for c in centers])
    depths, _ = nnls(design, 1.0 - meas.ratios)
    depths = np.clip(depths, 1e-4, 0.9)
    return FreeLorentzianModel(n_lines, f_first, spacing, tuple(depths), (linewidth,) * n_lines)


def fit_free_lorentzians(
    meas: MeasuredSpectrum,
    n_lines: int,
    init: FreeLorentzianModel | None = None,
    starts: int = len(MULTISTART_SCALES),
    options: LMOptions | None = None,
) -> FitResult:
    """Fit ``n_lines`` equally spaced Lorentzian dips with independent depths and widths.

    Up to five starts rescale the initial spacing about the mean line centre;
    the start with the lowest cost is returned. Lines are numbered by
    ascending centre frequency.
    """
    if n_lines < 1:
        raise FitError(f"Need at least one line, got {n_lines}")
    init = init or estimate_free_model(meas, n_lines)
    if init.n_lines != n_lines:
        raise FitError(f"Initial model has {init.n_lines} lines, expected {n_lines}")

    names = _free_names(n_lines)
    bounds = {"spacing": (1e-6, np.inf)}
    for m in range(1, n_lines + 1):
        bounds[f"depth_{m}"] = (0.0, 1.0)
        bounds[f"width_{m}"] = (1e-3, np.inf)
    weights = _residual_weights(meas)

    def residual(x):
        values = dict(zip(names, x))
        model = FreeLorentzianModel(
            n_lines,
            values["f_first"],
            values.get("spacing", 1.0),
            tuple(values[f"depth_{m}"] for m in range(1, n_lines + 1)),
            tuple(values[f"width_{m}"] for m in range(1, n_lines + 1)),
        )
        return (model.evaluate(meas.frequencies) - meas.ratios) * weights

    mean_center = float(np.mean(init.centers))
    scales = MULTISTART_SCALES[:max(1, starts)] if n_lines > 1 else (1.0,)
    best = None
    for scale in scales:
        spacing = init.spacing * scale
        start = {"f_first": mean_center - (n_lines - 1) / 2 * spacing}
        if n_lines > 1:
            start["spacing"] = spacing
        # same order as names: all depths, then all widths
        for m in range(1, n_lines + 1):
            start[f"depth_{m}"] = init.depths[m - 1]
        for m in range(1, n_lines + 1):
            start[f"width_{m}"] = init.widths[m - 1]
        result = lm_minimize(residual, start, bounds, options)
        logger.debug(f"Start with spacing x{scale}: cost {result.cost:.3e}")
        if best is None or result.cost < best.cost:
            best = result

    fitted = free_model_from_result(best, n_lines)
    derived = {}
    areas = fitted.areas()
    total = sum(areas)
    for m, (center, area) in enumerate(zip(fitted.centers, areas), start=1):
        derived[f"center_{m}"] = center
        derived[f"area_{m}"] = area
        derived[f"area_fraction_{m}"] = area / total if total > 0 else math.nan
    return FitResult(
        params=best.params,
        residual_norm=best.residual_norm,
        iterations=best.iterations,
        converged=best.converged,
        covariance=best.covariance,
        cost=best.cost,
        message=best.message,
        diagnostics=best.diagnostics,
        derived=derived,
    )


def line_areas(result: FitResult, n_lines: int) -> tuple[float, ...]:
    """Area proxies C_m * dnu_m of a free-Lorentzian fit, ascending in frequency"""
    return free_model_from_result(result, n_lines).areas()


def saturation_curve(power, i_max: float, p_sat: float):
    power = np.asarray(power, dtype=float)
    return i_max * power / (power + p_sat)


def fit_pl_saturation(points: Iterable[tuple[float, float]], options: LMOptions | None = None) -> FitResult:
    """Fit I(P) = I_max * P / (P + P_sat) to (power mW, intensity) pairs"""
    data = np.array(list(points), dtype=float)
    if data.ndim != 2 or data.shape[0] < 3 or data.shape[1] != 2:
        raise FitError("Saturation fit needs at least 3 (power, intensity) points")
    powers, intensities = data[:, 0], data[:, 1]
    if np.any(powers <= 0) or np.unique(powers).size != powers.size:
        raise FitError("Laser powers must be positive and distinct")

    # 1/I = 1/I_max + (P_sat/I_max) / P
    slope, intercept = np.polyfit(1.0 / powers, 1.0 / intensities, 1)
    if intercept > 0 and slope > 0:
        start = {"i_max": 1.0 / intercept, "p_sat": slope / intercept}
    else:
        start = {"i_max": 1.2 * float(np.max(intensities)), "p_sat": float(np.median(powers))}

    def residual(x):
        return saturation_curve(powers, x[0], x[1]) - intensities

    result = lm_minimize(residual, start, {"i_max": (0.0, np.inf), "p_sat": (1e-12, np.inf)}, options)
    diagnostics = list(result.diagnostics)
    if float(np.max(powers)) < 0.1 * result.value("p_sat"):
        diagnostics.append("all powers far below P_sat: only I_max/P_sat is identifiable")
    return FitResult(
        params=result.params,
        residual_norm=result.residual_norm,
        iterations=result.iterations,
        converged=result.converged,
        covariance=result.covariance,
        cost=result.cost,
        message=result.message,
        diagnostics=tuple(diagnostics),
        derived={"initial_slope": result.value("i_max") / result.value("p_sat")},
    )
