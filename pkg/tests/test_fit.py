import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from physics.analysis import polarization_from_fit
from physics.fit import (
    FitError,
    FreeLorentzianModel,
    LMOptions,
    MeasuredSpectrum,
    estimate_initial_model,
    fit_free_lorentzians,
    fit_physical,
    fit_pl_saturation,
    forward_jacobian,
    line_areas,
    lm_minimize,
    saturation_curve,
    synthesize_measurement,
)
from physics.spectrum import SpectrumModel, default_grid, lorentzian, lorentzian_derivative
from utils.errors import IngestionError


def test_quadratic_bowl_converges_quickly():
    target = np.array([3.0, -2.0])
    result = lm_minimize(lambda x: x - target, {"a": 0.0, "b": 0.0})
    assert result.converged
    assert result.iterations < 20
    assert result.value("a") == pytest.approx(3.0, abs=1e-8)
    assert result.value("b") == pytest.approx(-2.0, abs=1e-8)


def test_exponential_decay_fit():
    t = np.linspace(0.0, 10.0, 50)
    y = 2.0 * np.exp(-t / 3.0)
    result = lm_minimize(
        lambda x: x[0] * np.exp(-t / x[1]) - y,
        {"amplitude": 1.0, "tau": 1.0},
        {"tau": (1e-3, np.inf)},
    )
    assert result.converged
    assert result.value("amplitude") == pytest.approx(2.0, rel=1e-6)
    assert result.value("tau") == pytest.approx(3.0, rel=1e-6)


def test_analytic_jacobian_is_used():
    t = np.linspace(0.0, 10.0, 50)
    y = 2.0 * np.exp(-t / 3.0)
    calls = []

    def jacobian(x):
        calls.append(x.copy())
        decay = np.exp(-t / x[1])
        return np.column_stack([decay, x[0] * t / x[1] ** 2 * decay])

    result = lm_minimize(
        lambda x: x[0] * np.exp(-t / x[1]) - y,
        {"amplitude": 1.0, "tau": 1.0},
        {"tau": (1e-3, np.inf)},
        LMOptions(jacobian=jacobian),
    )
    assert calls
    assert result.converged
    assert result.value("amplitude") == pytest.approx(2.0, rel=1e-6)
    assert result.value("tau") == pytest.approx(3.0, rel=1e-6)


def test_bounds_are_respected():
    result = lm_minimize(lambda x: x - 5.0, {"x": 1.0}, {"x": (0.0, 2.0)})
    assert result.value("x") == pytest.approx(2.0)


def test_initial_values_outside_bounds():
    with pytest.raises(FitError):
        lm_minimize(lambda x: x, {"x": 3.0}, {"x": (0.0, 2.0)})


def test_covariance_matches_stderr():
    t = np.linspace(0.0, 10.0, 50)
    noise = np.random.default_rng(3).normal(0.0, 0.01, size=t.size)
    y = 2.0 * np.exp(-t / 3.0) + noise
    result = lm_minimize(lambda x: x[0] * np.exp(-t / x[1]) - y, {"amplitude": 1.5, "tau": 2.0})
    stderr = np.array([result.stderr("amplitude"), result.stderr("tau")])
    np.testing.assert_allclose(stderr**2, np.diag(result.covariance))
    assert np.all(stderr > 0)


def test_flat_parameter_is_reported_degenerate():
    result = lm_minimize(lambda x: np.array([x[0] - 1.0, x[0] + 1.0, 0.0 * x[1]]), {"used": 0.0, "unused": 1.0})
    assert any("unused" in line for line in result.diagnostics)


@settings(max_examples=30, deadline=None)
@given(
    f0=st.floats(min_value=5.0, max_value=20.0),
    width=st.floats(min_value=30.0, max_value=80.0),
)
def test_forward_jacobian_matches_lorentzian_derivative(f0, width):
    grid = np.linspace(f0 - 2 * width, f0 + 2 * width, 201)
    jac = forward_jacobian(lambda x: lorentzian(grid, x[0], x[1]), np.array([f0, width]))
    analytic = -lorentzian_derivative(grid, f0, width)
    mask = np.abs(analytic) >= 0.2 * np.max(np.abs(analytic))
    np.testing.assert_allclose(jac[mask, 0], analytic[mask], rtol=1e-5)


def test_measured_spectrum_sorts_and_validates():
    frequencies = np.array([5.0, 1.0, 3.0, 2.0, 4.0, 8.0, 7.0, 6.0])
    spectrum = MeasuredSpectrum(frequencies, frequencies / 10)
    np.testing.assert_array_equal(spectrum.frequencies, np.arange(1.0, 9.0))
    np.testing.assert_array_equal(spectrum.ratios, np.arange(1.0, 9.0) / 10)
    assert spectrum.metadata["rows"] == 8

    with pytest.raises(IngestionError, match="insufficient samples"):
        MeasuredSpectrum(np.arange(7.0), np.ones(7))
    with pytest.raises(IngestionError, match="Duplicate"):
        MeasuredSpectrum(np.array([1.0, 1.0, 2, 3, 4, 5, 6, 7]), np.ones(8))


def test_synthesize_measurement_is_seeded(hbn15_model):
    a = synthesize_measurement(hbn15_model, noise_sigma=0.002, seed=11)
    b = synthesize_measurement(hbn15_model, noise_sigma=0.002, seed=11)
    c = synthesize_measurement(hbn15_model, noise_sigma=0.002, seed=12)
    np.testing.assert_array_equal(a.ratios, b.ratios)
    assert not np.array_equal(a.ratios, c.ratios)
    assert len(a) == 801


@pytest.mark.parametrize("model_name", ["hbn15_model", "hbn14_model"])
def test_physical_fit_noiseless_round_trip(model_name, request):
    truth = request.getfixturevalue(model_name)
    spectrum = synthesize_measurement(truth)
    init = truth.replace(
        f_center=truth.f_center - 6.0,
        contrast=truth.contrast * 0.8,
        linewidth=truth.linewidth - 5.0,
        a14=truth.a14 * 0.95,
        a15=truth.a15 * 0.95,
    )
    result = fit_physical(spectrum, truth.p15, init)
    assert result.converged
    assert result.value("f_center") == pytest.approx(truth.f_center, abs=1e-4)
    assert result.value("linewidth") == pytest.approx(truth.linewidth, abs=1e-4)
    key, expected = ("a15_abs", 64.0) if truth.p15 == 1.0 else ("a14_abs", 43.0)
    assert result.value(key) == pytest.approx(expected, abs=1e-4)


@pytest.mark.slow
@pytest.mark.parametrize(
    "model_name, key, expected_a, expected_width",
    [("hbn15_model", "a15_abs", 64.0, 51.0), ("hbn14_model", "a14_abs", 43.0, 47.0)],
)
def test_physical_fit_noisy_round_trips(model_name, key, expected_a, expected_width, request):
    truth = request.getfixturevalue(model_name)
    trials = 100
    hits = covered = 0
    for seed in range(trials):
        spectrum = synthesize_measurement(truth, noise_sigma=0.002, seed=seed)
        init = estimate_initial_model(spectrum, p15=truth.p15)
        result = fit_physical(spectrum, truth.p15, init)
        if abs(result.value(key) - expected_a) <= 2.0 and abs(result.value("linewidth") - expected_width) <= 3.0:
            hits += 1
        if abs(result.value(key) - expected_a) <= result.stderr(key):
            covered += 1
    assert hits >= 95
    # 1 sigma coverage of |A_zz|
    assert covered >= 60


def test_p15_recovered_with_hyperfine_fixed():
    truth = SpectrumModel(f_center=2310.0, contrast=0.08, linewidth=50.0, a14=43.0, a15=-64.0, p15=0.6)
    spectrum = synthesize_measurement(truth)
    init = truth.replace(p15=0.5, contrast=0.07, linewidth=45.0, f_center=2305.0)
    result = fit_physical(spectrum, "free", init, fixed=("a14_abs", "a15_abs"))
    assert "a14_abs" not in result.params
    assert result.value("p15") == pytest.approx(0.6, abs=0.01)
    assert sum(result.derived[k] for k in ("P0", "P1", "P2", "P3")) == pytest.approx(1.0)


def test_free_p15_on_single_species_data_is_diagnosed(hbn14_model):
    spectrum = synthesize_measurement(hbn14_model)
    result = fit_physical(spectrum, "free", hbn14_model.replace(p15=0.3))
    assert result.value("p15") < 1e-3
    assert result.diagnostics


def test_fit_physical_rejects_bad_mode(hbn15_model):
    spectrum = synthesize_measurement(hbn15_model)
    with pytest.raises(FitError):
        fit_physical(spectrum, "maybe", hbn15_model)
    with pytest.raises(FitError):
        fit_physical(spectrum, 1.0, hbn15_model, fixed=("spacing",))


def quartet(polarization, f_center=2308.0, spacing=64.0, width=51.0, scale=0.03):
    x = 2 * polarization
    depths = tuple(scale * b * (1 + x * m) for b, m in zip((1, 3, 3, 1), (-1.5, -0.5, 0.5, 1.5)))
    return FreeLorentzianModel(4, f_center - 1.5 * spacing, spacing, depths, (width,) * 4)


@pytest.mark.parametrize("polarization", [0.0, 0.16, 0.27])
def test_free_quartet_recovers_polarization(polarization):
    model = quartet(polarization)
    grid = default_grid(2308.0)
    spectrum = MeasuredSpectrum(grid, model.evaluate(grid))
    result = fit_free_lorentzians(spectrum, 4)
    assert result.value("spacing") == pytest.approx(64.0, abs=0.1)
    assert polarization_from_fit(result, 4).polarization == pytest.approx(polarization, abs=0.02)
    areas = line_areas(result, 4)
    assert len(areas) == 4
    assert sum(result.derived[f"area_fraction_{m}"] for m in range(1, 5)) == pytest.approx(1.0)


def test_free_single_line():
    model = FreeLorentzianModel(1, 2300.0, 1.0, (0.1,), (40.0,))
    grid = default_grid(2300.0)
    result = fit_free_lorentzians(MeasuredSpectrum(grid, model.evaluate(grid)), 1)
    assert "spacing" not in result.params
    assert result.value("f_first") == pytest.approx(2300.0, abs=1e-4)
    assert result.value("depth_1") == pytest.approx(0.1, abs=1e-6)
    assert result.value("width_1") == pytest.approx(40.0, abs=1e-3)


def two_line_spectrum():
    truth = FreeLorentzianModel(2, 2280.0, 64.0, (0.04, 0.07), (45.0, 60.0))
    grid = default_grid(2312.0)
    return truth, MeasuredSpectrum(grid, truth.evaluate(grid))


def test_free_fit_from_exact_truth():
    truth, spectrum = two_line_spectrum()
    result = fit_free_lorentzians(spectrum, 2, init=truth, starts=1)
    assert result.converged
    assert result.value("f_first") == pytest.approx(2280.0, abs=1e-9)
    assert result.value("spacing") == pytest.approx(64.0, abs=1e-9)
    assert [result.value(f"depth_{m}") for m in (1, 2)] == pytest.approx([0.04, 0.07], abs=1e-12)
    assert [result.value(f"width_{m}") for m in (1, 2)] == pytest.approx([45.0, 60.0], abs=1e-9)


def test_free_fit_keeps_depths_and_widths_apart():
    truth, spectrum = two_line_spectrum()
    init = FreeLorentzianModel(2, 2285.0, 60.0, (0.05, 0.05), (50.0, 50.0))
    result = fit_free_lorentzians(spectrum, 2, init=init, starts=1)
    assert [result.value(f"depth_{m}") for m in (1, 2)] == pytest.approx([0.04, 0.07], abs=1e-6)
    assert [result.value(f"width_{m}") for m in (1, 2)] == pytest.approx([45.0, 60.0], abs=1e-3)


def test_free_model_validation():
    with pytest.raises(FitError):
        FreeLorentzianModel(2, 2300.0, -1.0, (0.1, 0.1), (40.0, 40.0))
    with pytest.raises(FitError):
        FreeLorentzianModel(2, 2300.0, 10.0, (0.1,), (40.0, 40.0))


def test_pl_saturation_exact_recovery():
    powers = np.array([0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0])
    result = fit_pl_saturation(zip(powers, saturation_curve(powers, 100.0, 2.0)))
    assert result.value("i_max") == pytest.approx(100.0, rel=1e-8)
    assert result.value("p_sat") == pytest.approx(2.0, rel=1e-8)
    assert result.derived["initial_slope"] == pytest.approx(50.0, rel=1e-8)


def test_pl_saturation_far_below_saturation():
    powers = np.linspace(0.01, 0.08, 8)
    result = fit_pl_saturation(zip(powers, saturation_curve(powers, 100.0, 10.0)))
    assert any("P_sat" in line for line in result.diagnostics)


def test_pl_saturation_rejects_bad_input():
    with pytest.raises(FitError):
        fit_pl_saturation([(1.0, 10.0), (2.0, 15.0)])
    with pytest.raises(FitError):
        fit_pl_saturation([(1.0, 10.0), (1.0, 11.0), (2.0, 15.0)])
