import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from physics import constants
from physics.spin_core import (
    AnticrossingError,
    EigenConvergenceError,
    ElectronParams,
    HermitianMatrix,
    IsotopeSpecies,
    NuclearSite,
    SpinModelError,
    SpinSystem,
    build_effective_hamiltonian,
    build_full_hamiltonian,
    dipolar_azz,
    dipolar_tensor,
    eigen_hermitian,
    eigen_residual,
    gslac_field,
    spin_matrices,
    transition_frequencies,
)


@pytest.mark.parametrize("spin", [0.5, 1.0])
def test_spin_matrices_commutation(spin):
    sx, sy, sz = spin_matrices(spin)
    np.testing.assert_allclose(sx @ sy - sy @ sx, 1j * sz, atol=1e-14)
    total = sx @ sx + sy @ sy + sz @ sz
    np.testing.assert_allclose(total, spin * (spin + 1) * np.eye(sz.shape[0]), atol=1e-14)
    assert np.real(np.diag(sz))[0] == spin


def test_spin_matrices_rejects_bad_spin():
    with pytest.raises(SpinModelError):
        spin_matrices(0.3)


def test_isotope_species():
    assert IsotopeSpecies.N14.projections == (1.0, 0.0, -1.0)
    assert IsotopeSpecies.N15.projections == (0.5, -0.5)
    assert IsotopeSpecies.N15.gamma_n == constants.GAMMA_15N


def test_spin_half_site_has_no_quadrupole():
    with pytest.raises(SpinModelError):
        NuclearSite(IsotopeSpecies.N15, quadrupole=(1.0, 0.0, 0.0))


def test_from_configuration_puts_15n_first():
    sys = SpinSystem.from_configuration(2, a14=43.0, a15=-64.0)
    species = [site.species for site in sys.sites]
    assert species == [IsotopeSpecies.N15, IsotopeSpecies.N15, IsotopeSpecies.N14]
    assert sys.n15_count == 2
    assert sys.dim == 3 * 12
    assert [site.a_zz for site in sys.sites] == [-64.0, -64.0, 43.0]


@pytest.mark.parametrize("n, dim", [(0, 81), (1, 54), (2, 36), (3, 24)])
def test_effective_hamiltonian_is_diagonal(n, dim):
    h = build_effective_hamiltonian(SpinSystem.from_configuration(n, b_z=20.0))
    assert h.dim == dim
    np.testing.assert_array_equal(h.entries, np.diag(np.diag(h.entries)))


def test_effective_model_needs_axial_field():
    electron = ElectronParams(b_field=(1.0, 0.0, 10.0))
    sys = SpinSystem.from_configuration(3)
    sys = SpinSystem(electron, sys.sites)
    with pytest.raises(SpinModelError):
        build_effective_hamiltonian(sys)
    with pytest.raises(SpinModelError):
        transition_frequencies(sys, "effective")


def test_effective_transitions_for_15n_quartet():
    sys = SpinSystem.from_configuration(3, a15=-64.0, b_z=30.0)
    transitions = transition_frequencies(sys, "effective")
    assert len(transitions) == 2 * 8
    lower = transitions.frequencies(-1)
    f_zero = 3466.0 - 28.0 * 30.0
    # lower branch: f = f0 + 64 * m_tot
    expected = sorted(f_zero + 64.0 * m for m in (-1.5, -0.5, -0.5, -0.5, 0.5, 0.5, 0.5, 1.5))
    np.testing.assert_allclose(lower, expected)


def test_effective_diagonal_entry():
    sys = SpinSystem.from_configuration(0, a14=43.0, b_z=40.0, d_gs=3450.0)
    h = build_effective_hamiltonian(sys)
    # m_S = -1 block comes last in the basis
    index = 2 * (sys.dim // 3) + sys.nuclear_labels().index((1.0, 1.0, 1.0))
    # 3450 - 28 * 40 - 3 * 43
    assert h.diagonal()[index] == pytest.approx(2201.0, abs=1e-9)


@pytest.mark.parametrize("n", range(4))
def test_bare_zero_field_splitting(n):
    sys = SpinSystem.from_configuration(n, a14=0.0, a15=0.0)
    assert set(np.unique(build_effective_hamiltonian(sys).diagonal())) == {0.0, 3466.0}
    values, _ = eigen_hermitian(build_full_hamiltonian(sys))
    np.testing.assert_allclose(np.unique(np.round(values, 9)), [0.0, 3466.0], atol=1e-9)


def test_strain_splits_zero_field_doublet():
    sys = SpinSystem.from_configuration(3, a15=0.0, e_x=50.0, include_strain=True)
    values, _ = eigen_hermitian(build_full_hamiltonian(sys))
    upper = values[values > 1000.0]
    assert len(upper) == 2 * 8
    assert upper.max() - upper.min() == pytest.approx(100.0, abs=1e-9)
    np.testing.assert_allclose(np.unique(np.round(upper, 6)), [3416.0, 3516.0])


@pytest.mark.parametrize("n", range(4))
def test_full_and_effective_traces_agree(n):
    sys = SpinSystem.from_configuration(n, b_z=35.0)
    full = build_full_hamiltonian(sys)
    effective = build_effective_hamiltonian(sys)
    assert full.diagonal().sum() == pytest.approx(effective.diagonal().sum(), abs=1e-9)
    values, _ = eigen_hermitian(full)
    assert values.sum() == pytest.approx(full.diagonal().sum(), rel=1e-12)


def test_hermitian_matrix_rejects_asymmetry():
    with pytest.raises(SpinModelError):
        HermitianMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))


def random_hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return HermitianMatrix((a + a.conj().T) / 2)


@pytest.mark.parametrize("seed", range(8))
def test_eigen_hermitian_matches_numpy(seed):
    rng = np.random.default_rng(seed)
    m = random_hermitian(rng, 2 + seed)
    values, vectors = eigen_hermitian(m)
    np.testing.assert_allclose(values, np.linalg.eigvalsh(m.entries), atol=1e-10)
    assert np.all(np.diff(values) >= 0)
    np.testing.assert_allclose(vectors.conj().T @ vectors, np.eye(m.dim), atol=1e-10)
    assert eigen_residual(m, (values, vectors)) < 1e-10


def test_eigen_hermitian_reconstructs_largest_operator():
    m = random_hermitian(np.random.default_rng(81), 81)
    values, vectors = eigen_hermitian(m)
    rebuilt = vectors @ np.diag(values) @ vectors.conj().T
    assert np.max(np.abs(rebuilt - m.entries)) < 1e-8


def test_eigen_hermitian_trivial_inputs():
    values, vectors = eigen_hermitian(HermitianMatrix(np.diag([3.0, -1.0, 2.0])))
    np.testing.assert_array_equal(values, [-1.0, 2.0, 3.0])
    np.testing.assert_array_equal(np.abs(vectors), np.eye(3)[:, [1, 2, 0]])

    values, vectors = eigen_hermitian(HermitianMatrix(np.zeros((4, 4))))
    np.testing.assert_array_equal(values, np.zeros(4))


def test_eigen_hermitian_sweep_cap():
    m = random_hermitian(np.random.default_rng(1), 6)
    with pytest.raises(EigenConvergenceError):
        eigen_hermitian(m, max_sweeps=0)


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=0, max_value=3),
    a14=st.floats(min_value=-80.0, max_value=80.0),
    a15=st.floats(min_value=-80.0, max_value=80.0),
    b_z=st.floats(min_value=10.0, max_value=100.0),
    d_gs=st.floats(min_value=3300.0, max_value=3600.0),
)
def test_full_hamiltonian_matches_effective_model(n, a14, a15, b_z, d_gs):
    sys = SpinSystem.from_configuration(n, a14=a14, a15=a15, b_z=b_z, d_gs=d_gs)
    effective = transition_frequencies(sys, "effective")
    full = transition_frequencies(sys, "full")
    for branch in (1, -1):
        np.testing.assert_allclose(full.frequencies(branch), effective.frequencies(branch), atol=1e-6, rtol=0)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(min_value=0, max_value=3), b_z=st.floats(min_value=0.0, max_value=100.0))
def test_nuclear_zeeman_shift_is_bounded(n, b_z):
    sys = SpinSystem.from_configuration(n, b_z=b_z, include_nuclear_zeeman=True)
    bound = sum(abs(site.species.gamma_n) for site in sys.sites) / constants.KHZ_PER_MHZ * b_z
    effective = transition_frequencies(sys, "effective")
    full = transition_frequencies(sys, "full")
    for branch in (1, -1):
        deviation = np.max(np.abs(full.frequencies(branch) - effective.frequencies(branch)))
        assert deviation <= bound + 1e-6


def test_full_transitions_dipole_weights():
    sys = SpinSystem.from_configuration(3, b_z=20.0)
    transitions = transition_frequencies(sys, "full")
    assert len(transitions) == 16
    # 2 |<1|Sx|0>|^2 = 1 for a pure m_S transition
    assert all(t.dipole_weight == pytest.approx(1.0) for t in transitions)


def test_transitions_flag_anticrossing():
    # m_S = 0 and -1 cross for m_tot = +1/2 at this field; a transverse field mixes them
    b_cross = (constants.D_GROUND + 64.0 * 0.5) / constants.GAMMA_E
    base = SpinSystem.from_configuration(3, a15=-64.0)
    sys = SpinSystem(ElectronParams(b_field=(5.0, 0.0, b_cross)), base.sites)
    with pytest.raises(AnticrossingError):
        transition_frequencies(sys, "full")
    relaxed = transition_frequencies(sys, "full", strict=False)
    assert relaxed.flagged
    # every m_S = 0 state is mixed here, so no transition can be assigned
    assert len(relaxed) == 0


def test_unknown_mode():
    with pytest.raises(SpinModelError):
        transition_frequencies(SpinSystem.from_configuration(0), "exact")


def test_full_hamiltonian_terms_are_hermitian():
    site14 = NuclearSite(IsotopeSpecies.N14, np.diag([10.0, 10.0, 43.0]), (1.0, -2.0, 0.5), site_index=2)
    site15 = NuclearSite.axial(IsotopeSpecies.N15, -64.0, site_index=1)
    electron = ElectronParams(e_x=5.0, e_y=3.0, b_field=(2.0, -1.0, 30.0))
    sys = SpinSystem(electron, (site15, site14, site14))
    h = build_full_hamiltonian(sys)
    np.testing.assert_allclose(h.entries, h.entries.conj().T)
    assert eigen_residual(h, eigen_hermitian(h)) < 1e-10


def test_dipolar_azz_scaling():
    near = dipolar_azz(0.25, constants.GAMMA_15N)
    far = dipolar_azz(0.5, constants.GAMMA_15N)
    assert near == pytest.approx(8 * far)
    # negative gamma_n gives a positive in-plane coupling
    assert near > 0
    assert dipolar_azz(0.25, constants.GAMMA_14N) < 0
    assert dipolar_azz(0.25, 2 * constants.GAMMA_14N) == pytest.approx(2 * dipolar_azz(0.25, constants.GAMMA_14N))


def test_dipolar_azz_magnitude():
    expected = (
        1e-7 * constants.PLANCK * 28e9 * 4.316e6 / (0.25e-9) ** 3 / 1e6
    )
    assert dipolar_azz(0.25, constants.GAMMA_15N) == pytest.approx(expected)


def test_dipolar_azz_15n_at_nearest_neighbour_distance():
    # mu_0 / 4 pi, h, gamma_e = 28 GHz/T, gamma_n(15N) = -4.316 MHz/T, r = 0.14 nm
    expected = 1e-7 * 6.62607015e-34 * 28e9 * 4.316e6 / (0.14e-9) ** 3 / 1e6
    value = dipolar_azz(0.14, constants.GAMMA_15N)
    assert value == pytest.approx(expected, rel=1e-6)
    # point dipole alone is far below the measured 64 MHz
    assert value == pytest.approx(2.918, abs=1e-3)


def test_dipolar_azz_rejects_zero_distance():
    with pytest.raises(SpinModelError):
        dipolar_azz(0.0, constants.GAMMA_15N)


def test_dipolar_tensor_in_plane_reduction():
    tensor = dipolar_tensor([0.25, 0.0, 0.0], constants.GAMMA_15N)
    assert np.trace(tensor) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(tensor, tensor.T)
    assert tensor[2, 2] == pytest.approx(dipolar_azz(0.25, constants.GAMMA_15N))


def test_gslac_field():
    assert gslac_field() == pytest.approx(3466.0 / 28.0)
    assert math.isclose(gslac_field(2800.0, 28.0), 100.0)
