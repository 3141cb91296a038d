"""Spin Hamiltonians of a boron vacancy and its three nearest nitrogen nuclei.

The product basis is fixed: the electron factor comes first (m_S = +1, 0, -1),
followed by sites j = 1, 2, 3, each ordered m_I = +I ... -I. Eigenvector
labels are therefore reproducible between runs.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import reduce
from typing import Literal, NamedTuple

import numpy as np

from physics import constants
from utils.errors import ConvergenceError, VBScopeError

logger = logging.getLogger(__name__)

HERMITIAN_RTOL = 1e-12
JACOBI_TOLERANCE = 1e-12
JACOBI_MAX_SWEEPS = 50
CHARACTER_THRESHOLD = 0.9

ELECTRON_PROJECTIONS = (1, 0, -1)


class SpinModelError(VBScopeError, ValueError):
    """Invalid spin-system parameters or a model used outside its validity range"""


class AnticrossingError(SpinModelError):
    """Eigenstates cannot be assigned an electron-spin character"""


class EigenConvergenceError(ConvergenceError, ArithmeticError):
    """The Jacobi iteration did not reach its tolerance within the sweep cap"""


class IsotopeSpecies(Enum):
    N14 = "14N"
    N15 = "15N"

    @property
    def spin(self) -> float:
        return 1.0 if self is IsotopeSpecies.N14 else 0.5

    @property
    def gamma_n(self) -> float:
        """Gyromagnetic ratio in kHz/mT"""
        return constants.GAMMA_14N if self is IsotopeSpecies.N14 else constants.GAMMA_15N

    @property
    def multiplicity(self) -> int:
        return int(round(2 * self.spin + 1))

    @property
    def projections(self) -> tuple[float, ...]:
        return tuple(self.spin - k for k in range(self.multiplicity))


def spin_matrices(spin: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (Sx, Sy, Sz) for the given spin, basis ordered m = +s ... -s"""
    n = int(round(2 * spin + 1))
    if n < 2 or not math.isclose(2 * spin + 1, n):
        raise SpinModelError(f"Unsupported spin magnitude: {spin}")
    m = np.array([spin - k for k in range(n)])
    raising = np.zeros((n, n), dtype=complex)
    for k in range(1, n):
        raising[k - 1, k] = math.sqrt(spin * (spin + 1) - m[k] * (m[k] + 1))
    lowering = raising.conj().T
    sx = (raising + lowering) / 2
    sy = (raising - lowering) / 2j
    sz = np.diag(m).astype(complex)
    return sx, sy, sz


@dataclass(frozen=True, eq=False)
class NuclearSite:
    species: IsotopeSpecies
    hfi_tensor: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    quadrupole: tuple[float, float, float] = (0.0, 0.0, 0.0)  # P_p, P_z, P_o in MHz
    site_index: int = 1

    def __post_init__(self):
        tensor = np.array(self.hfi_tensor, dtype=float)
        if tensor.shape != (3, 3):
            raise SpinModelError(f"HFI tensor must be 3x3, got shape {tensor.shape}")
        tensor.setflags(write=False)
        object.__setattr__(self, "hfi_tensor", tensor)

        quadrupole = tuple(float(q) for q in self.quadrupole)
        if len(quadrupole) != 3:
            raise SpinModelError("Quadrupole needs three strengths (P_p, P_z, P_o)")
        if self.species.spin < 1 and any(q != 0.0 for q in quadrupole):
            raise SpinModelError(f"{self.species.value} has spin 1/2 and no quadrupole moment")
        object.__setattr__(self, "quadrupole", quadrupole)

        if self.site_index not in (1, 2, 3):
            raise SpinModelError(f"Site index must be 1, 2 or 3, got {self.site_index}")

    @classmethod
    def axial(cls, species: IsotopeSpecies, a_zz: float, site_index: int = 1, quadrupole=(0.0, 0.0, 0.0)):
        tensor = np.zeros((3, 3))
        tensor[2, 2] = a_zz
        return cls(species=species, hfi_tensor=tensor, quadrupole=quadrupole, site_index=site_index)

    @property
    def a_zz(self) -> float:
        return float(self.hfi_tensor[2, 2])

    @property
    def in_plane_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit vectors p(j) (vacancy to nitrogen) and o(j) = p(j) x z"""
        angle = (self.site_index - 1) * 2 * math.pi / 3
        p = np.array([math.cos(angle), math.sin(angle), 0.0])
        o = np.cross(p, [0.0, 0.0, 1.0])
        return p, o


@dataclass(frozen=True)
class ElectronParams:
    d_gs: float = constants.D_GROUND
    e_x: float = 0.0
    e_y: float = 0.0
    gamma_e: float = constants.GAMMA_E
    b_field: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.gamma_e > 0:
            raise SpinModelError(f"gamma_e must be positive, got {self.gamma_e}")
        b_field = tuple(float(b) for b in self.b_field)
        if len(b_field) != 3:
            raise SpinModelError("Magnetic field must have three components")
        object.__setattr__(self, "b_field", b_field)

    @property
    def b_z(self) -> float:
        return self.b_field[2]

    @property
    def is_axial(self) -> bool:
        return self.b_field[0] == 0.0 and self.b_field[1] == 0.0


@dataclass(frozen=True)
class SpinSystem:
    electron: ElectronParams
    sites: tuple[NuclearSite, NuclearSite, NuclearSite]
    include_nuclear_zeeman: bool = True
    include_quadrupole: bool = True
    include_strain: bool = True

    def __post_init__(self):
        sites = tuple(self.sites)
        if len(sites) != 3:
            raise SpinModelError(f"A boron vacancy has exactly 3 nearest nitrogen sites, got {len(sites)}")
        object.__setattr__(self, "sites", sites)

    @classmethod
    def from_configuration(
        cls,
        n15_count: int,
        a14: float = constants.A_ZZ_14N,
        a15: float = constants.A_ZZ_15N,
        b_z: float = 0.0,
        d_gs: float = constants.D_GROUND,
        gamma_e: float = constants.GAMMA_E,
        e_x: float = 0.0,
        e_y: float = 0.0,
        include_nuclear_zeeman: bool = False,
        include_quadrupole: bool = False,
        include_strain: bool = False,
    ) -> "SpinSystem":
        """Defect configuration #n: the first ``n15_count`` sites hold 15N, with axial HFI tensors"""
        if not 0 <= n15_count <= 3:
            raise SpinModelError(f"n15_count must be in [0, 3], got {n15_count}")
        sites = []
        for j in range(1, 4):
            if j <= n15_count:
                sites.append(NuclearSite.axial(IsotopeSpecies.N15, a15, site_index=j))
            else:
                sites.append(NuclearSite.axial(IsotopeSpecies.N14, a14, site_index=j))
        electron = ElectronParams(d_gs=d_gs, e_x=e_x, e_y=e_y, gamma_e=gamma_e, b_field=(0.0, 0.0, b_z))
        return cls(
            electron=electron,
            sites=tuple(sites),
            include_nuclear_zeeman=include_nuclear_zeeman,
            include_quadrupole=include_quadrupole,
            include_strain=include_strain,
        )

    @property
    def nuclear_dims(self) -> tuple[int, ...]:
        return tuple(site.species.multiplicity for site in self.sites)

    @property
    def dim(self) -> int:
        return 3 * math.prod(self.nuclear_dims)

    @property
    def n15_count(self) -> int:
        return sum(1 for site in self.sites if site.species is IsotopeSpecies.N15)

    def nuclear_labels(self) -> list[tuple[float, ...]]:
        """Per-site projections in basis order"""
        return list(itertools.product(*(site.species.projections for site in self.sites)))


@dataclass(frozen=True, eq=False)
class HermitianMatrix:
    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise SpinModelError(f"Expected a square matrix, got shape {m.shape}")
        scale = max(float(np.max(np.abs(m))) if m.size else 0.0, np.finfo(float).tiny)
        asymmetry = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
        if asymmetry > HERMITIAN_RTOL * scale:
            raise SpinModelError(f"Matrix is not Hermitian (max asymmetry {asymmetry:.3e})")
        m = (m + m.conj().T) / 2
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.entries)).copy()


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class Transition:
    branch: int
    nuclear_label: tuple[float, ...]
    frequency: float
    dipole_weight: float = 1.0


@dataclass(frozen=True)
class TransitionSet:
    entries: tuple[Transition, ...]
    flagged: tuple[int, ...] = ()  # eigenstate indices without a clear m_S character

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def for_branch(self, branch: int) -> list[Transition]:
        return [t for t in self.entries if t.branch == branch]

    def frequencies(self, branch: int | None = None) -> np.ndarray:
        selected = self.entries if branch is None else self.for_branch(branch)
        return np.sort(np.array([t.frequency for t in selected]))


def _embed(dims: tuple[int, ...], factor: int, op: np.ndarray) -> np.ndarray:
    parts = [np.eye(d, dtype=complex) for d in dims]
    parts[factor] = op
    return reduce(np.kron, parts)


def build_effective_hamiltonian(sys: SpinSystem) -> HermitianMatrix:
    """Diagonal secular Hamiltonian D Sz^2 + gamma_e Bz Sz + Sz sum_j A_zz,j Iz,j"""
    electron = sys.electron
    if not electron.is_axial:
        raise SpinModelError(
            f"Effective model needs an axial field, got B = {electron.b_field} mT"
        )
    a_zz = [site.a_zz for site in sys.sites]
    diagonal = []
    for m_s in ELECTRON_PROJECTIONS:
        for label in sys.nuclear_labels():
            hyperfine = sum(a * m for a, m in zip(a_zz, label))
            diagonal.append(electron.d_gs * m_s**2 + electron.gamma_e * electron.b_z * m_s + m_s * hyperfine)
    return HermitianMatrix(np.diag(diagonal))


def build_full_hamiltonian(sys: SpinSystem) -> HermitianMatrix:
    """H_ZFS + H_Ze + H_Zn + H_HFI + H_QI, optional terms gated by the include flags"""
    dims = (3,) + sys.nuclear_dims
    sx, sy, sz = (_embed(dims, 0, op) for op in spin_matrices(1.0))
    electron = sys.electron
    bx, by, bz = electron.b_field

    h = electron.d_gs * (sz @ sz)
    if sys.include_strain:
        h = h + electron.e_x * (sy @ sy - sx @ sx) + electron.e_y * (sx @ sy + sy @ sx)
    h = h + electron.gamma_e * (bx * sx + by * sy + bz * sz)

    s_vec = (sx, sy, sz)
    z_axis = np.array([0.0, 0.0, 1.0])
    for factor, site in enumerate(sys.sites, start=1):
        i_vec = [_embed(dims, factor, op) for op in spin_matrices(site.species.spin)]

        if sys.include_nuclear_zeeman:
            gamma_n = site.species.gamma_n / constants.KHZ_PER_MHZ
            h = h - gamma_n * (bx * i_vec[0] + by * i_vec[1] + bz * i_vec[2])

        for alpha in range(3):
            for beta in range(3):
                coupling = site.hfi_tensor[alpha, beta]
                if coupling != 0.0:
                    h = h + coupling * (s_vec[alpha] @ i_vec[beta])

        if sys.include_quadrupole and site.species.spin >= 1:
            p_axis, o_axis = site.in_plane_axes
            for axis, strength in zip((p_axis, z_axis, o_axis), site.quadrupole):
                if strength != 0.0:
                    i_axis = axis[0] * i_vec[0] + axis[1] * i_vec[1] + axis[2] * i_vec[2]
                    h = h + strength * (i_axis @ i_axis)

    return HermitianMatrix(h)


def _jacobi_rotate(a: np.ndarray, v: np.ndarray, p: int, q: int) -> None:
    apq = a[p, q]
    r = abs(apq)
    phase = np.conj(apq / r)
    theta = (a[q, q].real - a[p, p].real) / (2 * r)
    if abs(theta) > 1e150:
        t = 1 / (2 * theta)
    else:
        t = 1 / (abs(theta) + math.sqrt(theta * theta + 1))
        if theta < 0:
            t = -t
    c = 1 / math.sqrt(t * t + 1)
    s = t * c
    # phase rotation of column q makes a[p, q] real, then a real Jacobi rotation
    g = np.array([[c, s], [-s * phase, c * phase]], dtype=complex)
    idx = [p, q]
    a[:, idx] = a[:, idx] @ g
    a[idx, :] = g.conj().T @ a[idx, :]
    a[p, q] = a[q, p] = 0.0
    a[p, p] = a[p, p].real
    a[q, q] = a[q, q].real
    v[:, idx] = v[:, idx] @ g


def eigen_hermitian(
    m: HermitianMatrix,
    tolerance: float = JACOBI_TOLERANCE,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
) -> EigenDecomposition:
    """Cyclic Jacobi diagonalisation; eigenvalues ascending, eigenvectors as columns"""
    a = np.array(m.entries, dtype=complex)
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = float(np.linalg.norm(a))
    if scale == 0.0:
        return EigenDecomposition(np.zeros(n), v)

    skip_below = tolerance * scale / n
    for sweep in range(max_sweeps + 1):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off <= tolerance * scale:
            break
        if sweep == max_sweeps:
            raise EigenConvergenceError(
                f"Jacobi did not converge after {max_sweeps} sweeps (off-diagonal norm {off:.3e})"
            )
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) > skip_below:
                    _jacobi_rotate(a, v, p, q)

    values = np.real(np.diag(a))
    order = np.argsort(values, kind="stable")
    return EigenDecomposition(values[order], v[:, order])


def eigen_residual(m: HermitianMatrix, decomposition: EigenDecomposition) -> float:
    """max_k ||M v_k - lambda_k v_k|| / ||M||"""
    entries = m.entries
    scale = float(np.linalg.norm(entries, 2)) or 1.0
    values, vectors = decomposition
    residual = entries @ vectors - vectors * values
    return float(np.max(np.linalg.norm(residual, axis=0)) / scale)


def _effective_transitions(sys: SpinSystem) -> TransitionSet:
    electron = sys.electron
    if not electron.is_axial:
        raise SpinModelError(
            f"Effective model needs an axial field, got B = {electron.b_field} mT"
        )
    a_zz = [site.a_zz for site in sys.sites]
    entries = []
    for branch in (1, -1):
        f_zero = electron.d_gs + branch * electron.gamma_e * electron.b_z
        for label in sys.nuclear_labels():
            hyperfine = sum(a * m for a, m in zip(a_zz, label))
            entries.append(Transition(branch, label, f_zero + branch * hyperfine, 1.0))
    return TransitionSet(tuple(entries))


def _full_transitions(sys: SpinSystem, strict: bool) -> TransitionSet:
    hamiltonian = build_full_hamiltonian(sys)
    values, vectors = eigen_hermitian(hamiltonian)
    dim = sys.dim
    n_nuc = dim // 3

    weights = (np.abs(vectors) ** 2).reshape(3, n_nuc, dim).sum(axis=1)
    character = np.argmax(weights, axis=0)
    purity = np.max(weights, axis=0)
    flagged = tuple(int(k) for k in np.flatnonzero(purity <= CHARACTER_THRESHOLD))
    if flagged and strict:
        raise AnticrossingError(
            f"{len(flagged)} eigenstates have no m_S character above {CHARACTER_THRESHOLD} "
            f"(B = {sys.electron.b_field} mT is too close to a level anticrossing)"
        )

    labels = sys.nuclear_labels()
    sx = _embed((3,) + sys.nuclear_dims, 0, spin_matrices(1.0)[0])
    zero_states = [k for k in range(dim) if character[k] == 1 and k not in flagged]
    if not zero_states:
        logger.warning(f"No eigenstate keeps m_S = 0 character at B = {sys.electron.b_field} mT")
        return TransitionSet((), flagged)
    zero_block = vectors[n_nuc:2 * n_nuc, zero_states]

    entries = []
    for k in range(dim):
        if k in flagged or character[k] == 1:
            continue
        branch = ELECTRON_PROJECTIONS[character[k]]
        block = vectors[character[k] * n_nuc:(character[k] + 1) * n_nuc, k]
        label = labels[int(np.argmax(np.abs(block)))]
        nuclear = block / np.linalg.norm(block)
        overlaps = np.abs(nuclear.conj() @ zero_block) ** 2
        partner = zero_states[int(np.argmax(overlaps))]
        frequency = float(values[k] - values[partner])
        element = vectors[:, k].conj() @ sx @ vectors[:, partner]
        entries.append(Transition(branch, label, frequency, float(2 * abs(element) ** 2)))

    entries.sort(key=lambda t: (-t.branch, t.frequency, t.nuclear_label))
    return TransitionSet(tuple(entries), flagged)


def transition_frequencies(
    sys: SpinSystem,
    mode: Literal["effective", "full"] = "effective",
    strict: bool = True,
) -> TransitionSet:
    """Electron-spin transition frequencies m_S = 0 <-> +-1 for every nuclear state.

    In ``full`` mode eigenstates are paired by their dominant m_S character.
    States whose character is below the 0.9 threshold are flagged; with
    ``strict`` they raise ``AnticrossingError`` instead.
    """
    if mode == "effective":
        return _effective_transitions(sys)
    if mode == "full":
        return _full_transitions(sys, strict)
    raise SpinModelError(f"Unknown transition mode: {mode!r}")


def dipolar_azz(distance_nm: float, gamma_n: float, gamma_e: float = constants.GAMMA_E) -> float:
    """Point-dipole A_zz (MHz) for a nucleus in the plane of the vacancy"""
    if not distance_nm > 0:
        raise SpinModelError(f"Distance must be positive, got {distance_nm} nm")
    prefactor = (
        constants.MU_0 / (4 * math.pi)
        * constants.PLANCK
        * gamma_e * constants.HZ_PER_T_FROM_MHZ_PER_MT
        * gamma_n * constants.HZ_PER_T_FROM_KHZ_PER_MT
        / (distance_nm * constants.M_PER_NM) ** 3
    )
    return -prefactor / 1e6


def dipolar_tensor(position_nm, gamma_n: float, gamma_e: float = constants.GAMMA_E) -> np.ndarray:
    """Full point-dipole HFI tensor (MHz) for a nucleus at ``position_nm`` from the vacancy"""
    r = np.asarray(position_nm, dtype=float)
    distance = float(np.linalg.norm(r))
    if not distance > 0:
        raise SpinModelError("Nucleus cannot sit on the vacancy")
    e_r = r / distance
    # in-plane reduction of this tensor gives -prefactor on the zz element
    prefactor = -dipolar_azz(distance, gamma_n, gamma_e)
    return prefactor * (3 * np.outer(e_r, e_r) - np.eye(3))


def gslac_field(d_gs: float = constants.D_GROUND, gamma_e: float = constants.GAMMA_E) -> float:
    """Ground-state level anticrossing field D / gamma_e in mT"""
    return d_gs / gamma_e
