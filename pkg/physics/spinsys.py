"""
Spin operators and NV-center ground-state Hamiltonians

Units: hbar = 1, energies are angular frequencies in rad/us, time in us,
magnetic field in mT, electric field in V/m. The 2*pi factor between the
usual MHz figures and rad/us is applied here, once.
"""
from dataclasses import dataclass, field
from functools import reduce
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

TWO_PI = 2 * np.pi

# Default physical constants (rad/us based)
GAMMA_NV = TWO_PI * 28.0  # per mT
ZERO_FIELD_SPLITTING = TWO_PI * 2870.0
DELTA_PAR = TWO_PI * 0.17e-6  # per V/m
DELTA_PERP = TWO_PI * 1e-9  # per V/m, order of magnitude only
DIPOLAR_FIELD_NM3 = 1.857  # mT nm^3, electron dipole field at 1 nm

HERMITIAN_TOL = 1e-12
MAX_DIMENSION = 81
SUPPORTED_SPINS = (0.5, 1.0)


def hermitian_deviation(matrix: np.ndarray) -> float:
    """Largest element of |M - M^dagger| relative to max(1, max|M|)"""
    matrix = np.asarray(matrix)
    scale = max(1.0, float(np.max(np.abs(matrix))) if matrix.size else 1.0)
    return float(np.max(np.abs(matrix - matrix.conj().T))) / scale if matrix.size else 0.0


def require_hermitian(matrix: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Return matrix as a complex array or raise ValueError if it is not Hermitian"""
    matrix = np.array(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {matrix.shape}")
    deviation = hermitian_deviation(matrix)
    if deviation > HERMITIAN_TOL:
        raise ValueError(f"{name} is not Hermitian (deviation {deviation:.3e})")
    return matrix


@dataclass(frozen=True, eq=False)
class SpinOperators:
    """Angular momentum matrices of a single spin"""

    s: float
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray

    @property
    def dim(self) -> int:
        return self.sz.shape[0]

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def components(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.sx, self.sy, self.sz


def spin_operators(s: float) -> SpinOperators:
    """Build sx, sy, sz for spin s in the |m = s, ..., -s> basis

    Args:
        s: Spin quantum number, 1/2 or 1

    Returns:
        SpinOperators with sz = diag(s, ..., -s)
    """
    matches = [allowed for allowed in SUPPORTED_SPINS if np.isclose(s, allowed)]
    if not matches:
        raise ValueError(f"Unsupported spin {s}; only spin 1/2 and spin 1 are available")
    s = matches[0]

    m = np.arange(s, -s - 1, -1)
    dim = len(m)
    raising = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        raising[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))

    sx = (raising + raising.conj().T) / 2
    sy = (raising - raising.conj().T) / 2j
    sz = np.diag(m).astype(complex)
    return SpinOperators(s=s, sx=sx, sy=sy, sz=sz)


def embed(operator: np.ndarray, index: int, dims: Sequence[int]) -> np.ndarray:
    """Place operator on tensor factor `index`, identities elsewhere"""
    factors = [operator if i == index else np.eye(d, dtype=complex) for i, d in enumerate(dims)]
    return reduce(np.kron, factors)


@dataclass(frozen=True)
class NucleusSpec:
    """Nuclear spin coupled to the NV electron (hyperfine tensor diagonal in the NV frame)"""

    spin: float
    n_axial: float
    n_tran: float
    gamma_n: float = 0.0
    quadrupole: float = 0.0

    @property
    def fermi_contact(self) -> float:
        return (self.n_axial + 2 * self.n_tran) / 3

    @property
    def dipolar(self) -> float:
        return (self.n_axial - self.n_tran) / 3

    @property
    def dim(self) -> int:
        return int(round(2 * self.spin + 1))

    @classmethod
    def from_dict(cls, data: Dict) -> "NucleusSpec":
        return cls(**data)


def _vector(values, name: str) -> np.ndarray:
    vector = np.asarray(values, dtype=float)
    if vector.shape != (3,):
        raise ValueError(f"{name} must have exactly 3 components, got {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise ValueError(f"{name} must be finite")
    return vector


@dataclass(frozen=True, eq=False)
class NVParameters:
    """Parameters of the NV ground-state spin Hamiltonian"""

    d: float = ZERO_FIELD_SPLITTING
    e: float = 0.0
    gamma_nv: float = GAMMA_NV
    b_field: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    e_field: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    delta_par: float = DELTA_PAR
    delta_perp: float = DELTA_PERP
    nuclei: Tuple[NucleusSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("d", "e", "gamma_nv", "delta_par", "delta_perp"):
            value = getattr(self, name)
            if not np.isfinite(value) or isinstance(value, complex):
                raise ValueError(f"{name} must be finite and real, got {value}")
        object.__setattr__(self, "b_field", tuple(_vector(self.b_field, "b_field")))
        object.__setattr__(self, "e_field", tuple(_vector(self.e_field, "e_field")))
        object.__setattr__(self, "nuclei", tuple(self.nuclei))

    @property
    def dims(self) -> List[int]:
        return [3] + [nucleus.dim for nucleus in self.nuclei]

    @classmethod
    def from_dict(cls, data: Dict) -> "NVParameters":
        data = dict(data)
        nuclei = tuple(NucleusSpec.from_dict(n) for n in data.pop("nuclei", []))
        return cls(nuclei=nuclei, **data)


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """Drift plus control decomposition H(u) = drift + sum_i u_i controls[i]"""

    drift: np.ndarray
    controls: Tuple[np.ndarray, ...] = ()
    nominal_amplitudes: Tuple[float, ...] = ()

    def __post_init__(self):
        drift = require_hermitian(self.drift, "drift")
        controls = tuple(
            require_hermitian(c, f"control[{i}]") for i, c in enumerate(self.controls)
        )
        for i, control in enumerate(controls):
            if control.shape != drift.shape:
                raise ValueError(
                    f"control[{i}] has shape {control.shape}, drift has {drift.shape}"
                )
        if self.nominal_amplitudes and len(self.nominal_amplitudes) != len(controls):
            raise ValueError("nominal_amplitudes must have one value per control")
        for matrix in (drift,) + controls:
            matrix.setflags(write=False)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "nominal_amplitudes", tuple(float(a) for a in self.nominal_amplitudes))

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def matrix(self, amplitudes: Optional[Sequence[float]] = None) -> np.ndarray:
        """Total Hamiltonian for the given control amplitudes (nominal ones if omitted)"""
        if amplitudes is None:
            amplitudes = self.nominal_amplitudes or (0.0,) * self.n_controls
        if len(amplitudes) != self.n_controls:
            raise ValueError(f"expected {self.n_controls} amplitudes, got {len(amplitudes)}")
        total = np.array(self.drift)
        for amplitude, control in zip(amplitudes, self.controls):
            total = total + amplitude * control
        return total

    def with_drift(self, drift: np.ndarray) -> "Hamiltonian":
        return Hamiltonian(drift, self.controls, self.nominal_amplitudes)

    def with_control_scale(self, scale: float) -> "Hamiltonian":
        return Hamiltonian(self.drift, tuple(scale * c for c in self.controls), self.nominal_amplitudes)


def nv_ground_hamiltonian(params: NVParameters) -> Hamiltonian:
    """Ground-state NV Hamiltonian with optional nuclear spins

    The electron is the first tensor factor, nuclei follow in declaration
    order. Controls are the electron S_X and S_Y couplings of a microwave
    drive, embedded in the full space.
    """
    dims = params.dims
    total_dim = int(np.prod(dims))
    if total_dim > MAX_DIMENSION:
        raise ValueError(f"Hilbert dimension {total_dim} exceeds the cap of {MAX_DIMENSION}")

    electron = spin_operators(1)
    sx, sy, sz = electron.components()
    one = electron.identity
    bx, by, bz = params.b_field
    ex, ey, ez = params.e_field

    zero_field = params.d * (sz @ sz - 2 / 3 * one) + params.e * (sx @ sx - sy @ sy)
    zeeman = params.gamma_nv * (bx * sx + by * sy + bz * sz)
    electric = params.delta_par * ez * (sz @ sz - 2 / 3 * one) - params.delta_perp * (
        ex * (sx @ sy + sy @ sx) + ey * (sx @ sx - sy @ sy)
    )
    drift = embed(zero_field + zeeman + electric, 0, dims)

    s_full = [embed(op, 0, dims) for op in (sx, sy, sz)]
    for index, nucleus in enumerate(params.nuclei, start=1):
        ops = spin_operators(nucleus.spin)
        i_full = [embed(op, index, dims) for op in ops.components()]
        hyperfine = nucleus.n_tran * (s_full[0] @ i_full[0] + s_full[1] @ i_full[1]) + (
            nucleus.n_axial * s_full[2] @ i_full[2]
        )
        nuclear_zeeman = nucleus.gamma_n * (bx * i_full[0] + by * i_full[1] + bz * i_full[2])
        spin_sq = ops.s * (ops.s + 1) / 3
        quadrupole = nucleus.quadrupole * (
            i_full[2] @ i_full[2] - spin_sq * np.eye(total_dim, dtype=complex)
        )
        drift = drift + hyperfine + nuclear_zeeman + quadrupole

    logger.debug(f"NV Hamiltonian assembled: dims={dims}, nuclei={len(params.nuclei)}")
    return Hamiltonian(drift=drift, controls=(s_full[0], s_full[1]))


def nv_nv_dipole_hamiltonian(r, gamma: float = GAMMA_NV) -> Hamiltonian:
    """Magnetic dipole coupling between two NV electron spins

    Args:
        r: Displacement between the two centers in nm
        gamma: Gyromagnetic ratio of the coupled spins (rad/us per mT)

    Returns:
        9x9 drift-only Hamiltonian, spin 1 first
    """
    r = _vector(r, "r")
    distance = float(np.linalg.norm(r))
    if distance == 0.0:
        raise ValueError("NV-NV displacement must be non-zero")
    unit = r / distance
    coupling = gamma * DIPOLAR_FIELD_NM3 / distance**3

    ops = spin_operators(1).components()
    s1 = [embed(op, 0, [3, 3]) for op in ops]
    s2 = [embed(op, 1, [3, 3]) for op in ops]
    scalar = sum(a @ b for a, b in zip(s1, s2))
    s1_r = sum(u * a for u, a in zip(unit, s1))
    s2_r = sum(u * b for u, b in zip(unit, s2))
    drift = coupling * (scalar - 3 * s1_r @ s2_r)
    return Hamiltonian(drift=(drift + drift.conj().T) / 2)


def rwa_qubit_hamiltonian(delta: float, omega: float, phi: float = 0.0) -> Hamiltonian:
    """Rotating-frame qubit: delta*s_z + omega*(cos(phi) s_x + sin(phi) s_y)

    The drive is exposed as controls (s_x, s_y) with nominal amplitudes
    (omega cos(phi), omega sin(phi)).
    """
    ops = spin_operators(0.5)
    return Hamiltonian(
        drift=delta * ops.sz,
        controls=(ops.sx, ops.sy),
        nominal_amplitudes=(omega * np.cos(phi), omega * np.sin(phi)),
    )


def lab_frame_qubit_hamiltonian(omega_q: float) -> Hamiltonian:
    """Laboratory-frame qubit driven through 2*s_x, no rotating-wave approximation

    A carrier u(t) = Omega*cos(omega_d t + phi) on this control reduces to the
    rotating-frame drive of rwa_qubit_hamiltonian with Rabi frequency Omega
    and detuning omega_q - omega_d when Omega << omega_q.
    """
    ops = spin_operators(0.5)
    return Hamiltonian(drift=omega_q * ops.sz, controls=(2 * ops.sx,))


@dataclass(frozen=True)
class Transition:
    """Magnetic-dipole allowed transition between two drift eigenstates"""

    frequency: float
    weight: float
    lower: int
    upper: int


def odmr_transitions(params: NVParameters, min_weight: float = 1e-3) -> List[Transition]:
    """Resonance lines an ODMR sweep would show for the given NV parameters

    Weights are sum_c |<f|H_c|i>|^2 over the microwave controls, normalized to
    the strongest line. Lines at the same frequency are merged.
    """
    hamiltonian = nv_ground_hamiltonian(params)
    energies, vectors = np.linalg.eigh(hamiltonian.drift)
    couplings = [vectors.conj().T @ c @ vectors for c in hamiltonian.controls]

    lines: List[Transition] = []
    for upper in range(len(energies)):
        for lower in range(upper):
            weight = float(sum(abs(c[upper, lower]) ** 2 for c in couplings))
            lines.append(Transition(energies[upper] - energies[lower], weight, lower, upper))
    if not lines:
        return []

    strongest = max(line.weight for line in lines)
    if strongest == 0.0:
        return []
    tolerance = 1e-9 * max(1.0, float(np.max(np.abs(energies))))

    merged: List[Transition] = []
    for line in sorted(lines, key=lambda t: t.frequency):
        if line.weight / strongest < min_weight:
            continue
        if merged and abs(line.frequency - merged[-1].frequency) <= tolerance:
            last = merged[-1]
            merged[-1] = Transition(last.frequency, last.weight + line.weight, last.lower, last.upper)
        else:
            merged.append(line)
    top = max(t.weight for t in merged)
    return [Transition(t.frequency, t.weight / top, t.lower, t.upper) for t in merged]
