"""
Piecewise-constant closed-system time evolution

Slice propagators are exp(-i H dt) from the Hermitian eigendecomposition of
the slice Hamiltonian. Products are time-ordered rightmost-earliest:
U(T) = U_n ... U_2 U_1.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger

from physics.spinsys import Hamiltonian, require_hermitian

NORM_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class PulseSet:
    """Sampled control amplitudes, one row per control, one column per slice"""

    t_final: float
    n_slices: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.n_slices < 1:
            raise ValueError(f"n_slices must be positive, got {self.n_slices}")
        if not (np.isfinite(self.t_final) and self.t_final > 0):
            raise ValueError(f"t_final must be positive, got {self.t_final}")
        amplitudes = np.array(self.amplitudes, dtype=float, ndmin=2)
        if amplitudes.size == 0:
            amplitudes = amplitudes.reshape(0, self.n_slices)
        if amplitudes.shape[1] != self.n_slices:
            raise ValueError(
                f"every control needs {self.n_slices} samples, got shape {amplitudes.shape}"
            )
        if np.isnan(amplitudes).any():
            raise ValueError("NaN amplitude in pulse set")
        if not np.all(np.isfinite(amplitudes)):
            raise ValueError("pulse amplitudes must be finite")
        amplitudes.setflags(write=False)
        object.__setattr__(self, "amplitudes", amplitudes)

    @classmethod
    def constant(cls, t_final: float, n_slices: int, values: Sequence[float]) -> "PulseSet":
        values = np.asarray(values, dtype=float).reshape(-1, 1)
        return cls(t_final, n_slices, np.repeat(values, n_slices, axis=1))

    @classmethod
    def zeros(cls, t_final: float, n_slices: int, n_controls: int) -> "PulseSet":
        return cls(t_final, n_slices, np.zeros((n_controls, n_slices)))

    @property
    def dt(self) -> float:
        return self.t_final / self.n_slices

    @property
    def n_controls(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def times(self) -> np.ndarray:
        """Slice boundaries, n_slices + 1 instants"""
        return np.linspace(0.0, self.t_final, self.n_slices + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_slices) + 0.5) * self.dt

    def with_amplitudes(self, amplitudes: np.ndarray) -> "PulseSet":
        return PulseSet(self.t_final, self.n_slices, amplitudes)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States at the slice boundaries of a propagation"""

    times: np.ndarray
    states: np.ndarray

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def populations(self) -> np.ndarray:
        return np.abs(self.states) ** 2

    def expectation_values(self, operator: np.ndarray) -> np.ndarray:
        operator = np.asarray(operator, dtype=complex)
        return np.real(np.einsum("ti,ij,tj->t", self.states.conj(), operator, self.states))


@dataclass(frozen=True, eq=False)
class SliceEigensystem:
    """Eigendecomposition of one slice Hamiltonian and its propagator"""

    energies: np.ndarray
    vectors: np.ndarray
    unitary: np.ndarray


def slice_eigensystem(hamiltonian: np.ndarray, dt: float) -> SliceEigensystem:
    energies, vectors = np.linalg.eigh(hamiltonian)
    unitary = (vectors * np.exp(-1j * energies * dt)) @ vectors.conj().T
    return SliceEigensystem(energies, vectors, unitary)


def expm_slice(hamiltonian: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i H dt) for a Hermitian H via its eigendecomposition"""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    hamiltonian = require_hermitian(hamiltonian, "slice Hamiltonian")
    return slice_eigensystem(hamiltonian, dt).unitary


def _check_pulses(system: Hamiltonian, pulses: PulseSet):
    if pulses.n_controls != system.n_controls:
        raise ValueError(
            f"pulse set has {pulses.n_controls} controls, Hamiltonian has {system.n_controls}"
        )


def normalized_state(psi: Sequence[complex], dim: Optional[int] = None, name: str = "state") -> np.ndarray:
    """Validate a state vector: right dimension, unit norm within NORM_TOL"""
    psi = np.asarray(psi, dtype=complex).ravel()
    if dim is not None and psi.shape[0] != dim:
        raise ValueError(f"{name} has dimension {psi.shape[0]}, expected {dim}")
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > NORM_TOL:
        raise ValueError(f"{name} is not normalized (norm {norm:.12f})")
    return psi


def slice_hamiltonians(system: Hamiltonian, pulses: PulseSet) -> List[np.ndarray]:
    _check_pulses(system, pulses)
    return [system.matrix(pulses.amplitudes[:, k]) for k in range(pulses.n_slices)]


def slice_eigensystems(system: Hamiltonian, pulses: PulseSet) -> List[SliceEigensystem]:
    return [slice_eigensystem(h, pulses.dt) for h in slice_hamiltonians(system, pulses)]


def propagate(system: Hamiltonian, pulses: PulseSet, psi0: Sequence[complex]) -> Trajectory:
    """Evolve psi0 through every slice, keeping the state at each boundary"""
    psi = normalized_state(psi0, system.dim, "psi0")
    states = np.empty((pulses.n_slices + 1, system.dim), dtype=complex)
    states[0] = psi
    for k, hamiltonian in enumerate(slice_hamiltonians(system, pulses)):
        psi = expm_slice(hamiltonian, pulses.dt) @ psi
        states[k + 1] = psi

    drift = abs(np.linalg.norm(psi) - 1.0)
    if drift > 1e-10:
        logger.warning(f"Norm drift {drift:.2e} after {pulses.n_slices} slices")
    return Trajectory(times=pulses.times, states=states)


def total_propagator(system: Hamiltonian, pulses: PulseSet) -> np.ndarray:
    """Ordered product U_n ... U_1 over all slices"""
    unitary = np.eye(system.dim, dtype=complex)
    for hamiltonian in slice_hamiltonians(system, pulses):
        unitary = expm_slice(hamiltonian, pulses.dt) @ unitary
    return unitary


def carrier_pulse(envelope: Sequence[float], omega_d: float, phi: float, t_final: float) -> PulseSet:
    """Sample Omega_k * cos(omega_d t + phi) at slice midpoints for a lab-frame drive"""
    envelope = np.asarray(envelope, dtype=float)
    n_slices = envelope.shape[0]
    midpoints = (np.arange(n_slices) + 0.5) * t_final / n_slices
    return PulseSet(t_final, n_slices, (envelope * np.cos(omega_d * midpoints + phi))[None, :])
