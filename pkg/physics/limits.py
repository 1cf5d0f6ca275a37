"""
Quantum speed limit and controllability checks (hbar = 1)
"""
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from loguru import logger

from physics.propagate import PulseSet, normalized_state
from physics.spinsys import Hamiltonian, require_hermitian

VARIANCE_FLOOR = 1e-12
RESIDUAL_TOL = 1e-9
MAX_LIE_DIMENSION = 9


@dataclass(frozen=True)
class QslReport:
    delta_e: float
    angle: float
    t_qsl: float
    infinite: bool

    def to_dict(self):
        return {
            "delta_e": float(self.delta_e),
            "angle": float(self.angle),
            "t_qsl": "infinite" if self.infinite else float(self.t_qsl),
            "infinite": bool(self.infinite),
        }


@dataclass(frozen=True)
class ControllabilityReport:
    lie_dim: int
    full_dim: int
    controllable: bool

    def to_dict(self):
        return {"lie_dim": int(self.lie_dim), "full_dim": int(self.full_dim), "controllable": bool(self.controllable)}


def qsl_bhattacharyya(h, psi0, psit) -> QslReport:
    """Bhattacharyya bound T >= arccos|<psi0|psit>| / dE for a time-independent H

    Args:
        h: Hermitian matrix
        psi0: Initial state (normalized)
        psit: Target state (normalized)

    Returns:
        QslReport; `infinite` is set when psi0 is an eigenstate of h (dE < 1e-12)
        and the target differs from it.
    """
    h = require_hermitian(h, "QSL Hamiltonian")
    psi0 = normalized_state(psi0, h.shape[0], "psi0")
    psit = normalized_state(psit, h.shape[0], "psit")

    mean = np.vdot(psi0, h @ psi0).real
    second = np.vdot(h @ psi0, h @ psi0).real
    delta_e = float(np.sqrt(max(second - mean ** 2, 0.0)))
    angle = float(np.arccos(min(1.0, abs(np.vdot(psi0, psit)))))

    if angle == 0.0:
        return QslReport(delta_e, 0.0, 0.0, False)
    if delta_e < VARIANCE_FLOOR:
        return QslReport(delta_e, angle, np.inf, True)
    return QslReport(delta_e, angle, angle / delta_e, False)


def qsl_for_pulses(system: Hamiltonian, pulses: PulseSet, psi0, psit) -> QslReport:
    """Indicative bound for a pulsed solution: the largest-norm slice held constant"""
    norms = np.linalg.norm(pulses.amplitudes, axis=0) if pulses.n_controls else np.zeros(pulses.n_slices)
    strongest = int(np.argmax(norms))
    return qsl_bhattacharyya(system.matrix(pulses.amplitudes[:, strongest]), psi0, psit)


def minimal_time_check(report: QslReport, duration: float, tol: float = 1e-9) -> bool:
    """True when a transfer of the given duration respects the bound"""
    if report.infinite:
        return False
    return duration >= report.t_qsl - tol


def _traceless_generator(h: np.ndarray) -> np.ndarray:
    n = h.shape[0]
    return 1j * (h - np.trace(h) / n * np.eye(n))


def _add_direction(basis: List[np.ndarray], candidate: np.ndarray) -> bool:
    """Gram-Schmidt under the real Hilbert-Schmidt product; appends unit residual if independent"""
    norm = np.linalg.norm(candidate)
    if norm == 0:
        return False
    residual = candidate.copy()
    for b in basis:
        residual -= np.real(np.vdot(b, residual)) * b
    # second pass against round-off
    for b in basis:
        residual -= np.real(np.vdot(b, residual)) * b
    size = np.linalg.norm(residual)
    if size <= RESIDUAL_TOL * norm:
        return False
    basis.append(residual / size)
    return True


def controllability_rank(drift, controls: Sequence = ()) -> ControllabilityReport:
    """Dimension of the Lie algebra generated by i(H_d), i(H_c) (traceless parts)

    Args:
        drift: Drift Hamiltonian
        controls: Control Hamiltonians, same dimension

    Returns:
        ControllabilityReport; controllable when the algebra spans su(N)
    """
    matrices = [require_hermitian(drift, "drift")] + [
        require_hermitian(c, f"control {k}") for k, c in enumerate(controls)
    ]
    n = matrices[0].shape[0]
    if any(m.shape != (n, n) for m in matrices):
        raise ValueError("drift and controls must share one dimension")
    if n > MAX_LIE_DIMENSION:
        raise ValueError(f"controllability test supports N <= {MAX_LIE_DIMENSION}, got {n}")

    full_dim = n * n - 1
    basis: List[np.ndarray] = []
    for m in matrices:
        _add_direction(basis, _traceless_generator(m))

    budget = (n * n) ** 2
    evaluations = 0
    frontier = list(range(len(basis)))
    while frontier and evaluations < budget and len(basis) < full_dim:
        new_frontier = []
        for i in frontier:
            for j in range(len(basis)):
                if evaluations >= budget or len(basis) >= full_dim:
                    break
                if i == j:
                    continue
                evaluations += 1
                a, b = basis[i], basis[j]
                if _add_direction(basis, a @ b - b @ a):
                    new_frontier.append(len(basis) - 1)
        frontier = new_frontier

    lie_dim = len(basis)
    logger.debug(f"Lie closure: dim {lie_dim}/{full_dim} after {evaluations} commutators")
    return ControllabilityReport(lie_dim, full_dim, lie_dim == full_dim)
