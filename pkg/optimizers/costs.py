"""
Cost functions for pulse optimization

Terminal costs (state, gate, Fisher), running costs (power, bandwidth),
robustness ensembles and control-space mappings. Costs act on physical
pulses; optimizers apply any ControlMapping before calling in here.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, ClassVar, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from physics.propagate import PulseSet, normalized_state, propagate, total_propagator
from physics.spinsys import Hamiltonian, require_hermitian, spin_operators
from src.config import FD_STEP, FISHER_SENTINEL, P_FLOOR

NORM_TOL = 1e-8
PROBABILITY_TOL = 1e-10


# ---------------------------------------------------------------------------
# Terminal costs
# ---------------------------------------------------------------------------

def j_state(psi_final, psi_target, phase_sensitive: bool = False) -> float:
    """1 - |<target|final>|^2, or 1 - Re<final|target> with the global phase fixed"""
    psi_final = normalized_state(psi_final, name="final state")
    psi_target = normalized_state(psi_target, psi_final.shape[0], "target state")
    overlap = np.vdot(psi_target, psi_final)
    if phase_sensitive:
        return float(1.0 - overlap.real)
    return float(max(0.0, 1.0 - abs(overlap) ** 2))


def _require_unitary(matrix, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"{name} must be square, got shape {matrix.shape}")
    deviation = np.max(np.abs(matrix.conj().T @ matrix - np.eye(matrix.shape[0])))
    if deviation > NORM_TOL:
        raise ValueError(f"{name} is not unitary (deviation {deviation:.3e})")
    return matrix


def j_gate(unitary, target, phase_sensitive: bool = False) -> float:
    """1 - |Tr(target^dagger U)|^2 / N^2, or 1 - Re Tr(target^dagger U) / N"""
    unitary = _require_unitary(unitary, "propagator")
    target = _require_unitary(target, "target gate")
    if unitary.shape != target.shape:
        raise ValueError(f"gate dimension mismatch: {unitary.shape} vs {target.shape}")
    n = unitary.shape[0]
    trace = np.trace(target.conj().T @ unitary)
    if phase_sensitive:
        return float(1.0 - trace.real / n)
    return float(max(0.0, 1.0 - abs(trace) ** 2 / n**2))


def rotation_target(angle: float, axis: str = "x") -> np.ndarray:
    """Qubit rotation exp(-i angle sigma_axis / 2)"""
    ops = spin_operators(0.5)
    generator = {"x": ops.sx, "y": ops.sy, "z": ops.sz}.get(axis)
    if generator is None:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    return np.cos(angle / 2) * np.eye(2) - 2j * np.sin(angle / 2) * generator


def hadamard_target() -> np.ndarray:
    """Hadamard-form gate (1/sqrt 2)[[1, -i], [-i, 1]], a pi/2 rotation about x"""
    return np.array([[1, -1j], [-1j, 1]], dtype=complex) / np.sqrt(2)


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------

class MeasurementModel:
    """Outcome distribution p(x|theta) of a simulated measurement"""

    def __init__(self, probabilities: Callable[[float], Sequence[float]], name: str = "model"):
        self._probabilities = probabilities
        self.name = name

    def probabilities(self, theta: float) -> np.ndarray:
        p = np.asarray(self._probabilities(theta), dtype=float)
        if np.any(p < -PROBABILITY_TOL):
            raise ValueError(f"{self.name}: negative probability at theta={theta}: {p}")
        total = p.sum()
        if abs(total - 1.0) > PROBABILITY_TOL:
            raise ValueError(f"{self.name}: distribution sums to {total:.12f} at theta={theta}")
        return np.clip(p, 0.0, None)

    @classmethod
    def binary(cls, p1: Callable[[float], float], name: str = "binary") -> "MeasurementModel":
        return cls(lambda theta: (1.0 - p1(theta), p1(theta)), name)

    @classmethod
    def ramsey(cls, gamma: float, tau: float, contrast: float = 1.0, phase_ref: float = 0.0) -> "MeasurementModel":
        """Two-outcome Ramsey readout of a static field theta"""

        def probabilities(b):
            p0 = 0.5 * (1.0 + contrast * np.cos(gamma * b * tau + phase_ref))
            return (p0, 1.0 - p0)

        return cls(probabilities, "ramsey")


def fisher_information(model: MeasurementModel, theta0: float, h: float = FD_STEP, p_floor: float = P_FLOOR) -> float:
    """sum_x (dp/dtheta)^2 / p over outcomes with p > p_floor, central differences"""
    p = model.probabilities(theta0)
    dp = (model.probabilities(theta0 + h) - model.probabilities(theta0 - h)) / (2 * h)
    mask = p > p_floor
    return float(np.sum(dp[mask] ** 2 / p[mask]))


def j_fisher(model: MeasurementModel, theta0: float, n_measurements: int, **kwargs) -> float:
    """Cramér-Rao variance bound 1/(N F); FISHER_SENTINEL when F vanishes"""
    if n_measurements < 1:
        raise ValueError(f"n_measurements must be at least 1, got {n_measurements}")
    information = fisher_information(model, theta0, **kwargs)
    if information <= 0.0:
        return FISHER_SENTINEL
    return min(FISHER_SENTINEL, 1.0 / (n_measurements * information))


# ---------------------------------------------------------------------------
# Running costs
# ---------------------------------------------------------------------------

def j_power(pulse, dt: float, p_lim: float, weight: float = 1.0) -> float:
    """weight * max(0, P/P_lim - 1)^2 with P = sum u^2 dt"""
    if p_lim <= 0:
        raise ValueError(f"P_lim must be positive, got {p_lim}")
    power = float(np.sum(np.square(pulse)) * dt)
    return weight * max(0.0, power / p_lim - 1.0) ** 2


def j_power_gradient(pulse, dt: float, p_lim: float, weight: float = 1.0) -> np.ndarray:
    pulse = np.asarray(pulse, dtype=float)
    excess = max(0.0, float(np.sum(pulse**2) * dt) / p_lim - 1.0)
    return weight * 2.0 * excess / p_lim * 2.0 * pulse * dt


def j_bandwidth(pulse, dt: float, eps: float) -> float:
    """eps * sum ((u_{k+1} - u_k) / dt)^2 dt"""
    pulse = np.asarray(pulse, dtype=float)
    if pulse.shape[0] < 2:
        raise ValueError("bandwidth penalty needs at least 2 slices")
    return float(eps * np.sum(np.diff(pulse) ** 2) / dt)


def j_bandwidth_gradient(pulse, dt: float, eps: float) -> np.ndarray:
    pulse = np.asarray(pulse, dtype=float)
    diff = np.diff(pulse)
    grad = np.zeros_like(pulse)
    grad[:-1] -= diff
    grad[1:] += diff
    return 2.0 * eps / dt * grad


# ---------------------------------------------------------------------------
# Control-space mappings
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ControlMapping:
    """Map raw optimizer amplitudes to physical ones: clip, sin or shape"""

    mode: str
    u_max: Optional[float] = None
    shape: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in ("clip", "sin", "shape"):
            raise ValueError(f"Unknown mapping mode {self.mode!r}; use clip, sin or shape")
        if self.mode in ("clip", "sin") and not (self.u_max and self.u_max > 0):
            raise ValueError(f"{self.mode} mapping requires u_max > 0")
        if self.mode == "shape":
            if self.shape is None:
                raise ValueError("shape mapping requires sampled shape values")
            object.__setattr__(self, "shape", np.asarray(self.shape, dtype=float))

    def _shape_for(self, raw: PulseSet) -> np.ndarray:
        shape = self.shape
        if shape.shape[-1] != raw.n_slices:
            raise ValueError(
                f"shape function has {shape.shape[-1]} samples, pulse grid has {raw.n_slices}"
            )
        return shape

    def apply(self, raw: PulseSet) -> PulseSet:
        u = raw.amplitudes
        if self.mode == "clip":
            mapped = np.clip(u, -self.u_max, self.u_max)
        elif self.mode == "sin":
            mapped = self.u_max * np.sin(u)
        else:
            mapped = self._shape_for(raw) * u
        return raw.with_amplitudes(mapped)

    def derivative(self, raw: PulseSet) -> np.ndarray:
        """Pointwise d(mapped)/d(raw) for the chain rule"""
        u = raw.amplitudes
        if self.mode == "clip":
            return ((u > -self.u_max) & (u < self.u_max)).astype(float)
        if self.mode == "sin":
            return self.u_max * np.cos(u)
        return np.broadcast_to(self._shape_for(raw), u.shape).astype(float)


def map_controls(raw: PulseSet, mapping: Optional[ControlMapping]) -> PulseSet:
    return raw if mapping is None else mapping.apply(raw)


def sine_envelope(n_slices: int) -> np.ndarray:
    """Shape function sin(pi t / T) sampled at slice midpoints"""
    return np.sin(np.pi * (np.arange(n_slices) + 0.5) / n_slices)


# ---------------------------------------------------------------------------
# Cost specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StateTerminal:
    psi0: np.ndarray
    target: np.ndarray
    phase_sensitive: bool = False
    kind: ClassVar[str] = "state"

    def __post_init__(self):
        object.__setattr__(self, "psi0", normalized_state(self.psi0, name="initial state"))
        object.__setattr__(self, "target", normalized_state(self.target, len(self.psi0), "target state"))


@dataclass(frozen=True, eq=False)
class GateTerminal:
    target: np.ndarray
    phase_sensitive: bool = False
    kind: ClassVar[str] = "gate"

    def __post_init__(self):
        object.__setattr__(self, "target", _require_unitary(self.target, "target gate"))


@dataclass(frozen=True, eq=False)
class FisherTerminal:
    """Estimate theta in H_theta = H(u) + theta * generator from a projective readout"""

    psi0: np.ndarray
    generator: np.ndarray
    povm: Tuple[np.ndarray, ...]
    theta0: float
    n_measurements: int = 1
    kind: ClassVar[str] = "fisher"

    def __post_init__(self):
        object.__setattr__(self, "psi0", normalized_state(self.psi0, name="initial state"))
        object.__setattr__(self, "generator", require_hermitian(self.generator, "generator"))
        povm = tuple(np.asarray(e, dtype=complex) for e in self.povm)
        if not povm:
            raise ValueError("fisher terminal needs at least one POVM element")
        if np.max(np.abs(sum(povm) - np.eye(len(self.psi0)))) > PROBABILITY_TOL:
            raise ValueError("POVM elements must sum to the identity")
        object.__setattr__(self, "povm", povm)
        if self.n_measurements < 1:
            raise ValueError("n_measurements must be at least 1")

    def model(self, system: Hamiltonian, pulses: PulseSet) -> MeasurementModel:
        def probabilities(theta):
            shifted = system.with_drift(system.drift + theta * self.generator)
            psi = propagate(shifted, pulses, self.psi0).final_state
            return [float(np.real(np.vdot(psi, e @ psi))) for e in self.povm]

        return MeasurementModel(probabilities, "fisher terminal")


Terminal = Union[StateTerminal, GateTerminal, FisherTerminal]


@dataclass(frozen=True)
class RunningCost:
    kind: str
    weight: float = 1.0
    p_lim: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("power", "bandwidth"):
            raise ValueError(f"Unknown running cost {self.kind!r}; use power or bandwidth")
        if self.weight < 0:
            raise ValueError("running cost weights must be non-negative")
        if self.kind == "power" and not (self.p_lim and self.p_lim > 0):
            raise ValueError("power penalty requires p_lim > 0")

    def value(self, pulses: PulseSet) -> float:
        if self.kind == "power":
            return sum(j_power(u, pulses.dt, self.p_lim, self.weight) for u in pulses.amplitudes)
        return sum(j_bandwidth(u, pulses.dt, self.weight) for u in pulses.amplitudes)

    def gradient(self, pulses: PulseSet) -> np.ndarray:
        if self.kind == "power":
            rows = [j_power_gradient(u, pulses.dt, self.p_lim, self.weight) for u in pulses.amplitudes]
        else:
            rows = [j_bandwidth_gradient(u, pulses.dt, self.weight) for u in pulses.amplitudes]
        return np.array(rows).reshape(pulses.amplitudes.shape)


@dataclass(frozen=True, eq=False)
class EnsembleMember:
    system: Hamiltonian
    weight: float
    label: str = ""


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Terminal cost + weighted running costs + optional robustness ensemble"""

    terminal: Terminal
    running: Tuple[RunningCost, ...] = ()
    ensemble: Tuple[EnsembleMember, ...] = ()
    max_workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "running", tuple(self.running))
        members = tuple(self.ensemble)
        if members:
            weights = np.array([m.weight for m in members], dtype=float)
            if np.any(weights < 0) or weights.sum() <= 0:
                raise ValueError("ensemble weights must be non-negative with a positive sum")
            weights = weights / weights.sum()
            members = tuple(EnsembleMember(m.system, float(w), m.label) for m, w in zip(members, weights))
        object.__setattr__(self, "ensemble", members)

    def members(self, system: Hamiltonian) -> Tuple[EnsembleMember, ...]:
        return self.ensemble or (EnsembleMember(system, 1.0, "nominal"),)


def terminal_cost(system: Hamiltonian, pulses: PulseSet, terminal: Terminal) -> float:
    if terminal.kind == "state":
        final = propagate(system, pulses, terminal.psi0).final_state
        return j_state(final, terminal.target, terminal.phase_sensitive)
    if terminal.kind == "gate":
        return j_gate(total_propagator(system, pulses), terminal.target, terminal.phase_sensitive)
    return j_fisher(terminal.model(system, pulses), terminal.theta0, terminal.n_measurements)


def running_cost(pulses: PulseSet, spec: CostSpec) -> float:
    return float(sum(term.value(pulses) for term in spec.running))


def map_members(function: Callable[[EnsembleMember], float], members: Sequence[EnsembleMember], max_workers: int = 1) -> List:
    """Evaluate members in order; results come back in member order either way"""
    if max_workers <= 1 or len(members) <= 1:
        return [function(m) for m in members]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(function, members))


def member_costs(spec: CostSpec, pulses: PulseSet, system: Optional[Hamiltonian] = None) -> List[float]:
    members = spec.members(system) if system is not None else spec.ensemble
    return map_members(lambda m: terminal_cost(m.system, pulses, spec.terminal), members, spec.max_workers)


def j_robust(spec: CostSpec, pulses: PulseSet) -> float:
    """Weighted ensemble average of the terminal cost, plus running costs"""
    if not spec.ensemble:
        raise ValueError("robust cost requires a non-empty ensemble")
    costs = member_costs(spec, pulses)
    terminal = 0.0
    for member, cost in zip(spec.ensemble, costs):
        terminal += member.weight * cost
    return terminal + running_cost(pulses, spec)


def total_cost(system: Hamiltonian, pulses: PulseSet, spec: CostSpec) -> float:
    """Full objective: robust average when an ensemble is set, nominal system otherwise"""
    if spec.ensemble:
        return j_robust(spec, pulses)
    return terminal_cost(system, pulses, spec.terminal) + running_cost(pulses, spec)


def worst_case_cost(system: Hamiltonian, pulses: PulseSet, spec: CostSpec) -> float:
    return float(max(member_costs(spec, pulses, system)))


# ---------------------------------------------------------------------------
# Ensemble builders
# ---------------------------------------------------------------------------

def _weights(values: Sequence[float], weights, distribution) -> np.ndarray:
    if weights is not None and distribution is not None:
        raise ValueError("pass either weights or a distribution, not both")
    if distribution is not None:
        weights = [distribution(v) for v in values]
    if weights is None:
        weights = np.ones(len(values))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(values),):
        raise ValueError("one weight per ensemble member is required")
    return weights


def detuning_ensemble(
    system: Hamiltonian,
    offsets: Sequence[float],
    operator: Optional[np.ndarray] = None,
    weights: Optional[Sequence[float]] = None,
    distribution: Optional[Callable[[float], float]] = None,
) -> Tuple[EnsembleMember, ...]:
    """Members with drift + delta * operator (qubit s_z by default)"""
    if operator is None:
        if system.dim != 2:
            raise ValueError("detuning operator must be given for non-qubit systems")
        operator = spin_operators(0.5).sz
    w = _weights(offsets, weights, distribution)
    return tuple(
        EnsembleMember(system.with_drift(system.drift + delta * operator), float(wi), f"detuning={delta:g}")
        for delta, wi in zip(offsets, w)
    )


def amplitude_ensemble(
    system: Hamiltonian,
    errors: Sequence[float],
    weights: Optional[Sequence[float]] = None,
    distribution: Optional[Callable[[float], float]] = None,
) -> Tuple[EnsembleMember, ...]:
    """Members whose control couplings are scaled by (1 + error), a Rabi-frequency miscalibration"""
    w = _weights(errors, weights, distribution)
    return tuple(
        EnsembleMember(system.with_control_scale(1.0 + err), float(wi), f"rabi_error={err:g}")
        for err, wi in zip(errors, w)
    )


def describe(spec: CostSpec) -> str:
    parts = [spec.terminal.kind] + [term.kind for term in spec.running]
    if spec.ensemble:
        parts.append(f"ensemble[{len(spec.ensemble)}]")
    text = "+".join(parts)
    logger.debug(f"Cost specification: {text}")
    return text
