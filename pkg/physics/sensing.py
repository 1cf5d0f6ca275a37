"""
Pulsed sensing protocols with instantaneous (hard) pulses

Ramsey, spin echo and multi-pulse dynamical decoupling: accumulated phase,
modulation and filter functions, decoherence envelopes, two-outcome readout
and sensitivity estimates. Field in mT, time in us, gamma in rad/(us mT).
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy.integrate import quad
from scipy.optimize import curve_fit

from optimizers.costs import MeasurementModel, j_fisher
from optimizers.crab import nelder_mead
from optimizers.report import OptimizationReport
from physics.propagate import PulseSet, propagate
from physics.spinsys import GAMMA_NV, rwa_qubit_hamiltonian
from src.config import FISHER_SENTINEL

QUAD_EPSREL = 1e-10
QUAD_EPSABS = 1e-13
QUAD_LIMIT = 400
ANGLE_TOL = 1e-9
MAX_TIMING_PARAMETERS = 16

XY4_AXES = ("x", "y", "x", "y")
XY8_AXES = ("x", "y", "x", "y", "y", "x", "y", "x")
XY16_AXES = XY8_AXES + tuple("-" + a for a in XY8_AXES)


# ---------------------------------------------------------------------------
# Sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rotation:
    angle: float
    axis: str
    time: float

    def __post_init__(self):
        if self.axis not in ("x", "y", "-x", "-y"):
            raise ValueError(f"rotation axis must be x, y, -x or -y, got {self.axis!r}")

    @property
    def is_flip(self) -> bool:
        return abs(np.remainder(self.angle, 2 * np.pi) - np.pi) < ANGLE_TOL


@dataclass(frozen=True)
class FreePrecession:
    start: float
    duration: float

    @property
    def end(self) -> float:
        return self.start + self.duration


Event = Union[Rotation, FreePrecession]


@dataclass(frozen=True)
class SensingSequence:
    """Hard-pulse sequence: rotations at instants, free precession in between"""

    events: Tuple[Event, ...]
    total_time: float
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.total_time > 0:
            raise ValueError(f"total_time must be positive, got {self.total_time}")
        cursor = 0.0
        for event in self.events:
            if isinstance(event, Rotation):
                if event.time < cursor - 1e-12 or event.time > self.total_time + 1e-12:
                    raise ValueError(f"rotation at t={event.time} is out of order or outside the sequence")
                cursor = event.time
            else:
                if event.duration < 0:
                    raise ValueError("free precession duration must be non-negative")
                if event.start < cursor - 1e-12 or event.end > self.total_time + 1e-12:
                    raise ValueError(
                        f"free precession [{event.start}, {event.end}] overlaps another event"
                    )
                cursor = event.end

    @property
    def rotations(self) -> List[Rotation]:
        return [e for e in self.events if isinstance(e, Rotation)]

    @property
    def flip_times(self) -> List[float]:
        return [r.time for r in self.rotations if r.is_flip]

    @property
    def is_ramsey_class(self) -> bool:
        return not self.flip_times


def sequence_from_pulses(pulse_times: Sequence[float], total_time: float, axes: Optional[Sequence[str]] = None, name: str = "dd") -> SensingSequence:
    """pi/2 - [free - pi]* - free - pi/2 with pi pulses at the given instants"""
    pulse_times = [float(t) for t in pulse_times]
    axes = list(axes) if axes is not None else ["y"] * len(pulse_times)
    if len(axes) != len(pulse_times):
        raise ValueError("one axis per pi pulse is required")
    if any(b <= a for a, b in zip([0.0] + pulse_times, pulse_times + [total_time])):
        raise ValueError("pi pulses must be strictly inside (0, total_time) and strictly increasing")

    events: List[Event] = [Rotation(np.pi / 2, "x", 0.0)]
    start = 0.0
    for t, axis in zip(pulse_times, axes):
        events.append(FreePrecession(start, t - start))
        events.append(Rotation(np.pi, axis, t))
        start = t
    events.append(FreePrecession(start, total_time - start))
    events.append(Rotation(np.pi / 2, "x", total_time))
    return SensingSequence(tuple(events), total_time, name)


def ramsey_sequence(tau: float) -> SensingSequence:
    return sequence_from_pulses([], tau, name="ramsey")


def echo_sequence(tau: float) -> SensingSequence:
    """Hahn echo with total time 2 tau"""
    return sequence_from_pulses([tau], 2 * tau, name="echo")


def cpmg_sequence(n_pulses: int, total_time: float) -> SensingSequence:
    """CPMG-N: pi pulses at (k - 1/2) T / N, spacing T / N"""
    if n_pulses < 1:
        raise ValueError("CPMG needs at least one pi pulse")
    times = (np.arange(1, n_pulses + 1) - 0.5) * total_time / n_pulses
    return sequence_from_pulses(times, total_time, name=f"cpmg{n_pulses}")


def xy_sequence(kind: str, n_blocks: int, spacing: float) -> SensingSequence:
    """XY4 / XY8 / XY16 repeated n_blocks times with CPMG timing"""
    patterns = {"xy4": XY4_AXES, "xy8": XY8_AXES, "xy16": XY16_AXES}
    if kind not in patterns:
        raise ValueError(f"Unknown XY family {kind!r}; use xy4, xy8 or xy16")
    if n_blocks < 1:
        raise ValueError("n_blocks must be at least 1")
    axes = list(patterns[kind]) * n_blocks
    n = len(axes)
    times = (np.arange(1, n + 1) - 0.5) * spacing
    return sequence_from_pulses(times, n * spacing, axes, name=f"{kind}x{n_blocks}")


# ---------------------------------------------------------------------------
# Signals and envelopes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldSignal:
    """Field component along the NV axis, B(t) in mT"""

    kind: str
    function: Callable[[float], float]
    amplitude: float = 0.0
    omega: float = 0.0
    phase: float = 0.0

    def __call__(self, t):
        return self.function(t)

    @classmethod
    def dc(cls, b: float) -> "FieldSignal":
        return cls("dc", lambda t: b + 0.0 * np.asarray(t), amplitude=b)

    @classmethod
    def ac(cls, amplitude: float, omega: float, phase: float = 0.0) -> "FieldSignal":
        """amplitude * sin(omega t + phase)"""
        return cls("ac", lambda t: amplitude * np.sin(omega * np.asarray(t) + phase), amplitude, omega, phase)

    @classmethod
    def custom(cls, function: Callable[[float], float]) -> "FieldSignal":
        return cls("custom", function)


@dataclass(frozen=True)
class DecoherenceEnvelope:
    """Coherence weight exp(-(t/T)^p), T2* for Ramsey-class sequences, T2 otherwise"""

    t2_star: float = np.inf
    t2: float = np.inf
    exponent: float = 1.0

    def __post_init__(self):
        if not (self.t2_star > 0 and self.t2 > 0):
            raise ValueError("T2* and T2 must be positive")
        if self.exponent < 1:
            raise ValueError(f"envelope exponent must be >= 1, got {self.exponent}")

    def weight(self, t: float, ramsey_class: bool = False) -> float:
        scale = self.t2_star if ramsey_class else self.t2
        return float(np.exp(-((t / scale) ** self.exponent)))


# ---------------------------------------------------------------------------
# Phases
# ---------------------------------------------------------------------------

def _integrate(signal: FieldSignal, a: float, b: float) -> float:
    def integrand(t):
        value = float(signal(t))
        if not np.isfinite(value):
            raise ValueError(f"non-finite field sample B({t}) = {value}")
        return value

    if b <= a:
        return 0.0
    value, _ = quad(integrand, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
    return value


def ramsey_phase(signal: FieldSignal, tau: float, gamma: float = GAMMA_NV) -> float:
    """gamma * integral of B over [0, tau]"""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return gamma * _integrate(signal, 0.0, tau)


def echo_phase(signal: FieldSignal, tau: float, gamma: float = GAMMA_NV) -> float:
    """gamma * (integral over [0, tau] - integral over [tau, 2 tau])"""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return gamma * (_integrate(signal, 0.0, tau) - _integrate(signal, tau, 2 * tau))


@dataclass(frozen=True)
class ModulationFunction:
    """Piecewise +-1 sign history, +1 after the opening pi/2"""

    flip_times: Tuple[float, ...]
    total_time: float

    def segments(self) -> List[Tuple[float, float, float]]:
        edges = [0.0] + list(self.flip_times) + [self.total_time]
        return [(a, b, (-1.0) ** k) for k, (a, b) in enumerate(zip(edges[:-1], edges[1:]))]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        flips = np.searchsorted(np.asarray(self.flip_times), t, side="right")
        return np.where(flips % 2 == 0, 1.0, -1.0)


def modulation_function(seq: SensingSequence) -> ModulationFunction:
    rotations = seq.rotations
    first = rotations[0] if rotations else None
    if first is None or abs(first.time) > 1e-12 or abs(first.angle - np.pi / 2) > ANGLE_TOL:
        raise ValueError("sequence must open with a pi/2 rotation at t = 0")
    return ModulationFunction(tuple(seq.flip_times), seq.total_time)


def dd_phase(seq: SensingSequence, signal: FieldSignal, gamma: float = GAMMA_NV) -> float:
    """gamma * integral of B(t) M(t), integrated piecewise between pi pulses"""
    total = 0.0
    for a, b, sign in modulation_function(seq).segments():
        total = total + sign * _integrate(signal, a, b)
    return gamma * total


def filter_function(seq: SensingSequence, omegas: Sequence[float]) -> np.ndarray:
    """|y(w)|^2 of the modulation function over [0, T], normalized to unit peak on the grid"""
    omegas = np.asarray(omegas, dtype=float)
    y = np.zeros(omegas.shape, dtype=complex)
    nonzero = omegas != 0.0
    safe = np.where(nonzero, omegas, 1.0)
    for a, b, sign in modulation_function(seq).segments():
        piece = (np.exp(1j * safe * b) - np.exp(1j * safe * a)) / (1j * safe)
        y += sign * np.where(nonzero, piece, b - a)
    weights = np.abs(y) ** 2
    peak = weights.max() if weights.size else 0.0
    return weights / peak if peak > 0 else weights


def phase_sweep(kind: str, signal: FieldSignal, taus: Sequence[float], gamma: float = GAMMA_NV) -> np.ndarray:
    """Accumulated phase of a Ramsey (tau) or echo (2 tau) experiment for each tau"""
    if kind not in ("ramsey", "echo"):
        raise ValueError(f"sweep kind must be ramsey or echo, got {kind!r}")
    function = ramsey_phase if kind == "ramsey" else echo_phase
    return np.array([function(signal, tau, gamma) for tau in taus])


def population_sweep(
    kind: str,
    signal: FieldSignal,
    taus: Sequence[float],
    gamma: float = GAMMA_NV,
    contrast: float = 1.0,
    envelope: Optional[DecoherenceEnvelope] = None,
) -> np.ndarray:
    """p(0) = (1 + C W cos(phase)) / 2 along a tau sweep"""
    phases = phase_sweep(kind, signal, taus, gamma)
    durations = np.asarray(taus, dtype=float) * (1 if kind == "ramsey" else 2)
    weights = np.array(
        [envelope.weight(t, kind == "ramsey") if envelope else 1.0 for t in durations]
    )
    return 0.5 * (1.0 + contrast * weights * np.cos(phases))


# ---------------------------------------------------------------------------
# Readout and sensitivity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReadoutSummary:
    shots: int
    counts0: int
    p_true: float
    p_hat: float
    stderr: float


def readout_probability(phase: float, contrast: float, weight: float = 1.0) -> float:
    p0 = 0.5 * (1.0 + contrast * weight * np.cos(phase))
    assert -1e-12 <= p0 <= 1.0 + 1e-12, f"readout probability {p0} outside [0, 1]"
    return float(min(1.0, max(0.0, p0)))


def simulate_readout(
    phase: float,
    contrast: float,
    envelope: Optional[DecoherenceEnvelope],
    t_total: float,
    shots: int,
    seed: int,
    ramsey_class: bool = False,
) -> ReadoutSummary:
    """Bernoulli readout of p(0) = (1 + C W(t) cos(phase)) / 2 over many shots"""
    if shots < 1:
        raise ValueError("shots must be at least 1")
    if not 0 < contrast <= 1:
        raise ValueError(f"contrast must lie in (0, 1], got {contrast}")
    weight = envelope.weight(t_total, ramsey_class) if envelope else 1.0
    p0 = readout_probability(phase, contrast, weight)
    rng = np.random.Generator(np.random.PCG64(seed))
    counts0 = int(rng.binomial(shots, p0))
    p_hat = counts0 / shots
    stderr = float(np.sqrt(p_hat * (1 - p_hat) / shots))
    return ReadoutSummary(shots=shots, counts0=counts0, p_true=p0, p_hat=p_hat, stderr=stderr)


def sensitivity_eta(slope_max: float, sigma: float, t_m: float) -> float:
    """eta = sigma sqrt(t_m) / |dS/dB|_max"""
    if slope_max == 0:
        raise ValueError("maximum slope must be non-zero")
    return sigma * np.sqrt(t_m) / abs(slope_max)


def ramsey_slope_max(gamma: float, tau: float, contrast: float = 1.0) -> float:
    """Steepest |dS/dB| of S(B) = C cos(gamma B tau)"""
    return contrast * gamma * tau


def ramsey_ml_estimate(counts0: int, shots: int, gamma: float, tau: float, contrast: float = 1.0, phase_ref: float = 0.0) -> float:
    """Maximum-likelihood field for p(0) = (1 + C cos(gamma B tau + phase_ref)) / 2

    Valid on the branch where gamma B tau + phase_ref lies in [0, pi].
    """
    ratio = np.clip((2.0 * counts0 / shots - 1.0) / contrast, -1.0, 1.0)
    return float((np.arccos(ratio) - phase_ref) / (gamma * tau))


def rabi_populations(omega: float, times: Sequence[float]) -> np.ndarray:
    """Excited-state population of a resonant qubit at uniformly spaced times starting at 0"""
    times = np.asarray(times, dtype=float)
    n_slices = len(times) - 1
    if n_slices < 1 or times[0] != 0.0:
        raise ValueError("times must start at 0 and contain at least two points")
    system = rwa_qubit_hamiltonian(0.0, omega)
    pulses = PulseSet.constant(times[-1], n_slices, system.nominal_amplitudes)
    trajectory = propagate(system, pulses, [1.0, 0.0])
    return trajectory.populations()[:, 1]


def fit_rabi_frequency(times: Sequence[float], populations: Sequence[float], guess: float) -> float:
    """Least-squares Rabi frequency of P(t) = sin^2(Omega t / 2)"""
    popt, _ = curve_fit(
        lambda t, omega: np.sin(omega * t / 2) ** 2,
        np.asarray(times, dtype=float),
        np.asarray(populations, dtype=float),
        p0=[guess],
        xtol=1e-14,
        ftol=1e-14,
    )
    return float(popt[0])


# ---------------------------------------------------------------------------
# Fisher-optimal timing
# ---------------------------------------------------------------------------

def sequence_measurement_model(
    seq: SensingSequence,
    signal_shape: FieldSignal,
    gamma: float = GAMMA_NV,
    contrast: float = 1.0,
    envelope: Optional[DecoherenceEnvelope] = None,
    phase_ref: float = np.pi / 2,
) -> MeasurementModel:
    """Two-outcome readout of the signal amplitude theta (field = theta * shape)"""
    response = dd_phase(seq, signal_shape, gamma)
    weight = envelope.weight(seq.total_time, seq.is_ramsey_class) if envelope else 1.0

    def probabilities(theta):
        p0 = 0.5 * (1.0 + contrast * weight * np.cos(theta * response + phase_ref))
        return (p0, 1.0 - p0)

    return MeasurementModel(probabilities, seq.name)


@dataclass
class TimingTemplate:
    """Free parameters of a DD timing search

    kind "cpmg_spacing": x = (spacing, alpha) for n_pulses equally spaced pi pulses.
    kind "free_times": x = (t_1, ..., t_n, alpha) inside a fixed total_time.
    alpha is the phase of the signal relative to the sequence start.
    """

    kind: str
    n_pulses: int
    initial: Sequence[float]
    total_time: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("cpmg_spacing", "free_times"):
            raise ValueError(f"Unknown timing template {self.kind!r}")
        expected = 2 if self.kind == "cpmg_spacing" else self.n_pulses + 1
        if len(self.initial) != expected:
            raise ValueError(f"{self.kind} template needs {expected} initial values")
        if expected > MAX_TIMING_PARAMETERS:
            raise ValueError(f"at most {MAX_TIMING_PARAMETERS} free timing parameters are supported")
        if self.kind == "free_times" and not (self.total_time and self.total_time > 0):
            raise ValueError("free_times template needs a positive total_time")

    def sequence(self, x: np.ndarray) -> SensingSequence:
        if self.kind == "cpmg_spacing":
            spacing = float(x[0])
            if spacing <= 0:
                raise ValueError("spacing must be positive")
            return cpmg_sequence(self.n_pulses, self.n_pulses * spacing)
        return sequence_from_pulses(x[:-1], self.total_time, name="dd-free")


def optimize_dd_timing(
    signal_family: Callable[[float], FieldSignal],
    template: TimingTemplate,
    theta0: float,
    n_measurements: int = 1,
    gamma: float = GAMMA_NV,
    contrast: float = 1.0,
    envelope: Optional[DecoherenceEnvelope] = None,
    max_evals: int = 1000,
    initial_step=0.1,
) -> OptimizationReport:
    """Minimize j_fisher over pulse timing and signal phase with Nelder-Mead

    Args:
        signal_family: alpha -> unit-amplitude field shape
        template: Which timing parameters are free, and where to start
        theta0: Signal amplitude at which the Fisher information is evaluated
        initial_step: Scalar or per-parameter edge of the initial simplex
    """

    def objective(x):
        try:
            seq = template.sequence(x)
        except ValueError:
            return FISHER_SENTINEL
        model = sequence_measurement_model(seq, signal_family(float(x[-1])), gamma, contrast, envelope)
        return j_fisher(model, theta0, n_measurements)

    x0 = np.asarray(template.initial, dtype=float)
    logger.info(f"🚀 DD timing search ({template.kind}, {len(x0)} parameters)")
    result = nelder_mead(objective, x0, max_evals=max_evals, initial_step=initial_step, xatol=np.inf, fatol=1e-10, relative_fatol=True)

    best = template.sequence(result.x)
    logger.success(f"✅ DD timing search finished: j_fisher={result.fun:.3e} ({result.stop_reason})")
    return OptimizationReport(
        method="dd-timing",
        trace=result.trace,
        final_pulses=PulseSet(best.total_time, 1, np.zeros((0, 1))),
        final_cost=result.fun,
        stop_reason=result.stop_reason,
        iterations=1,
        evaluations=result.evaluations,
        details={
            "parameters": [float(v) for v in result.x],
            "pulse_times": [float(t) for t in best.flip_times],
            "total_time": float(best.total_time),
        },
    )
