"""
GRAPE: gradient ascent pulse engineering on piecewise-constant slices

Forward states and backward (adjoint) states give the derivative of the
terminal cost with respect to every slice amplitude. The slice derivative
dU/du is exact: with H = V diag(lambda) V^dagger,

    dU/du = V (Phi o (V^dagger H_c V)) V^dagger,
    Phi_ab = -i dt exp(-i (l_a + l_b) dt / 2) sinc((l_a - l_b) dt / 2),

which equals the divided difference of exp(-i l dt) and reduces to
-i dt exp(-i l_a dt) for degenerate eigenvalues.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from loguru import logger
from scipy.optimize import minimize

from optimizers.costs import (
    ControlMapping,
    CostSpec,
    map_controls,
    map_members,
    running_cost,
    total_cost,
)
from optimizers.report import OptimizationReport
from physics.propagate import PulseSet, slice_eigensystems
from physics.spinsys import Hamiltonian
from utils.errors import NumericError, UnsupportedCombinationError

FD_CHECK_STEP = 1e-6
SHRINK = 0.5
ARMIJO = 1e-4
GROWTH = 2.0
MAX_BACKTRACKS = 40


@dataclass
class GradientReport:
    grad: np.ndarray
    cost: float
    fd_check: Optional[float] = None


@dataclass
class GrapeOptions:
    max_iters: int = 200
    step: float = 1.0
    tol_cost: float = 1e-10
    tol_grad: float = 1e-9
    update: str = "descent"
    mapping: Optional[ControlMapping] = None
    shrink: float = SHRINK
    armijo: float = ARMIJO
    growth: float = GROWTH

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.step <= 0 or self.tol_cost <= 0 or self.tol_grad <= 0:
            raise ValueError("step and tolerances must be positive")
        if self.update not in ("descent", "lbfgs"):
            raise ValueError(f"Unknown update {self.update!r}; use descent or lbfgs")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")


def _phi_matrix(energies: np.ndarray, dt: float) -> np.ndarray:
    mean = (energies[:, None] + energies[None, :]) / 2
    half_gap = (energies[:, None] - energies[None, :]) * dt / 2
    return -1j * dt * np.exp(-1j * mean * dt) * np.sinc(half_gap / np.pi)


def slice_derivatives(eig, controls, dt: float) -> List[np.ndarray]:
    """Exact dU/du for each control of one slice"""
    phi = _phi_matrix(eig.energies, dt)
    v = eig.vectors
    return [v @ (phi * (v.conj().T @ c @ v)) @ v.conj().T for c in controls]


def _terminal_gradient(system: Hamiltonian, pulses: PulseSet, terminal):
    """(cost, d cost / d u) for a state or gate terminal on one system"""
    eigs = slice_eigensystems(system, pulses)
    n = pulses.n_slices
    dim = system.dim
    grad = np.zeros((system.n_controls, n))

    if terminal.kind == "state":
        forward = [terminal.psi0]
        for eig in eigs:
            forward.append(eig.unitary @ forward[-1])
        overlap = np.vdot(terminal.target, forward[-1])
        adjoint = terminal.target.astype(complex)
        for k in range(n - 1, -1, -1):
            for i, du in enumerate(slice_derivatives(eigs[k], system.controls, pulses.dt)):
                d_overlap = np.vdot(adjoint, du @ forward[k])
                if terminal.phase_sensitive:
                    grad[i, k] = -d_overlap.real
                else:
                    grad[i, k] = -2.0 * (np.conj(overlap) * d_overlap).real
            adjoint = eigs[k].unitary.conj().T @ adjoint
        cost = 1.0 - overlap.real if terminal.phase_sensitive else 1.0 - abs(overlap) ** 2
        return float(cost), grad

    # gate: c = Tr(target^dagger B_k dU_k A_{k-1}) = Tr(M_k dU_k), M_k = A_{k-1} target^dagger B_k
    forward = [np.eye(dim, dtype=complex)]
    for eig in eigs:
        forward.append(eig.unitary @ forward[-1])
    trace = np.trace(terminal.target.conj().T @ forward[-1])
    backward = np.eye(dim, dtype=complex)
    target_dag = terminal.target.conj().T
    for k in range(n - 1, -1, -1):
        m = forward[k] @ target_dag @ backward
        for i, du in enumerate(slice_derivatives(eigs[k], system.controls, pulses.dt)):
            d_trace = np.sum(m.T * du)
            if terminal.phase_sensitive:
                grad[i, k] = -d_trace.real / dim
            else:
                grad[i, k] = -2.0 * (np.conj(trace) * d_trace).real / dim**2
        backward = backward @ eigs[k].unitary
    cost = 1.0 - trace.real / dim if terminal.phase_sensitive else 1.0 - abs(trace) ** 2 / dim**2
    return float(cost), grad


def _physical_gradient(system: Hamiltonian, physical: PulseSet, spec: CostSpec):
    if spec.terminal.kind == "fisher":
        raise UnsupportedCombinationError(
            "gradient unavailable for the Fisher terminal cost; use crab or dcrab"
        )
    members = spec.members(system)
    results = map_members(
        lambda m: _terminal_gradient(m.system, physical, spec.terminal), members, spec.max_workers
    )
    cost = 0.0
    grad = np.zeros_like(physical.amplitudes)
    for member, (member_cost, member_grad) in zip(members, results):
        cost += member.weight * member_cost
        grad = grad + member.weight * member_grad
    for term in spec.running:
        grad = grad + term.gradient(physical)
    return cost + running_cost(physical, spec), grad


def _cost(system: Hamiltonian, raw: PulseSet, spec: CostSpec, mapping: Optional[ControlMapping]) -> float:
    return total_cost(system, map_controls(raw, mapping), spec)


def finite_difference_gradient(
    system: Hamiltonian,
    pulses: PulseSet,
    spec: CostSpec,
    mapping: Optional[ControlMapping] = None,
    h: float = FD_CHECK_STEP,
) -> np.ndarray:
    """Central-difference gradient of the full cost with respect to raw amplitudes"""
    base = np.array(pulses.amplitudes)
    grad = np.zeros_like(base)
    for index in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[index] += h
        minus[index] -= h
        grad[index] = (
            _cost(system, pulses.with_amplitudes(plus), spec, mapping)
            - _cost(system, pulses.with_amplitudes(minus), spec, mapping)
        ) / (2 * h)
    return grad


def grape_gradient(
    system: Hamiltonian,
    pulses: PulseSet,
    spec: CostSpec,
    mapping: Optional[ControlMapping] = None,
    fd_check: bool = False,
) -> GradientReport:
    """Cost and exact gradient with respect to the (raw) slice amplitudes

    Args:
        system: Drift/control Hamiltonian (nominal member when no ensemble is set)
        pulses: Raw amplitudes; the mapping, if any, turns them into physical ones
        spec: State or gate terminal, running costs, optional ensemble
        mapping: Optional control-space mapping, handled by the chain rule
        fd_check: Also compute the max deviation from central finite differences,
            relative to the largest finite-difference component

    Returns:
        GradientReport with grad shaped like pulses.amplitudes
    """
    physical = map_controls(pulses, mapping)
    cost, grad = _physical_gradient(system, physical, spec)
    if mapping is not None:
        grad = grad * mapping.derivative(pulses)

    deviation = None
    if fd_check:
        reference = finite_difference_gradient(system, pulses, spec, mapping)
        scale = max(float(np.max(np.abs(reference))), 1e-12)
        deviation = float(np.max(np.abs(grad - reference))) / scale
        logger.debug(f"Gradient check: max relative deviation {deviation:.3e}")
    return GradientReport(grad=grad, cost=float(cost), fd_check=deviation)


class _TargetReached(Exception):
    pass


def _evaluate(system, raw, spec, mapping, iteration) -> GradientReport:
    try:
        report = grape_gradient(system, raw, spec, mapping)
    except (UnsupportedCombinationError, ValueError):
        raise
    except Exception as e:
        raise NumericError(f"GRAPE cost evaluation failed: {e}", index=iteration) from e
    if not np.isfinite(report.cost) or not np.all(np.isfinite(report.grad)):
        raise NumericError("GRAPE produced a non-finite cost or gradient", index=iteration)
    return report


def _descent(system, init, spec, opts):
    raw = init
    current = _evaluate(system, raw, spec, opts.mapping, 0)
    trace = [current.cost]
    step = opts.step
    evaluations = 1
    iterations = 0
    stop_reason = "max_iters"

    while True:
        if current.cost <= opts.tol_cost:
            stop_reason = "tol_cost"
            break
        if float(np.max(np.abs(current.grad), initial=0.0)) <= opts.tol_grad:
            stop_reason = "tol_grad"
            break
        if iterations >= opts.max_iters:
            break

        iterations += 1
        slope = float(np.sum(current.grad**2))
        accepted = None
        for _ in range(MAX_BACKTRACKS):
            trial = raw.with_amplitudes(raw.amplitudes - step * current.grad)
            trial_cost = _cost_checked(system, trial, spec, opts.mapping, iterations)
            evaluations += 1
            if trial_cost <= current.cost - opts.armijo * step * slope:
                accepted = trial
                break
            step *= opts.shrink
        if accepted is None:
            logger.warning(f"Line search failed at iteration {iterations} (step {step:.3e})")
            stop_reason = "line_search_failed"
            break

        raw = accepted
        current = _evaluate(system, raw, spec, opts.mapping, iterations)
        evaluations += 1
        trace.append(current.cost)
        logger.debug(f"GRAPE iter {iterations}: cost={current.cost:.3e} step={step:.3e}")
        step *= opts.growth

    return raw, current.cost, trace, stop_reason, iterations, evaluations


def _cost_checked(system, raw, spec, mapping, iteration) -> float:
    try:
        value = _cost(system, raw, spec, mapping)
    except ValueError:
        raise
    except Exception as e:
        raise NumericError(f"GRAPE cost evaluation failed: {e}", index=iteration) from e
    if not np.isfinite(value):
        raise NumericError("GRAPE produced a non-finite cost", index=iteration)
    return value


def _lbfgs(system, init, spec, opts):
    shape = init.amplitudes.shape
    state = {"evaluations": 0, "last": None, "iterations": 0}
    trace: List[float] = []

    def objective(x):
        raw = init.with_amplitudes(x.reshape(shape))
        report = _evaluate(system, raw, spec, opts.mapping, state["iterations"])
        state["evaluations"] += 1
        state["last"] = (x.copy(), report.cost)
        return report.cost, report.grad.ravel()

    def callback(xk):
        state["iterations"] += 1
        x_last, cost = state["last"]
        if not np.array_equal(x_last, xk):
            cost, _ = objective(xk)
        trace.append(cost)
        logger.debug(f"GRAPE L-BFGS iter {state['iterations']}: cost={cost:.3e}")
        if cost <= opts.tol_cost:
            raise _TargetReached(xk.copy())

    x0 = np.array(init.amplitudes, dtype=float).ravel()
    initial_cost, _ = objective(x0)
    trace.append(initial_cost)
    if initial_cost <= opts.tol_cost:
        return init, initial_cost, trace, "tol_cost", 0, state["evaluations"]

    try:
        result = minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            callback=callback,
            options={"maxiter": opts.max_iters, "gtol": opts.tol_grad, "ftol": 0.0},
        )
    except _TargetReached as reached:
        x_best = reached.args[0]
        return (
            init.with_amplitudes(x_best.reshape(shape)),
            trace[-1],
            trace,
            "tol_cost",
            state["iterations"],
            state["evaluations"],
        )

    if result.nit >= opts.max_iters:
        stop_reason = "max_iters"
    elif result.success:
        stop_reason = "tol_grad"
    else:
        logger.warning(f"L-BFGS-B stopped: {result.message}")
        stop_reason = "line_search_failed"
    final = init.with_amplitudes(result.x.reshape(shape))
    return final, float(result.fun), trace, stop_reason, state["iterations"], state["evaluations"]


def grape_optimize(system: Hamiltonian, init: PulseSet, spec: CostSpec, opts: Optional[GrapeOptions] = None) -> OptimizationReport:
    """Optimize all slices concurrently from the initial pulse set"""
    opts = opts or GrapeOptions()
    if spec.terminal.kind == "fisher":
        raise UnsupportedCombinationError(
            "gradient unavailable for the Fisher terminal cost; use crab or dcrab"
        )
    logger.info(f"🚀 GRAPE ({opts.update}): {init.n_controls} controls x {init.n_slices} slices")

    runner = _descent if opts.update == "descent" else _lbfgs
    raw, cost, trace, stop_reason, iterations, evaluations = runner(system, init, spec, opts)

    final = map_controls(raw, opts.mapping)
    if stop_reason == "line_search_failed":
        logger.warning(f"⚠️ GRAPE stopped without converging: cost={cost:.3e} after {iterations} iterations ({stop_reason})")
    else:
        logger.success(f"✅ GRAPE finished: cost={cost:.3e} after {iterations} iterations ({stop_reason})")
    return OptimizationReport(
        method=f"grape-{opts.update}",
        trace=trace,
        final_pulses=final,
        final_cost=cost,
        stop_reason=stop_reason,
        iterations=iterations,
        evaluations=evaluations,
    )
