"""
CRAB and dCRAB: gradient-free optimization in a randomized chopped basis

Each control is expanded as sum_l A_l sin(w_l t) + B_l cos(w_l t) with
w_l = (w_max / N_be) (l + r_l - 1/2), r_l uniform in (-1/2, 1/2). The
coefficients are searched with Nelder-Mead. dCRAB repeats this in
superiterations with a fresh basis each time, freezing what earlier
superiterations contributed.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from loguru import logger
from scipy.optimize import minimize

from optimizers.costs import ControlMapping, CostSpec, total_cost
from optimizers.report import OptimizationReport
from physics.propagate import PulseSet
from physics.spinsys import Hamiltonian
from src.config import DEFAULT_SEED
from utils.errors import NumericError

SEED_MIX = 0x9E3779B97F4A7C15
SEED_MASK = 2**63 - 1
WORST_VALUE = 1e18
OFFSET_MARGIN = 1e-12


# ---------------------------------------------------------------------------
# Basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CrabBasis:
    n_be: int
    omegas: np.ndarray
    seed: int
    omega_max: float


def default_omega_max(n_be: int, t_final: float) -> float:
    return 2 * np.pi * n_be / t_final


def sample_basis(n_be: int, omega_max: float, seed: int = DEFAULT_SEED, offsets: Optional[Sequence[float]] = None) -> CrabBasis:
    """Draw one frequency per sub-band of (0, omega_max)

    Args:
        n_be: Number of basis elements
        omega_max: Maximum admissible frequency (rad/us)
        seed: Seed for the PCG64 generator
        offsets: Fixed r_l values instead of random ones (testing)
    """
    if n_be < 1:
        raise ValueError(f"N_be must be at least 1, got {n_be}")
    if not omega_max > 0:
        raise ValueError(f"omega_max must be positive, got {omega_max}")
    if offsets is None:
        rng = np.random.Generator(np.random.PCG64(seed))
        offsets = rng.uniform(-0.5, 0.5, size=n_be)
        offsets = np.clip(offsets, -0.5 + OFFSET_MARGIN, 0.5 - OFFSET_MARGIN)
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape != (n_be,):
        raise ValueError(f"expected {n_be} offsets, got shape {offsets.shape}")
    ells = np.arange(1, n_be + 1)
    omegas = omega_max / n_be * (ells + offsets - 0.5)
    return CrabBasis(n_be=n_be, omegas=omegas, seed=int(seed), omega_max=float(omega_max))


def superiteration_seed(seed: int, d: int) -> int:
    """Seed of superiteration d (1-based); the first one reuses the master seed"""
    return int((seed ^ ((d - 1) * SEED_MIX)) & SEED_MASK)


@dataclass(frozen=True, eq=False)
class CrabParams:
    """Coefficients, shape (n_controls, N_be): A multiplies sin, B multiplies cos"""

    a: np.ndarray
    b: np.ndarray

    @classmethod
    def zeros(cls, n_controls: int, n_be: int) -> "CrabParams":
        return cls(np.zeros((n_controls, n_be)), np.zeros((n_controls, n_be)))

    @classmethod
    def from_vector(cls, x: np.ndarray, n_controls: int, n_be: int) -> "CrabParams":
        x = np.asarray(x, dtype=float).reshape(n_controls, 2, n_be)
        return cls(x[:, 0, :], x[:, 1, :])

    def to_vector(self) -> np.ndarray:
        return np.stack([self.a, self.b], axis=1).ravel()


@dataclass(frozen=True)
class TimeGrid:
    t_final: float
    n_slices: int

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_slices) + 0.5) * self.t_final / self.n_slices


def expand_raw(params: CrabParams, basis: CrabBasis, grid: TimeGrid) -> np.ndarray:
    t = grid.midpoints
    phases = np.outer(basis.omegas, t)
    return params.a @ np.sin(phases) + params.b @ np.cos(phases)


def expand_pulse(
    params: CrabParams,
    basis: CrabBasis,
    grid: TimeGrid,
    mapping: Optional[ControlMapping] = None,
    base: Optional[np.ndarray] = None,
) -> PulseSet:
    """Sample the expansion at slice midpoints, add a frozen base and map"""
    raw = expand_raw(params, basis, grid)
    if base is not None:
        raw = raw + base
    pulses = PulseSet(grid.t_final, grid.n_slices, raw)
    return mapping.apply(pulses) if mapping is not None else pulses


# ---------------------------------------------------------------------------
# Nelder-Mead
# ---------------------------------------------------------------------------

@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    trace: List[float]
    evaluations: int
    stop_reason: str


class _BudgetExhausted(Exception):
    pass


def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0: Sequence[float],
    max_evals: int = 1000,
    initial_step: float = 0.1,
    xatol: float = 1e-8,
    fatol: float = 1e-12,
    relative_fatol: bool = False,
) -> NelderMeadResult:
    """Simplex search with a strict evaluation budget and a best-so-far trace

    The initial simplex is axis-aligned with edge `initial_step` (scalar or
    one value per coordinate) around x0.
    The search stops once both the simplex diameter is below xatol and the
    f-spread is below fatol (pass xatol=inf to stop on f-spread alone), or when
    the budget runs out. With relative_fatol the threshold is
    fatol * (1 + |f(x0)|). Non-finite objective values count as WORST_VALUE.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.shape[0]
    state = {"count": 0, "best_x": x0.copy(), "best_f": np.inf}
    trace: List[float] = []

    def wrapped(x):
        if state["count"] >= max_evals:
            raise _BudgetExhausted()
        state["count"] += 1
        value = float(f(x))
        if not np.isfinite(value):
            logger.warning(f"Objective returned {value} at evaluation {state['count']}; using worst value")
            value = WORST_VALUE
        if value < state["best_f"]:
            state["best_f"] = value
            state["best_x"] = np.array(x, dtype=float)
        trace.append(state["best_f"])
        return value

    if max_evals <= 0:
        value = float(f(x0))
        return NelderMeadResult(x0, value if np.isfinite(value) else WORST_VALUE, [value], 1, "budget")
    if max_evals < n + 1:
        raise ValueError(f"budget {max_evals} cannot cover the initial simplex of {n + 1} points")

    f0 = wrapped(x0)
    cached = {"x": x0.copy(), "f": f0}

    def objective(x):
        if np.array_equal(x, cached["x"]):
            return cached["f"]
        return wrapped(x)

    threshold = fatol * (1.0 + abs(f0)) if relative_fatol else fatol
    steps = np.broadcast_to(np.asarray(initial_step, dtype=float), (n,))
    simplex = np.vstack([x0, x0 + np.diag(steps)])
    try:
        result = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "xatol": xatol,
                "fatol": threshold,
                "maxfev": max_evals + n + 2,
                "maxiter": max(max_evals, 1) * 2,
            },
        )
        stop_reason = "converged" if result.status == 0 else "budget"
    except _BudgetExhausted:
        stop_reason = "budget"

    return NelderMeadResult(state["best_x"], float(state["best_f"]), trace, state["count"], stop_reason)


# ---------------------------------------------------------------------------
# CRAB / dCRAB
# ---------------------------------------------------------------------------

@dataclass
class CrabOptions:
    max_evals: int = 2000
    amplitude_scale: float = 1.0
    initial_step: float = 0.1
    fatol: float = 1e-10
    xatol: float = np.inf
    mapping: Optional[ControlMapping] = None
    base: Optional[np.ndarray] = None
    initial: Optional[CrabParams] = None


@dataclass
class DcrabOptions:
    n_si: int = 5
    n_be: int = 5
    max_evals: int = 2000
    seed: int = DEFAULT_SEED
    omega_max: Optional[float] = None
    amplitude_scale: float = 1.0
    initial_step: float = 0.1
    fatol: float = 1e-10
    mapping: Optional[ControlMapping] = None
    base: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n_si < 1:
            raise ValueError("N_SI must be at least 1")
        if self.n_be < 1:
            raise ValueError("N_be must be at least 1")


def _crab_search(system: Hamiltonian, grid: TimeGrid, spec: CostSpec, basis: CrabBasis, opts: CrabOptions):
    n_controls = system.n_controls
    offset = opts.base if opts.base is not None else np.zeros((n_controls, grid.n_slices))
    start = opts.initial or CrabParams.zeros(n_controls, basis.n_be)
    counter = {"n": 0}

    def objective(x):
        counter["n"] += 1
        params = CrabParams.from_vector(x, n_controls, basis.n_be)
        try:
            pulses = expand_pulse(params, basis, grid, opts.mapping, offset)
            return total_cost(system, pulses, spec)
        except Exception as e:
            raise NumericError(f"CRAB cost evaluation failed: {e}", index=counter["n"]) from e

    result = nelder_mead(
        objective,
        start.to_vector(),
        max_evals=opts.max_evals,
        initial_step=opts.initial_step * opts.amplitude_scale,
        xatol=opts.xatol,
        fatol=opts.fatol,
        relative_fatol=True,
    )
    params = CrabParams.from_vector(result.x, n_controls, basis.n_be)
    return params, offset, result


def crab_optimize(system: Hamiltonian, grid: TimeGrid, spec: CostSpec, basis: CrabBasis, opts: Optional[CrabOptions] = None) -> OptimizationReport:
    """Optimize 2 N_be coefficients per control in a single fixed basis"""
    opts = opts or CrabOptions()
    logger.info(f"🚀 CRAB: {system.n_controls} controls x {basis.n_be} basis elements, budget {opts.max_evals}")
    params, offset, result = _crab_search(system, grid, spec, basis, opts)
    final = expand_pulse(params, basis, grid, opts.mapping, offset)
    logger.success(f"✅ CRAB finished: cost={result.fun:.3e} after {result.evaluations} evaluations")
    return OptimizationReport(
        method="crab",
        trace=result.trace,
        final_pulses=final,
        final_cost=result.fun,
        stop_reason=result.stop_reason,
        iterations=1,
        evaluations=result.evaluations,
        seeds=[basis.seed],
        details={
            "omegas": [[float(w) for w in basis.omegas]],
            "coefficients": [params.to_vector().tolist()],
        },
    )


def dcrab_optimize(system: Hamiltonian, grid: TimeGrid, spec: CostSpec, opts: Optional[DcrabOptions] = None) -> OptimizationReport:
    """Superiterations over freshly sampled bases with frozen earlier contributions"""
    opts = opts or DcrabOptions()
    omega_max = opts.omega_max or default_omega_max(opts.n_be, grid.t_final)
    accumulated = (
        np.array(opts.base, dtype=float)
        if opts.base is not None
        else np.zeros((system.n_controls, grid.n_slices))
    )
    logger.info(f"🚀 dCRAB: {opts.n_si} superiterations x {opts.n_be} basis elements")

    trace: List[float] = []
    seeds: List[int] = []
    omegas: List[List[float]] = []
    coefficients: List[List[float]] = []
    boundaries: List[int] = []
    stop_reason = "superiterations"
    evaluations = 0
    best = np.inf

    for d in range(1, opts.n_si + 1):
        basis = sample_basis(opts.n_be, omega_max, superiteration_seed(opts.seed, d))
        inner = CrabOptions(
            max_evals=opts.max_evals,
            amplitude_scale=opts.amplitude_scale,
            initial_step=opts.initial_step,
            fatol=opts.fatol,
            mapping=opts.mapping,
            base=accumulated,
        )
        params, _, result = _crab_search(system, grid, spec, basis, inner)
        accumulated = accumulated + expand_raw(params, basis, grid)
        trace.extend(result.trace)
        evaluations += result.evaluations
        seeds.append(basis.seed)
        omegas.append([float(w) for w in basis.omegas])
        coefficients.append(params.to_vector().tolist())
        boundaries.append(len(trace))
        best = result.fun
        logger.info(f"   superiteration {d}: cost={best:.3e} ({result.evaluations} evaluations, {result.stop_reason})")
        stop_reason = result.stop_reason if opts.n_si == 1 else "superiterations"

    final = PulseSet(grid.t_final, grid.n_slices, accumulated)
    if opts.mapping is not None:
        final = opts.mapping.apply(final)
    logger.success(f"✅ dCRAB finished: cost={best:.3e} after {evaluations} evaluations")
    return OptimizationReport(
        method="dcrab",
        trace=trace,
        final_pulses=final,
        final_cost=float(best),
        stop_reason=stop_reason,
        iterations=opts.n_si,
        evaluations=evaluations,
        seeds=seeds,
        details={"omegas": omegas, "coefficients": coefficients, "superiteration_ends": boundaries},
    )
