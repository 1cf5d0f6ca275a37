#!/usr/bin/env python3
"""
Batch front end: simulate, optimize, sense and limits runs from JSON configurations
"""
import argparse
import os
import sys
from typing import Callable, Dict, List, Optional

import numpy as np
from loguru import logger

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from optimizers.costs import (
    ControlMapping,
    CostSpec,
    FisherTerminal,
    GateTerminal,
    RunningCost,
    StateTerminal,
    amplitude_ensemble,
    detuning_ensemble,
    hadamard_target,
    rotation_target,
    sine_envelope,
)
from optimizers.crab import CrabOptions, DcrabOptions, TimeGrid, crab_optimize, dcrab_optimize, default_omega_max, sample_basis
from optimizers.grape import GrapeOptions, grape_optimize
from physics.limits import controllability_rank, minimal_time_check, qsl_bhattacharyya, qsl_for_pulses
from physics.propagate import PulseSet, propagate
from physics.sensing import (
    DecoherenceEnvelope,
    FieldSignal,
    cpmg_sequence,
    dd_phase,
    echo_sequence,
    filter_function,
    phase_sweep,
    population_sweep,
    ramsey_sequence,
    simulate_readout,
    xy_sequence,
)
from physics.spinsys import (
    DELTA_PAR,
    DELTA_PERP,
    GAMMA_NV,
    ZERO_FIELD_SPLITTING,
    Hamiltonian,
    NucleusSpec,
    NVParameters,
    lab_frame_qubit_hamiltonian,
    nv_ground_hamiltonian,
    rwa_qubit_hamiltonian,
    spin_operators,
)
from src.config import DEFAULT_SEED, MAX_WORKERS, PRESETS_FILE, RESULTS_DIR
from utils.errors import ConfigError, NumericError, NvQocError
from utils.logger import setup_logging
from utils.problem_config import (
    CrabConfig,
    DcrabConfig,
    PulseConfig,
    ProblemConfig,
    SensingConfig,
    config_hash,
    get_preset,
    load_presets,
    load_problem_config,
    parse_problem_config,
)
from utils.run_tracker import RunTracker

COMMANDS = ("simulate", "optimize", "sense", "limits")

QUBIT_LABELS = {
    "0": [1.0, 0.0],
    "1": [0.0, 1.0],
    "+": [1 / np.sqrt(2), 1 / np.sqrt(2)],
    "-": [1 / np.sqrt(2), -1 / np.sqrt(2)],
    "+i": [1 / np.sqrt(2), 1j / np.sqrt(2)],
    "-i": [1 / np.sqrt(2), -1j / np.sqrt(2)],
}


# ---------------------------------------------------------------------------
# Builders: config blocks -> library objects
# ---------------------------------------------------------------------------

def _require(block, name: str):
    if block is None:
        raise ConfigError("required block is missing for this command", field=name)
    return block


def build_state(value, dim: int, path: str) -> np.ndarray:
    """A basis label ("0", "1", "+", "-", "+i", "-i" for qubits, "k" for level k) or explicit amplitudes"""
    if isinstance(value, str):
        if dim == 2 and value in QUBIT_LABELS:
            return np.array(QUBIT_LABELS[value], dtype=complex)
        if value.isdigit() and int(value) < dim:
            psi = np.zeros(dim, dtype=complex)
            psi[int(value)] = 1.0
            return psi
        raise ConfigError(f"unknown state label {value!r} for dimension {dim}", field=path)
    if any(isinstance(v, list) and len(v) != 2 for v in value):
        raise ConfigError("complex amplitudes are written as [re, im]", field=path)
    amplitudes = [complex(v[0], v[1]) if isinstance(v, list) else complex(v) for v in value]
    psi = np.array(amplitudes, dtype=complex)
    if psi.shape != (dim,):
        raise ConfigError(f"state has {psi.shape[0]} amplitudes, system dimension is {dim}", field=path)
    return psi


def build_system(config: ProblemConfig) -> Hamiltonian:
    block = config.system
    if block.kind == "rwa_qubit":
        return rwa_qubit_hamiltonian(block.delta, block.omega, block.phi)
    if block.kind == "lab_qubit":
        return lab_frame_qubit_hamiltonian(block.omega_q)
    params = NVParameters(
        d=block.d if block.d is not None else ZERO_FIELD_SPLITTING,
        e=block.e,
        gamma_nv=block.gamma_nv if block.gamma_nv is not None else GAMMA_NV,
        delta_par=block.delta_par if block.delta_par is not None else DELTA_PAR,
        delta_perp=block.delta_perp if block.delta_perp is not None else DELTA_PERP,
        b_field=tuple(block.b_field),
        e_field=tuple(block.e_field),
        nuclei=tuple(NucleusSpec(n.spin, n.n_axial, n.n_tran, n.gamma_n, n.quadrupole) for n in block.nuclei),
    )
    return nv_ground_hamiltonian(params)


def build_pulses(block: PulseConfig, system: Hamiltonian, seed: int) -> PulseSet:
    m = system.n_controls
    if block.init == "nominal":
        if system.nominal_amplitudes:
            return PulseSet.constant(block.t_final, block.n_slices, system.nominal_amplitudes)
        return PulseSet.zeros(block.t_final, block.n_slices, m)
    if block.init == "zeros":
        return PulseSet.zeros(block.t_final, block.n_slices, m)
    if block.init == "constant":
        if len(block.values) != m:
            raise ConfigError(f"needs one value per control ({m})", field="pulse.values")
        return PulseSet.constant(block.t_final, block.n_slices, block.values)
    rng = np.random.Generator(np.random.PCG64(seed))
    return PulseSet(block.t_final, block.n_slices, rng.uniform(-block.scale, block.scale, (m, block.n_slices)))


def build_cost_spec(config: ProblemConfig, system: Hamiltonian) -> CostSpec:
    cost = _require(config.cost, "cost")
    terminal_block = cost.terminal
    if terminal_block.kind == "state":
        terminal = StateTerminal(
            build_state(terminal_block.psi0, system.dim, "cost.terminal.psi0"),
            build_state(terminal_block.target, system.dim, "cost.terminal.target"),
            terminal_block.phase_sensitive,
        )
    elif terminal_block.kind == "gate":
        if terminal_block.gate == "hadamard":
            target = hadamard_target()
        else:
            target = rotation_target(terminal_block.angle, terminal_block.axis)
        if target.shape[0] != system.dim:
            raise ConfigError("gate targets are qubit gates; use a qubit system", field="cost.terminal.gate")
        terminal = GateTerminal(target, terminal_block.phase_sensitive)
    else:
        if system.dim != 2:
            raise ConfigError("the Fisher terminal is available for qubit systems", field="cost.terminal.kind")
        terminal = FisherTerminal(
            psi0=build_state(terminal_block.psi0, 2, "cost.terminal.psi0"),
            generator=spin_operators(0.5).sz,
            povm=(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])),
            theta0=terminal_block.theta0,
            n_measurements=terminal_block.n_measurements,
        )

    running = tuple(RunningCost(r.kind, r.weight, r.p_lim) for r in cost.running)

    ensemble = ()
    if cost.ensemble is not None:
        if cost.ensemble.kind == "detuning":
            ensemble = detuning_ensemble(system, cost.ensemble.offsets, weights=cost.ensemble.weights)
        else:
            ensemble = amplitude_ensemble(system, cost.ensemble.offsets, weights=cost.ensemble.weights)

    return CostSpec(terminal, running, ensemble, max_workers=MAX_WORKERS)


def build_mapping(config: ProblemConfig, system: Hamiltonian) -> Optional[ControlMapping]:
    block = config.optimizer.mapping
    if block is None:
        return None
    if block.mode == "shape":
        n_slices = config.pulse.n_slices
        return ControlMapping("shape", shape=np.tile(sine_envelope(n_slices), (system.n_controls, 1)))
    return ControlMapping(block.mode, u_max=block.u_max)


def build_signal(block: SensingConfig) -> FieldSignal:
    signal = block.signal
    if signal.kind == "dc":
        return FieldSignal.dc(signal.amplitude)
    return FieldSignal.ac(signal.amplitude, signal.omega, signal.phase)


def build_sequence(block: SensingConfig):
    seq = block.sequence
    if seq.kind == "ramsey":
        return ramsey_sequence(seq.tau)
    if seq.kind == "echo":
        return echo_sequence(seq.tau)
    if seq.kind == "cpmg":
        return cpmg_sequence(seq.n_pulses, seq.n_pulses * seq.tau)
    return xy_sequence(seq.kind, seq.n_blocks, seq.tau)


def build_envelope(block: SensingConfig) -> Optional[DecoherenceEnvelope]:
    readout = block.readout
    if readout is None or (readout.t2_star is None and readout.t2 is None):
        return None
    return DecoherenceEnvelope(
        t2_star=readout.t2_star if readout.t2_star is not None else np.inf,
        t2=readout.t2 if readout.t2 is not None else np.inf,
        exponent=readout.exponent,
    )


def _seed(config: ProblemConfig) -> int:
    return config.seed if config.seed is not None else DEFAULT_SEED


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(config: ProblemConfig, tracker: RunTracker):
    """Propagate psi0 under the configured pulses; table of populations and amplitudes"""
    system = build_system(config)
    pulses = build_pulses(_require(config.pulse, "pulse"), system, _seed(config))
    psi0 = build_state(config.psi0 if config.psi0 is not None else "0", system.dim, "psi0")

    trajectory = propagate(system, pulses, psi0)
    states = trajectory.states
    if not np.all(np.isfinite(states)):
        raise NumericError("propagation produced non-finite amplitudes")

    dim = system.dim
    header = ["t"] + [f"P_{k}" for k in range(dim)]
    for k in range(dim):
        header += [f"re_{k}", f"im_{k}"]
    columns = [trajectory.times, *trajectory.populations().T]
    for k in range(dim):
        columns += [states[:, k].real, states[:, k].imag]
    tracker.add_table("trajectory.tsv", header, np.column_stack(columns))
    tracker.record("simulation", {"final_populations": [float(p) for p in trajectory.populations()[-1]]})
    logger.info(f"📈 Simulated {pulses.n_slices} slices, final populations {trajectory.populations()[-1]}")


def cmd_optimize(config: ProblemConfig, tracker: RunTracker):
    """Dispatch on the optimizer block and record the optimization report"""
    optimizer = _require(config.optimizer, "optimizer")
    system = build_system(config)
    pulse_block = _require(config.pulse, "pulse")
    seed = _seed(config)
    init = build_pulses(pulse_block, system, seed)
    spec = build_cost_spec(config, system)
    mapping = build_mapping(config, system)
    grid = TimeGrid(pulse_block.t_final, pulse_block.n_slices)

    if optimizer.method == "grape":
        block = optimizer.grape
        opts = GrapeOptions(mapping=mapping) if block is None else GrapeOptions(
            max_iters=block.max_iters,
            step=block.step,
            tol_cost=block.tol_cost,
            tol_grad=block.tol_grad,
            update=block.update,
            mapping=mapping,
        )
        report = grape_optimize(system, init, spec, opts)
    elif optimizer.method == "crab":
        block = optimizer.crab or CrabConfig()
        omega_max = block.omega_max or default_omega_max(block.n_be, grid.t_final)
        basis = sample_basis(block.n_be, omega_max, seed)
        opts = CrabOptions(
            max_evals=block.max_evals,
            amplitude_scale=block.amplitude_scale,
            initial_step=block.initial_step,
            fatol=block.fatol,
            mapping=mapping,
            base=init.amplitudes,
        )
        report = crab_optimize(system, grid, spec, basis, opts)
    else:
        block = optimizer.dcrab or DcrabConfig()
        opts = DcrabOptions(
            n_si=block.n_si,
            n_be=block.n_be,
            max_evals=block.max_evals,
            seed=seed,
            omega_max=block.omega_max,
            amplitude_scale=block.amplitude_scale,
            initial_step=block.initial_step,
            fatol=block.fatol,
            mapping=mapping,
            base=init.amplitudes,
        )
        report = dcrab_optimize(system, grid, spec, opts)

    tracker.record_optimization(report)

    terminal = spec.terminal
    if terminal.kind == "state":
        qsl = qsl_for_pulses(system, report.final_pulses, terminal.psi0, terminal.target)
        summary = qsl.to_dict()
        summary["respected"] = minimal_time_check(qsl, report.final_pulses.t_final)
        tracker.record("qsl", summary)


def cmd_sense(config: ProblemConfig, tracker: RunTracker):
    """Sequence phase and readout, tau sweeps and filter-function tables"""
    block = _require(config.sensing, "sensing")
    if block.sequence is None and block.sweep is None:
        raise ConfigError("needs a sequence or a sweep block", field="sensing")
    gamma = block.gamma if block.gamma is not None else GAMMA_NV
    signal = build_signal(block)
    envelope = build_envelope(block)
    contrast = block.readout.contrast if block.readout else 1.0

    if block.sequence is not None:
        seq = build_sequence(block)
        phase = dd_phase(seq, signal, gamma)
        tracker.record("sequence", {
            "name": seq.name,
            "total_time": float(seq.total_time),
            "flip_times": [float(t) for t in seq.flip_times],
            "phase": float(phase),
        })
        logger.info(f"🧲 {seq.name}: accumulated phase {phase:.6e} rad")

        if block.readout is not None:
            summary = simulate_readout(
                phase, contrast, envelope, seq.total_time, block.readout.shots, _seed(config), seq.is_ramsey_class
            )
            tracker.record("readout", {
                "shots": summary.shots,
                "counts0": summary.counts0,
                "p_true": summary.p_true,
                "p_hat": summary.p_hat,
                "stderr": summary.stderr,
            })

        if block.filter is not None:
            omegas = np.linspace(block.filter.start, block.filter.stop, block.filter.num)
            tracker.add_table("filter.tsv", ["omega", "weight"], np.column_stack([omegas, filter_function(seq, omegas)]))

    if block.sweep is not None:
        taus = np.linspace(block.sweep.taus.start, block.sweep.taus.stop, block.sweep.taus.num)
        phases = phase_sweep(block.sweep.kind, signal, taus, gamma)
        populations = population_sweep(block.sweep.kind, signal, taus, gamma, contrast, envelope)
        tracker.add_table("phase_sweep.tsv", ["tau", "phase"], np.column_stack([taus, phases]))
        tracker.add_table("population_sweep.tsv", ["tau", "p0"], np.column_stack([taus, populations]))


def cmd_limits(config: ProblemConfig, tracker: RunTracker):
    """Lie-rank controllability and the speed-limit bound of the configured system"""
    block = _require(config.limits, "limits")
    system = build_system(config)

    if block.controllability:
        report = controllability_rank(system.drift, system.controls)
        tracker.record("controllability", report.to_dict())
        logger.info(f"🔗 Lie algebra dimension {report.lie_dim}/{report.full_dim}")

    if block.qsl is not None:
        psi0 = build_state(block.qsl.psi0, system.dim, "limits.qsl.psi0")
        psit = build_state(block.qsl.psit, system.dim, "limits.qsl.psit")
        if block.qsl.from_pulses:
            pulses = build_pulses(_require(config.pulse, "pulse"), system, _seed(config))
            qsl = qsl_for_pulses(system, pulses, psi0, psit)
        else:
            qsl = qsl_bhattacharyya(system.matrix(), psi0, psit)
        tracker.record("qsl", qsl.to_dict())
        logger.info(f"⏱️ T_QSL: {'infinite' if qsl.infinite else f'{qsl.t_qsl:.12g} us'}")
        print(f"T_QSL: {'infinite' if qsl.infinite else repr(qsl.t_qsl)}")


HANDLERS: Dict[str, Callable[[ProblemConfig, RunTracker], None]] = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "sense": cmd_sense,
    "limits": cmd_limits,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _list_presets(presets_file: str):
    print("\n📋 Available Problem Presets:")
    print("=" * 50)
    presets = load_presets(presets_file).get("presets", {})
    if not presets:
        print("❌ No presets found in configuration file")
        return
    for name, preset in presets.items():
        print(f"\n🎯 {name}")
        print(f"   Command: {preset.get('command', 'N/A')}")
        print(f"   Description: {preset.get('description', 'N/A')}")
    print("\n💡 Usage: python run.py <command> --preset <preset_name>")


def _resolve_config(args):
    if args.preset:
        preset = get_preset(args.preset, args.presets_file)
        if preset.get("command") != args.command:
            raise ConfigError(f"preset '{args.preset}' is a {preset.get('command')} problem, not {args.command}")
        logger.info(f"🎯 Using preset: {args.preset}")
        return parse_problem_config(preset["config"], args.seed), args.preset
    if args.config:
        stem = os.path.splitext(os.path.basename(args.config))[0]
        return load_problem_config(args.config, args.seed), stem
    raise ConfigError("either --config or --preset is required")


def run_command(command: str, config: ProblemConfig, out_dir: str) -> RunTracker:
    """Run one command on a parsed configuration and save its outputs"""
    tracker = RunTracker(out_dir, command)
    echo = config.to_dict()
    tracker.record_config(echo, config_hash(echo))
    try:
        HANDLERS[command](config, tracker)
    except NvQocError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from e
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        raise NumericError(str(e)) from e
    tracker.save()
    return tracker


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the command, map failures onto exit codes"""
    parser = argparse.ArgumentParser(description="NV-center quantum optimal control runs")
    parser.add_argument("command", nargs="?", choices=COMMANDS, help="Run type")
    parser.add_argument("--config", type=str, help="Path to a JSON problem configuration")
    parser.add_argument("--preset", type=str, help="Use a bundled problem preset (e.g., pi_pulse_grape)")
    parser.add_argument("--presets-file", type=str, default=PRESETS_FILE, help="Problem presets file")
    parser.add_argument("--list-presets", action="store_true", help="List available presets and exit")
    parser.add_argument("--out", type=str, help=f"Output directory (default: {RESULTS_DIR}/<command>_<name>)")
    parser.add_argument("--seed", type=int, help="Override the configuration seed")
    args = parser.parse_args(argv)

    setup_logging()

    try:
        if args.list_presets:
            _list_presets(args.presets_file)
            return 0
        if args.command is None:
            parser.error("a command is required: " + ", ".join(COMMANDS))

        logger.info(f"🚀 Starting {args.command} run")
        config, name = _resolve_config(args)
        out_dir = args.out or os.path.join(RESULTS_DIR, f"{args.command}_{name}")
        tracker = run_command(args.command, config, out_dir)
        print(tracker.generate_summary_report())
        logger.success(f"✅ {args.command} complete! Results in {out_dir}")
        return 0
    except NvQocError as e:
        logger.error(f"💥 {args.command or 'run'} failed: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"💥 Application failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
