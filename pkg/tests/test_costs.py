"""
Tests for terminal, running and robust costs
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optimizers.costs import (
    ControlMapping,
    CostSpec,
    EnsembleMember,
    FisherTerminal,
    MeasurementModel,
    RunningCost,
    StateTerminal,
    amplitude_ensemble,
    describe,
    detuning_ensemble,
    fisher_information,
    hadamard_target,
    j_bandwidth,
    j_fisher,
    j_gate,
    j_power,
    j_power_gradient,
    j_robust,
    j_state,
    map_controls,
    map_members,
    rotation_target,
    sine_envelope,
    total_cost,
    worst_case_cost,
)
from physics.propagate import PulseSet
from physics.spinsys import nv_ground_hamiltonian, NVParameters, rwa_qubit_hamiltonian
from src.config import FISHER_SENTINEL

PLUS = np.array([1.0, 1.0]) / np.sqrt(2)
MINUS = np.array([1.0, -1.0]) / np.sqrt(2)


def test_state_cost_extremes():
    assert j_state([1, 0], [1, 0]) == pytest.approx(0.0)
    assert j_state([1, 0], [0, 1]) == pytest.approx(1.0)
    assert j_state(PLUS, [1, 0]) == pytest.approx(0.5)


def test_state_cost_phase_handling():
    assert j_state([1, 0], [1j, 0]) == pytest.approx(0.0)
    assert j_state([1, 0], [1j, 0], phase_sensitive=True) == pytest.approx(1.0)
    assert j_state([1, 0], [-1, 0], phase_sensitive=True) == pytest.approx(2.0)


def test_state_cost_rejects_unnormalized_target():
    with pytest.raises(ValueError, match="not normalized"):
        j_state([1, 0], [1, 1])


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=-np.pi, max_value=np.pi))
def test_gate_cost_ignores_global_phase(phi):
    target = hadamard_target()
    assert j_gate(np.exp(1j * phi) * target, target) == pytest.approx(0.0, abs=1e-12)
    assert j_gate(np.exp(1j * phi) * target, target, phase_sensitive=True) == pytest.approx(1 - np.cos(phi), abs=1e-12)


def test_gate_cost_of_orthogonal_gate():
    x_gate = np.array([[0, 1], [1, 0]], dtype=complex)
    assert j_gate(x_gate, np.eye(2)) == pytest.approx(1.0)


def test_gate_cost_rejects_non_unitary():
    with pytest.raises(ValueError, match="not unitary"):
        j_gate(np.eye(2) * 2, np.eye(2))
    with pytest.raises(ValueError, match="mismatch"):
        j_gate(np.eye(2), np.eye(3))


def test_hadamard_is_half_pi_x_rotation():
    assert np.allclose(hadamard_target(), rotation_target(np.pi / 2, "x"))
    assert np.allclose(rotation_target(np.pi, "y"), -1j * np.array([[0, -1j], [1j, 0]]))
    with pytest.raises(ValueError, match="axis"):
        rotation_target(1.0, "w")


def test_ramsey_fisher_information():
    model = MeasurementModel.ramsey(gamma=1.0, tau=2.0)
    assert fisher_information(model, np.pi / 4) == pytest.approx(4.0, rel=1e-6)
    assert j_fisher(model, np.pi / 4, n_measurements=10) == pytest.approx(1 / 40, rel=1e-6)


def test_binary_model_of_a_rotation_angle():
    model = MeasurementModel.binary(lambda theta: np.sin(theta / 2) ** 2)
    assert model.name == "binary"
    assert fisher_information(model, 1.0) == pytest.approx(1.0, rel=1e-6)


def test_binary_model_linear_in_theta():
    model = MeasurementModel.binary(lambda theta: theta)
    assert fisher_information(model, 0.25) == pytest.approx(1 / (0.25 * 0.75), rel=1e-9)
    assert fisher_information(model, 0.25) == pytest.approx(5.3333333, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.2, max_value=2.9), st.permutations([0, 1, 2]))
def test_fisher_information_ignores_outcome_labels(theta0, order):
    def probabilities(theta):
        return ((1 + np.cos(theta)) / 4, (1 - np.cos(theta)) / 4, 0.5)

    original = MeasurementModel(probabilities)
    relabelled = MeasurementModel(lambda theta: [probabilities(theta)[i] for i in order])
    assert fisher_information(relabelled, theta0) == pytest.approx(fisher_information(original, theta0), rel=1e-9)


def test_fisher_sentinel_at_flat_point():
    model = MeasurementModel.ramsey(gamma=1.0, tau=2.0)
    assert fisher_information(model, 0.0) == 0.0
    assert j_fisher(model, 0.0, n_measurements=5) == FISHER_SENTINEL


def test_fisher_rejects_bad_inputs():
    model = MeasurementModel.ramsey(gamma=1.0, tau=1.0)
    with pytest.raises(ValueError, match="at least 1"):
        j_fisher(model, 0.3, n_measurements=0)
    broken = MeasurementModel(lambda theta: (0.7, 0.7), "broken")
    with pytest.raises(ValueError, match="sums to"):
        broken.probabilities(0.0)
    negative = MeasurementModel(lambda theta: (1.5, -0.5), "negative")
    with pytest.raises(ValueError, match="negative probability"):
        negative.probabilities(0.0)


def test_fisher_terminal_free_precession():
    # |+> precessing under theta * s_z for time T, read out in the +/- basis: F = T^2
    system = rwa_qubit_hamiltonian(0.0, 0.0)
    terminal = FisherTerminal(
        psi0=PLUS,
        generator=np.diag([0.5, -0.5]),
        povm=(np.outer(PLUS, PLUS), np.outer(MINUS, MINUS)),
        theta0=np.pi / 2,
        n_measurements=10,
    )
    pulses = PulseSet.zeros(1.0, 4, 2)
    model = terminal.model(system, pulses)
    assert fisher_information(model, terminal.theta0) == pytest.approx(1.0, rel=1e-6)
    assert total_cost(system, pulses, CostSpec(terminal)) == pytest.approx(0.1, rel=1e-6)


def test_fisher_terminal_requires_complete_povm():
    with pytest.raises(ValueError, match="identity"):
        FisherTerminal(PLUS, np.diag([0.5, -0.5]), (np.diag([1.0, 0.0]),), 0.0)


def test_power_penalty():
    assert j_power([1.0, 1.0], dt=1.0, p_lim=1.0) == pytest.approx(1.0)
    assert j_power([0.5, 0.5], dt=1.0, p_lim=1.0) == 0.0
    with pytest.raises(ValueError, match="positive"):
        j_power([1.0], dt=1.0, p_lim=0.0)


def test_power_gradient_matches_finite_differences():
    pulse = np.array([1.0, -2.0, 0.5])
    grad = j_power_gradient(pulse, dt=0.3, p_lim=1.0, weight=2.0)
    h = 1e-6
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        fd = (j_power(pulse + step, 0.3, 1.0, 2.0) - j_power(pulse - step, 0.3, 1.0, 2.0)) / (2 * h)
        assert grad[k] == pytest.approx(fd, rel=1e-6)


def test_bandwidth_penalty():
    assert j_bandwidth([0.0, 1.0, 3.0], dt=0.5, eps=1.0) == pytest.approx(10.0)
    assert j_bandwidth([2.0, 2.0, 2.0], dt=0.5, eps=1.0) == 0.0
    with pytest.raises(ValueError, match="2 slices"):
        j_bandwidth([1.0], dt=0.5, eps=1.0)


def _sine_bandwidth(n_slices, amplitude=1.5, omega=2 * np.pi * 3, t_final=1.0, eps=0.2):
    pulses = PulseSet.zeros(t_final, n_slices, 1)
    u = amplitude * np.sin(omega * pulses.midpoints)
    return j_bandwidth(u, pulses.dt, eps), eps * amplitude**2 * omega**2 * t_final / 2


def test_bandwidth_penalty_of_a_sine_matches_closed_form():
    value, exact = _sine_bandwidth(2000)
    assert value == pytest.approx(exact, rel=0.01)


def test_bandwidth_penalty_converges_as_slices_shrink():
    errors = [abs(_sine_bandwidth(n)[0] - _sine_bandwidth(n)[1]) for n in (250, 500, 1000, 2000)]
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[-1] < errors[0] / 4


def test_running_cost_validation():
    with pytest.raises(ValueError, match="p_lim"):
        RunningCost("power")
    with pytest.raises(ValueError, match="Unknown running cost"):
        RunningCost("energy")


def test_clip_and_sin_mappings():
    raw = PulseSet(1.0, 3, [[-2.0, 0.5, 2.0]])
    clip = ControlMapping("clip", u_max=1.0)
    assert np.allclose(clip.apply(raw).amplitudes, [[-1.0, 0.5, 1.0]])
    assert np.allclose(clip.derivative(raw), [[0.0, 1.0, 0.0]])

    sin = ControlMapping("sin", u_max=2.0)
    assert np.allclose(sin.apply(raw).amplitudes, 2.0 * np.sin(raw.amplitudes))
    assert np.allclose(sin.derivative(raw), 2.0 * np.cos(raw.amplitudes))


def test_shape_mapping():
    shape = sine_envelope(4)
    mapping = ControlMapping("shape", shape=shape)
    raw = PulseSet.constant(1.0, 4, [2.0])
    assert np.allclose(mapping.apply(raw).amplitudes, [2.0 * shape])
    assert shape[0] == pytest.approx(shape[-1])
    with pytest.raises(ValueError, match="samples"):
        mapping.apply(PulseSet.zeros(1.0, 5, 1))


def test_no_mapping_passes_pulses_through():
    raw = PulseSet(1.0, 2, [[3.0, -3.0]])
    assert map_controls(raw, None) is raw
    assert np.allclose(map_controls(raw, ControlMapping("clip", u_max=1.0)).amplitudes, [[1.0, -1.0]])


def test_mapping_validation():
    with pytest.raises(ValueError, match="Unknown mapping mode"):
        ControlMapping("tanh", u_max=1.0)
    with pytest.raises(ValueError, match="u_max"):
        ControlMapping("clip")
    with pytest.raises(ValueError, match="shape"):
        ControlMapping("shape")


def _pi_pulse_problem():
    system = rwa_qubit_hamiltonian(0.0, np.pi)
    pulses = PulseSet.constant(1.0, 10, system.nominal_amplitudes)
    terminal = StateTerminal([1.0, 0.0], [0.0, 1.0])
    return system, pulses, terminal


def test_robust_cost_requires_ensemble():
    system, pulses, terminal = _pi_pulse_problem()
    with pytest.raises(ValueError, match="non-empty ensemble"):
        j_robust(CostSpec(terminal), pulses)


def test_ensemble_weights_are_normalized():
    system, _, terminal = _pi_pulse_problem()
    members = detuning_ensemble(system, [-0.1, 0.1], weights=[1.0, 3.0])
    spec = CostSpec(terminal, ensemble=members)
    assert [m.weight for m in spec.ensemble] == pytest.approx([0.25, 0.75])
    with pytest.raises(ValueError, match="non-negative"):
        CostSpec(terminal, ensemble=(EnsembleMember(system, -1.0),))


def test_robust_average_and_worst_case():
    system, pulses, terminal = _pi_pulse_problem()
    spec = CostSpec(terminal, ensemble=detuning_ensemble(system, [-1.0, 0.0, 1.0]))
    average = j_robust(spec, pulses)
    worst = worst_case_cost(system, pulses, spec)
    assert 0.0 < average <= worst
    assert total_cost(system, pulses, spec) == pytest.approx(average)
    assert total_cost(system, pulses, CostSpec(terminal)) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.0, max_value=1.4), st.floats(min_value=0.01, max_value=0.1))
def test_robust_cost_grows_with_one_member(offset, increase):
    # a square pi pulse loses fidelity monotonically for detunings up to about Omega / 2
    system, pulses, terminal = _pi_pulse_problem()
    before = CostSpec(terminal, ensemble=detuning_ensemble(system, [-0.3, 0.0, offset], weights=[1.0, 2.0, 1.0]))
    after = CostSpec(terminal, ensemble=detuning_ensemble(system, [-0.3, 0.0, offset + increase], weights=[1.0, 2.0, 1.0]))
    assert worst_case_cost(after.ensemble[2].system, pulses, CostSpec(terminal)) > worst_case_cost(
        before.ensemble[2].system, pulses, CostSpec(terminal)
    )
    assert j_robust(after, pulses) > j_robust(before, pulses)


def test_detuning_ensemble_needs_operator_beyond_qubits():
    system = nv_ground_hamiltonian(NVParameters())
    with pytest.raises(ValueError, match="non-qubit"):
        detuning_ensemble(system, [0.0])


def test_amplitude_ensemble_scales_controls():
    system = rwa_qubit_hamiltonian(0.0, 1.0)
    members = amplitude_ensemble(system, [-0.1, 0.1], distribution=lambda e: 1.0)
    assert np.allclose(members[0].system.controls[0], 0.9 * system.controls[0])
    assert members[1].label == "rabi_error=0.1"


def test_map_members_preserves_order():
    system, _, _ = _pi_pulse_problem()
    members = [EnsembleMember(system, 1.0, str(i)) for i in range(6)]
    assert map_members(lambda m: m.label, members, max_workers=3) == [str(i) for i in range(6)]


def test_describe():
    system, _, terminal = _pi_pulse_problem()
    spec = CostSpec(
        terminal,
        running=[RunningCost("power", 1e-3, p_lim=5.0)],
        ensemble=detuning_ensemble(system, [-0.1, 0.0, 0.1]),
    )
    assert describe(spec) == "state+power+ensemble[3]"
