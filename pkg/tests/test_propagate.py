"""
Tests for piecewise-constant propagation
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from physics.propagate import PulseSet, carrier_pulse, expm_slice, propagate, total_propagator
from physics.spinsys import Hamiltonian, lab_frame_qubit_hamiltonian, rwa_qubit_hamiltonian, spin_operators


def random_hermitian(seed, dim):
    rng = np.random.Generator(np.random.PCG64(seed))
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (a + a.conj().T) / 2


def random_problem(seed, dim, n_slices, t_final=1.0):
    system = Hamiltonian(
        drift=random_hermitian(seed, dim),
        controls=(random_hermitian(seed + 1, dim), random_hermitian(seed + 2, dim)),
    )
    rng = np.random.Generator(np.random.PCG64(seed + 3))
    return system, PulseSet(t_final, n_slices, rng.normal(size=(2, n_slices)))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.sampled_from([2, 3, 6]), st.floats(min_value=0.0, max_value=5.0))
def test_expm_slice_is_unitary_and_matches_scipy(seed, dim, dt):
    h = random_hermitian(seed, dim)
    u = expm_slice(h, dt)
    assert np.allclose(u.conj().T @ u, np.eye(dim), atol=1e-12)
    assert np.allclose(u, expm(-1j * h * dt), atol=1e-10)


def test_expm_slice_rejects_negative_dt_and_non_hermitian():
    with pytest.raises(ValueError, match="non-negative"):
        expm_slice(np.eye(2), -0.1)
    with pytest.raises(ValueError, match="not Hermitian"):
        expm_slice(np.array([[0, 1], [0, 0]]), 0.1)


def test_zero_dt_gives_identity():
    assert np.allclose(expm_slice(random_hermitian(1, 3), 0.0), np.eye(3))


def test_resonant_rabi_populations():
    omega = 2 * np.pi * 1.3
    system = rwa_qubit_hamiltonian(0.0, omega)
    pulses = PulseSet.constant(1.0, 200, system.nominal_amplitudes)
    trajectory = propagate(system, pulses, [1.0, 0.0])
    expected = np.sin(omega * trajectory.times / 2) ** 2
    assert np.max(np.abs(trajectory.populations()[:, 1] - expected)) < 1e-8
    assert np.allclose(np.linalg.norm(trajectory.states, axis=1), 1.0, atol=1e-12)


def test_spin_projection_follows_rabi_cosine():
    omega = 2 * np.pi
    system = rwa_qubit_hamiltonian(0.0, omega)
    trajectory = propagate(system, PulseSet.constant(1.0, 50, system.nominal_amplitudes), [1.0, 0.0])
    sz = trajectory.expectation_values(spin_operators(0.5).sz)
    assert np.allclose(sz, np.cos(omega * trajectory.times) / 2, atol=1e-10)


def test_zero_hamiltonian_keeps_state():
    system = Hamiltonian(drift=np.zeros((2, 2)), controls=(spin_operators(0.5).sx,))
    pulses = PulseSet.zeros(2.0, 10, 1)
    psi0 = np.array([0.6, 0.8j])
    trajectory = propagate(system, pulses, psi0)
    assert np.allclose(trajectory.states, psi0[None, :])
    assert np.allclose(total_propagator(system, pulses), np.eye(2))


def test_total_propagator_matches_state_propagation():
    system = rwa_qubit_hamiltonian(0.7, 1.1)
    rng = np.random.Generator(np.random.PCG64(3))
    pulses = PulseSet(1.5, 12, rng.normal(size=(2, 12)))
    psi0 = np.array([1.0, 1.0j]) / np.sqrt(2)
    u = total_propagator(system, pulses)
    assert np.allclose(u @ psi0, propagate(system, pulses, psi0).final_state, atol=1e-12)


def test_slice_order_is_time_order():
    ops = spin_operators(0.5)
    system = Hamiltonian(drift=np.zeros((2, 2)), controls=(ops.sx, ops.sz))
    amplitudes = np.array([[np.pi, 0.0], [0.0, np.pi / 2]])
    u = total_propagator(system, PulseSet(2.0, 2, amplitudes))
    expected = expm(-1j * np.pi / 2 * ops.sz) @ expm(-1j * np.pi * ops.sx)
    assert np.allclose(u, expected)


def test_pulse_set_validation():
    with pytest.raises(ValueError, match="NaN"):
        PulseSet(1.0, 2, [[0.0, np.nan]])
    with pytest.raises(ValueError, match="samples"):
        PulseSet(1.0, 3, [[0.0, 1.0]])
    with pytest.raises(ValueError, match="positive"):
        PulseSet(0.0, 3, np.zeros((1, 3)))


def test_pulse_set_grid():
    pulses = PulseSet.zeros(2.0, 4, 1)
    assert pulses.dt == pytest.approx(0.5)
    assert np.allclose(pulses.times, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert np.allclose(pulses.midpoints, [0.25, 0.75, 1.25, 1.75])


def test_control_count_mismatch_rejected():
    system = rwa_qubit_hamiltonian(0.0, 1.0)
    with pytest.raises(ValueError, match="controls"):
        propagate(system, PulseSet.zeros(1.0, 4, 1), [1.0, 0.0])


def test_unnormalized_initial_state_rejected():
    system = rwa_qubit_hamiltonian(0.0, 1.0)
    with pytest.raises(ValueError, match="not normalized"):
        propagate(system, PulseSet.zeros(1.0, 4, 2), [1.0, 1.0])


def test_lab_frame_carrier_reproduces_rotating_frame_pi_pulse():
    omega_q = 2 * np.pi * 100.0
    rabi = 2 * np.pi
    t_final = np.pi / rabi
    n_slices = 10000
    system = lab_frame_qubit_hamiltonian(omega_q)
    pulses = carrier_pulse(np.full(n_slices, rabi), omega_q, 0.0, t_final)
    trajectory = propagate(system, pulses, [1.0, 0.0])
    assert trajectory.populations()[-1, 1] > 0.99


@pytest.mark.parametrize("seed", [0, 7, 42])
def test_propagators_compose_over_split_intervals(seed):
    system, pulses = random_problem(seed, 3, 16, t_final=2.0)
    first = PulseSet(1.0, 8, pulses.amplitudes[:, :8])
    second = PulseSet(1.0, 8, pulses.amplitudes[:, 8:])
    whole = total_propagator(system, pulses)
    assert np.max(np.abs(whole - total_propagator(system, second) @ total_propagator(system, first))) < 1e-11


@pytest.mark.parametrize("seed", [0, 7, 42])
def test_reversed_negated_pulses_undo_the_evolution(seed):
    system, pulses = random_problem(seed, 3, 12, t_final=1.5)
    reversed_system = Hamiltonian(drift=-system.drift, controls=system.controls)
    reversed_pulses = PulseSet(pulses.t_final, pulses.n_slices, -pulses.amplitudes[:, ::-1])
    u = total_propagator(system, pulses)
    u_back = total_propagator(reversed_system, reversed_pulses)
    assert np.max(np.abs(u_back @ u - np.eye(3))) < 1e-10


@pytest.mark.parametrize("seed, dim", [(1, 2), (2, 2), (3, 3), (4, 3)])
def test_propagation_matches_adaptive_ode_solver(seed, dim):
    system, pulses = random_problem(seed, dim, 6)
    psi0 = np.zeros(dim, dtype=complex)
    psi0[0] = 1.0

    psi = psi0
    for k in range(pulses.n_slices):
        h = system.matrix(pulses.amplitudes[:, k])
        solution = solve_ivp(
            lambda t, y: -1j * (h @ y), (0.0, pulses.dt), psi, method="DOP853", rtol=1e-12, atol=1e-12
        )
        psi = solution.y[:, -1]

    exact = propagate(system, pulses, psi0).final_state
    assert 1.0 - abs(np.vdot(exact, psi)) ** 2 < 1e-8
