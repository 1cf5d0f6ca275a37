"""
Tests for spin operators and NV Hamiltonian construction
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physics.spinsys import (
    DIPOLAR_FIELD_NM3,
    GAMMA_NV,
    ZERO_FIELD_SPLITTING,
    Hamiltonian,
    NucleusSpec,
    NVParameters,
    hermitian_deviation,
    lab_frame_qubit_hamiltonian,
    nv_ground_hamiltonian,
    nv_nv_dipole_hamiltonian,
    odmr_transitions,
    rwa_qubit_hamiltonian,
    spin_operators,
)

field_component = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


@pytest.mark.parametrize("s", [0.5, 1.0])
def test_spin_commutation_relations(s):
    ops = spin_operators(s)
    sx, sy, sz = ops.components()
    assert np.allclose(sx @ sy - sy @ sx, 1j * sz)
    assert np.allclose(sy @ sz - sz @ sy, 1j * sx)
    assert np.allclose(sx @ sx + sy @ sy + sz @ sz, s * (s + 1) * ops.identity)


def test_spin_one_sz_is_unnormalized_diagonal():
    ops = spin_operators(1)
    assert ops.dim == 3
    assert np.allclose(ops.sz, np.diag([1.0, 0.0, -1.0]))


def test_unsupported_spin_rejected():
    with pytest.raises(ValueError, match="Unsupported spin"):
        spin_operators(1.5)


def test_zero_field_levels():
    h = nv_ground_hamiltonian(NVParameters())
    energies = np.linalg.eigvalsh(h.drift)
    d = ZERO_FIELD_SPLITTING
    assert np.allclose(energies, [-2 * d / 3, d / 3, d / 3])
    assert h.n_controls == 2


def test_axial_field_splits_the_plus_minus_levels():
    b = 5.0
    h = nv_ground_hamiltonian(NVParameters(b_field=(0.0, 0.0, b)))
    energies = np.sort(np.linalg.eigvalsh(h.drift))
    d = ZERO_FIELD_SPLITTING
    assert np.allclose(energies, np.sort([-2 * d / 3, d / 3 + GAMMA_NV * b, d / 3 - GAMMA_NV * b]))


@settings(max_examples=30, deadline=None)
@given(
    st.tuples(field_component, field_component, field_component),
    st.tuples(field_component, field_component, field_component),
)
def test_ground_hamiltonian_is_hermitian(b_field, e_field):
    params = NVParameters(b_field=b_field, e_field=e_field, nuclei=(NucleusSpec(1, 2 * np.pi * 2.16, 2 * np.pi * 2.7, quadrupole=-2 * np.pi * 4.95),))
    h = nv_ground_hamiltonian(params)
    assert h.dim == 9
    assert hermitian_deviation(h.drift) <= 1e-12
    for control in h.controls:
        assert hermitian_deviation(control) == 0.0


def test_nuclear_dimensions():
    half = NucleusSpec(0.5, 1.0, 1.0)
    one = NucleusSpec(1, 1.0, 1.0)
    assert nv_ground_hamiltonian(NVParameters(nuclei=(half,))).dim == 6
    assert nv_ground_hamiltonian(NVParameters(nuclei=(one, one, one))).dim == 81


def test_nuclear_zeeman_has_the_electron_sign():
    # only the nuclear Zeeman term survives: d = 0, gamma_nv = 0, no hyperfine
    nucleus = NucleusSpec(0.5, 0.0, 0.0, gamma_n=1.0)
    h = nv_ground_hamiltonian(NVParameters(d=0.0, gamma_nv=0.0, b_field=(0.0, 0.0, 1.0), nuclei=(nucleus,)))
    expected = np.kron(np.eye(3), spin_operators(0.5).sz)
    assert np.allclose(h.drift, expected, atol=1e-14)

    # electron and nucleus with equal gyromagnetic ratios split the same way
    electron_only = nv_ground_hamiltonian(NVParameters(d=0.0, gamma_nv=1.0, b_field=(0.0, 0.0, 1.0)))
    assert np.allclose(np.diag(electron_only.drift).real, [1.0, 0.0, -1.0])


NUCLEI = (NucleusSpec(1, 2 * np.pi * 2.16, 2 * np.pi * 2.7, gamma_n=2 * np.pi * 0.003, quadrupole=-2 * np.pi * 4.95),)


@settings(max_examples=25, deadline=None)
@given(
    st.tuples(field_component, field_component, field_component),
    st.tuples(field_component, field_component, field_component),
    st.floats(-2.0, 2.0),
    st.floats(-2.0, 2.0),
)
def test_ground_hamiltonian_is_affine_in_the_field(b1, b2, a, b):
    def drift(field):
        return nv_ground_hamiltonian(NVParameters(b_field=tuple(field), nuclei=NUCLEI)).drift

    zero = drift((0.0, 0.0, 0.0))
    combined = a * np.asarray(b1) + b * np.asarray(b2)
    lhs = drift(combined) - zero
    rhs = a * (drift(b1) - zero) + b * (drift(b2) - zero)
    assert np.allclose(lhs, rhs, atol=1e-6 * (1.0 + np.abs(lhs).max()))


def test_dimension_cap():
    one = NucleusSpec(1, 1.0, 1.0)
    with pytest.raises(ValueError, match="exceeds the cap"):
        nv_ground_hamiltonian(NVParameters(nuclei=(one,) * 4))


def test_hyperfine_constants():
    nucleus = NucleusSpec(1, n_axial=3.0, n_tran=1.5)
    assert nucleus.fermi_contact == pytest.approx(2.0)
    assert nucleus.dipolar == pytest.approx(0.5)


def test_dipole_coupling_scale_and_symmetry():
    h1 = nv_nv_dipole_hamiltonian([0.0, 0.0, 1.0])
    h2 = nv_nv_dipole_hamiltonian([0.0, 0.0, 2.0])
    assert h1.dim == 9
    assert hermitian_deviation(h1.drift) == 0.0
    assert abs(np.trace(h1.drift)) < 1e-9
    assert np.allclose(h2.drift, h1.drift / 8)

    # |+1,+1> diagonal element: J (1 - 3) for r along z
    coupling = GAMMA_NV * DIPOLAR_FIELD_NM3
    assert h1.drift[0, 0].real == pytest.approx(-2 * coupling)


def test_dipole_rejects_zero_distance():
    with pytest.raises(ValueError, match="non-zero"):
        nv_nv_dipole_hamiltonian([0.0, 0.0, 0.0])


def test_rwa_qubit_matrix():
    delta, omega, phi = 0.3, 1.7, 0.4
    h = rwa_qubit_hamiltonian(delta, omega, phi).matrix()
    expected = np.array(
        [[delta / 2, omega / 2 * np.exp(-1j * phi)], [omega / 2 * np.exp(1j * phi), -delta / 2]]
    )
    assert np.allclose(h, expected)


@settings(max_examples=40, deadline=None)
@given(st.floats(-50.0, 50.0), st.floats(-50.0, 50.0), st.floats(-10.0, 10.0))
def test_rwa_qubit_is_periodic_in_the_drive_phase(delta, omega, phi):
    h = rwa_qubit_hamiltonian(delta, omega, phi).matrix()
    shifted = rwa_qubit_hamiltonian(delta, omega, phi + 2 * np.pi).matrix()
    assert np.allclose(h, shifted, atol=1e-11)


def test_lab_frame_qubit_has_one_control():
    h = lab_frame_qubit_hamiltonian(2 * np.pi * 100)
    assert h.n_controls == 1
    assert np.allclose(h.controls[0], [[0, 1], [1, 0]])


def test_hamiltonian_rejects_non_hermitian_drift():
    with pytest.raises(ValueError, match="not Hermitian"):
        Hamiltonian(drift=np.array([[0, 1], [0, 0]]))


def test_hamiltonian_arrays_are_read_only():
    source = np.diag([1.0, -1.0])
    h = Hamiltonian(drift=source)
    with pytest.raises(ValueError):
        h.drift[0, 0] = 5.0
    source[0, 0] = 2.0
    assert h.drift[0, 0] == 1.0


def test_hamiltonian_amplitude_count_checked():
    h = rwa_qubit_hamiltonian(0.0, 1.0)
    with pytest.raises(ValueError, match="expected 2 amplitudes"):
        h.matrix([1.0])


def test_odmr_lines_in_axial_field():
    b = 5.0
    lines = odmr_transitions(NVParameters(b_field=(0.0, 0.0, b)))
    d = ZERO_FIELD_SPLITTING
    assert len(lines) == 2
    assert lines[0].frequency == pytest.approx(d - GAMMA_NV * b)
    assert lines[1].frequency == pytest.approx(d + GAMMA_NV * b)
    assert [line.weight for line in lines] == pytest.approx([1.0, 1.0])


def test_odmr_lines_merge_at_zero_field():
    lines = odmr_transitions(NVParameters())
    assert len(lines) == 1
    assert lines[0].frequency == pytest.approx(ZERO_FIELD_SPLITTING)


def test_parameters_from_dict():
    params = NVParameters.from_dict({"b_field": [0, 0, 1], "nuclei": [{"spin": 0.5, "n_axial": 1.0, "n_tran": 2.0}]})
    assert params.dims == [3, 2]
    with pytest.raises(ValueError, match="3 components"):
        NVParameters(b_field=(1.0, 2.0))
