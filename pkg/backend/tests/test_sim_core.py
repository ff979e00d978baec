import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scripts.blind_delegation.errors import BadArgument, BadGate, LabelMismatch, UnknownQubit
from scripts.blind_delegation.sim_core import (
    GateInstance,
    GateKind,
    RngStreams,
    StateVector,
    add_qubit,
    apply_gate,
    basis_probabilities,
    bitstring,
    fidelity_up_to_global_phase,
    gate_matrix,
    measure_z,
    reduced_density_matrix,
)
from tests.helpers import random_state

angles = st.floats(min_value=-2 * math.pi, max_value=2 * math.pi, allow_nan=False)


def gate(kind, *targets, params=()):
    return GateInstance(kind, targets, params)


def bell() -> StateVector:
    state = StateVector.zeros([0, 1])
    state = apply_gate(state, gate("H", 0))
    return apply_gate(state, gate("CNOT", 0, 1))


def test_bell_state_probabilities():
    probabilities = basis_probabilities(bell())
    assert probabilities["00"] == pytest.approx(0.5)
    assert probabilities["11"] == pytest.approx(0.5)
    assert probabilities["01"] == pytest.approx(0.0)
    assert probabilities["10"] == pytest.approx(0.0)


def test_bitstrings_read_lowest_label_first():
    state = apply_gate(StateVector.zeros([0, 1, 2]), gate("X", 1))
    assert basis_probabilities(state)["010"] == pytest.approx(1.0)
    assert basis_probabilities(state, [2, 1])["01"] == pytest.approx(1.0)
    assert bitstring({0: 1, 1: 0, 2: 1}) == "101"
    assert bitstring({0: 1, 1: 0, 2: 1}, [2, 1]) == "10"


def test_cnot_control_is_first_target():
    state = apply_gate(StateVector.zeros([0, 1]), gate("X", 1))
    state = apply_gate(state, gate("CNOT", 1, 0))
    assert basis_probabilities(state)["11"] == pytest.approx(1.0)
    untouched = apply_gate(apply_gate(StateVector.zeros([0, 1]), gate("X", 1)), gate("CNOT", 0, 1))
    assert basis_probabilities(untouched)["01"] == pytest.approx(1.0)


def test_toffoli_family_on_basis_states():
    state = StateVector.zeros([0, 1, 2])
    for label in (0, 1):
        state = apply_gate(state, gate("X", label))
    flipped = apply_gate(state, gate("CCX", 0, 1, 2))
    assert basis_probabilities(flipped)["111"] == pytest.approx(1.0)
    signed = apply_gate(apply_gate(flipped, gate("CCZ", 0, 1, 2)), gate("X", 2))
    assert signed.amplitudes[3] == pytest.approx(-1.0)


def test_add_qubit_appends_zero_and_rejects_duplicates():
    state = add_qubit(apply_gate(StateVector.zeros([4]), gate("X", 4)), 9)
    assert state.labels == (4, 9)
    assert basis_probabilities(state, [4, 9])["10"] == pytest.approx(1.0)
    with pytest.raises(BadArgument):
        add_qubit(state, 4)


def test_apply_gate_on_unknown_label():
    with pytest.raises(UnknownQubit):
        apply_gate(StateVector.zeros([0]), gate("X", 3))


@pytest.mark.parametrize(
    "kind, targets, params",
    [("CNOT", (0,), ()), ("H", (0, 0), ()), ("RX", (0,), ()), ("RZ", (0,), (math.nan,)), ("FOO", (0,), ())],
)
def test_malformed_gates_are_rejected(kind, targets, params):
    with pytest.raises(BadGate):
        GateInstance(kind, targets, params)


@given(kind=st.sampled_from(list(GateKind)), theta=angles)
def test_gate_matrices_are_unitary(kind, theta):
    matrix = gate_matrix(kind, (theta,) if kind.n_params else ())
    dim = 2 ** kind.arity
    assert matrix.shape == (dim, dim)
    assert np.allclose(matrix.conj().T @ matrix, np.eye(dim), atol=1e-12)


@settings(max_examples=50)
@given(seed=st.integers(0, 2 ** 32 - 1), theta=angles)
def test_rotations_preserve_norm(seed, theta):
    state = random_state([0, 1, 2], np.random.default_rng(seed))
    for kind, targets in (("RX", (0,)), ("RY", (1,)), ("RZ", (2,)), ("RZZ", (2, 0))):
        state = apply_gate(state, gate(kind, *targets, params=(theta,)))
    assert state.norm() == pytest.approx(1.0, abs=1e-12)


def test_measure_z_collapses_and_keeps_qubit():
    streams = RngStreams(3)
    state, record = measure_z(bell(), 0, streams.stream("measure"))
    assert state.labels == (0, 1)
    assert record.probability == pytest.approx(0.5)
    expected = "11" if record.outcome else "00"
    assert basis_probabilities(state)[expected] == pytest.approx(1.0)


def test_measure_z_born_rule_frequencies():
    rng = np.random.default_rng(11)
    state = apply_gate(StateVector.zeros([0]), gate("RY", 0, params=(2 * math.asin(math.sqrt(0.3)),)))
    ones = sum(measure_z(state, 0, rng)[1].outcome for _ in range(4000))
    assert abs(ones / 4000 - 0.3) < 4 * math.sqrt(0.3 * 0.7 / 4000)


def test_reduced_density_matrix_of_bell_pair_is_maximally_mixed():
    rho = reduced_density_matrix(bell(), [1])
    assert np.allclose(rho.matrix, np.eye(2) / 2, atol=1e-12)
    assert rho.trace() == pytest.approx(1.0)


def test_reduced_density_matrix_uses_first_label_as_low_bit():
    state = apply_gate(StateVector.zeros([0, 1]), gate("X", 0))
    rho = reduced_density_matrix(state, [0, 1])
    assert rho.matrix[1, 1] == pytest.approx(1.0)
    swapped = reduced_density_matrix(state, [1, 0])
    assert swapped.matrix[2, 2] == pytest.approx(1.0)


def test_fidelity_ignores_global_phase_and_label_order(rng):
    state = random_state([0, 1, 2], rng)
    phased = StateVector(state.amplitudes * np.exp(0.7j), state.labels)
    assert fidelity_up_to_global_phase(state, phased) == pytest.approx(1.0)
    reordered = state.reordered([2, 0, 1])
    assert fidelity_up_to_global_phase(state, reordered) == pytest.approx(1.0)
    assert basis_probabilities(reordered) == pytest.approx(basis_probabilities(state))


def test_fidelity_requires_same_labels():
    with pytest.raises(LabelMismatch):
        fidelity_up_to_global_phase(StateVector.zeros([0]), StateVector.zeros([1]))


def test_rng_streams_are_independent_and_replayable():
    first = RngStreams(7)
    a_then_b = (first.stream("keys").random(), first.stream("shuffle").random())
    second = RngStreams(7)
    b_first = second.stream("shuffle").random()
    assert b_first == a_then_b[1]
    assert second.stream("keys").random() == a_then_b[0]
    assert first.fresh().stream("keys").random() == a_then_b[0]
    assert first.child("shot", 0).stream("keys").random() != first.child("shot", 1).stream("keys").random()


def test_rng_streams_reject_negative_seed():
    with pytest.raises(BadArgument):
        RngStreams(-1)
