import json
from itertools import groupby

import numpy as np
import pytest

from scripts.blind_delegation.circuit_ir import CapabilityProfile, PrivacyTag, TaggedCircuit, TaggedGate, op
from scripts.blind_delegation.errors import BadArgument, CircuitUnsupportedByProfile, ProtocolViolation
from scripts.blind_delegation.protocol_engine import (
    DelegationRun,
    MessageKind,
    run_protocol,
    run_protocol2,
    run_protocol3,
    sample_outcomes,
    server_parallel_step,
)
from scripts.blind_delegation.scenarios import grover3, qaoa3, qnn3, random_circuit
from scripts.blind_delegation.sim_core import RngStreams, basis_probabilities, fidelity_up_to_global_phase
from scripts.blind_delegation.verification import distribution_check
from tests.helpers import assert_same_state

PROFILES = {
    "p2-full-M2": ("p2", CapabilityProfile.full(2)),
    "p2-full-M3": ("p2", CapabilityProfile.full(3)),
    "p3-one-qubit-M2": ("p3", CapabilityProfile.one_qubit_gates(2)),
    "p3-one-qubit-M1": ("p3", CapabilityProfile.one_qubit_gates(1)),
}


@pytest.mark.parametrize("setup", sorted(PROFILES))
@pytest.mark.parametrize("seed", [0, 7])
def test_scenarios_are_reproduced_exactly(scenario, setup, seed):
    protocol, profile = PROFILES[setup]
    result = run_protocol(protocol, scenario, profile, RngStreams(seed))
    assert_same_state(result.state, scenario.simulate())
    assert result.summary["max_client_holdings"] <= profile.max_client_qubits


@pytest.mark.parametrize("density", [0.5, 1.0])
def test_traps_leave_the_result_unchanged(density, one_qubit_m2):
    circuit = grover3()
    result = run_protocol3(circuit, one_qubit_m2, RngStreams(3), trap_density=density)
    assert result.summary["traps"] > 0
    assert_same_state(result.state, circuit.simulate())


@pytest.mark.parametrize("setup", sorted(PROFILES))
@pytest.mark.parametrize("seed", range(50))
def test_random_circuits_are_reproduced_exactly(setup, seed):
    protocol, profile = PROFILES[setup]
    rng = np.random.default_rng(seed)
    n_qubits = int(rng.integers(1, 6))
    circuit = random_circuit(n_qubits, int(rng.integers(0, 31)), rng)
    result = run_protocol(protocol, circuit, profile, RngStreams(seed))
    assert_same_state(result.state, circuit.simulate())


def test_key_modes_agree(full_m2):
    circuit = qaoa3()
    for mode in ("protocol1", "pool", "external"):
        result = run_protocol2(circuit, full_m2, RngStreams(1), key_mode=mode)
        assert_same_state(result.state, circuit.simulate())


def test_shuffled_protocol2_run(full_m2):
    circuit = grover3()
    result = run_protocol2(circuit, full_m2, RngStreams(2), shuffle=True)
    assert_same_state(result.state, circuit.simulate())
    kinds = [m.kind for m in result.transcript.messages]
    assert MessageKind.RELABEL_NOTICE in kinds
    view = result.transcript.server_view("server")
    assert all(event["type"] != MessageKind.RELABEL_NOTICE.value for event in view["events"])


def test_server_runs_toffoli_under_protocol2(full_m2):
    result = run_protocol2(grover3(), full_m2, RngStreams(4))
    gates = [m.payload["gate"] for m in result.transcript.instructions("server")]
    assert "CCZ" in gates
    assert result.summary["max_client_holdings"] <= 2


def test_server_never_receives_private_gates(scenario, full_m2, one_qubit_m2):
    for protocol, profile in (("p2", full_m2), ("p3", one_qubit_m2)):
        result = run_protocol(protocol, scenario, profile, RngStreams(5))
        tags = {m.ledger["tag"] for m in result.transcript.instructions()}
        if protocol == "p2":
            assert tags <= {PrivacyTag.PUBLIC.value}
        assert all(m.payload["params"] == [] for m in result.transcript.instructions())


def test_server_views_do_not_depend_on_angles(one_qubit_m2):
    first = qaoa3([0.11, 0.22, 0.33, 0.44, 0.55, 0.66, 0.77, 0.88, 0.99])
    second = qaoa3([1.9, 0.05, 2.7, 0.31, 1.23, 0.4, 2.2, 1.7, 0.61])
    views = []
    for circuit in (first, second):
        result = run_protocol3(circuit, one_qubit_m2, RngStreams(7), trap_density=0.5)
        views.append(result.transcript.server_view_json("server"))
    assert views[0] == views[1]
    numbers = []
    for event in json.loads(views[0])["events"]:
        numbers.extend(value for value in event.get("params", []))
    angles = [g.gate.params[0] for g in first.gates if g.gate.params]
    assert not any(abs(value - angle) < 1e-12 for value in numbers for angle in angles)


def test_runs_replay_identically(one_qubit_m2):
    runs = [run_protocol3(qnn3(), one_qubit_m2, RngStreams(9), measure=True) for _ in range(2)]
    assert runs[0].transcript.to_jsonl() == runs[1].transcript.to_jsonl()
    assert runs[0].bits == runs[1].bits


def test_grover_measured_outcomes_match_reference(full_m2):
    circuit = grover3()
    reference = basis_probabilities(circuit.simulate())
    counts = sample_outcomes("p2", circuit, full_m2, seed=7, shots=2000)
    assert sum(counts.values()) == 2000
    marked = (counts["101"] + counts["110"]) / 2000
    assert marked == pytest.approx(reference["101"] + reference["110"], abs=1e-9)
    passed, _ = distribution_check(counts, 2000, reference)
    assert passed


@pytest.mark.parametrize("setup", ["p3-one-qubit-M2", "p3-one-qubit-M1"])
def test_measured_protocol3_distribution(setup):
    protocol, profile = PROFILES[setup]
    circuit = qaoa3()
    counts = sample_outcomes(protocol, circuit, profile, seed=11, shots=1500)
    passed, worst = distribution_check(counts, 1500, basis_probabilities(circuit.simulate()))
    assert passed, f"worst deviation {worst:.2f} sigma"


def test_parallel_sampling_matches_serial(full_m2):
    circuit = qnn3()
    serial = sample_outcomes("p2", circuit, full_m2, seed=3, shots=40)
    parallel = sample_outcomes("p2", circuit, full_m2, seed=3, shots=40, jobs=2)
    assert serial == parallel


def test_toffoli_on_server_needs_two_client_qubits():
    with pytest.raises(CircuitUnsupportedByProfile):
        run_protocol2(grover3(), CapabilityProfile.full(1), RngStreams(0))


def test_gate_neither_side_can_run():
    circuit = TaggedCircuit(1, [op("T", 0, tag=PrivacyTag.PRIVATE_ANGLE)])
    with pytest.raises(CircuitUnsupportedByProfile):
        run_protocol3(circuit, CapabilityProfile.partial(1), RngStreams(0))


def test_protocol_profile_mismatch():
    with pytest.raises(BadArgument):
        run_protocol3(qaoa3(), CapabilityProfile.full(2), RngStreams(0))
    with pytest.raises(CircuitUnsupportedByProfile):
        run_protocol2(qaoa3(), CapabilityProfile.one_qubit_gates(2), RngStreams(0))
    with pytest.raises(BadArgument):
        run_protocol("p9", qaoa3(), CapabilityProfile.full(2), RngStreams(0))


def test_shuffle_needs_port_mixing():
    with pytest.raises(BadArgument):
        run_protocol3(qaoa3(), CapabilityProfile.one_qubit_gates(1), RngStreams(0), shuffle=True)


def test_server_step_requires_custody(full_m2):
    run = DelegationRun(grover3(), full_m2, RngStreams(0))
    with pytest.raises(ProtocolViolation):
        server_parallel_step(run, run.server, [0])


def test_partial_client_delegates_single_qubit_gates():
    circuit = TaggedCircuit(2, [op("H", 0), op("S", 1), op("X", 0), op("CNOT", 0, 1)])
    result = run_protocol3(circuit, CapabilityProfile.partial(2), RngStreams(6))
    sent = [m.payload["gate"] for m in result.transcript.instructions()]
    assert sorted(sent) == ["CNOT", "H", "S"]
    assert_same_state(result.state, circuit.simulate())


@pytest.mark.parametrize("targets", [(2, 1, 0), (1, 2, 0), (0, 1, 2)])
@pytest.mark.parametrize("seed", range(12))
def test_server_toffoli_with_any_target_order(targets, seed, full_m2):
    circuit = TaggedCircuit(3, [op("H", 0), op("H", 1), op("H", 2), op("CCX", *targets), op("H", 0)])
    result = run_protocol2(circuit, full_m2, RngStreams(seed))
    assert_same_state(result.state, circuit.simulate())
    assert "CCX" in [m.payload["gate"] for m in result.transcript.instructions()]


def test_small_circuits_never_leave_the_client():
    circuit = qaoa3()
    result = run_protocol2(circuit, CapabilityProfile.full(3), RngStreams(2))
    assert result.summary["sends"] == 0
    assert result.summary["instructions"] == 0
    assert fidelity_up_to_global_phase(result.state, circuit.simulate()) == pytest.approx(1.0)
    measured = run_protocol2(circuit, CapabilityProfile.full(3), RngStreams(2), measure=True)
    assert measured.summary["sends"] == 0
    assert measured.transcript.server_view("server")["events"] == []


def instructions_per_tick(events) -> list[list[str]]:
    gates = [e for e in events if e["type"] == MessageKind.INSTRUCTION.value]
    return [sorted(e["gate"] for e in group) for _, group in groupby(gates, key=lambda e: e["tick"])]


@pytest.mark.parametrize("seed", range(5))
def test_grover_oracles_look_alike_to_the_server(seed, one_qubit_m2):
    oracles = [grover3(("101", "110")), grover3(("011", "110"))]
    assert len(oracles[0]) == len(oracles[1])
    results = [run_protocol3(circuit, one_qubit_m2, RngStreams(seed), trap_density=0.5) for circuit in oracles]
    assert results[0].run.trap_plan == results[1].run.trap_plan
    views = [result.transcript.server_view("server")["events"] for result in results]
    assert [e["type"] for e in views[0]] == [e["type"] for e in views[1]]
    assert instructions_per_tick(views[0]) == instructions_per_tick(views[1])
    for circuit, result in zip(oracles, results):
        assert result.summary["oblivious"]
        assert_same_state(result.state, circuit.simulate())


@pytest.mark.parametrize("setup", ["p3-one-qubit-M2", "p3-one-qubit-M1"])
@pytest.mark.parametrize("seed", range(20))
def test_hidden_structure_circuits_are_reproduced_exactly(setup, seed):
    protocol, profile = PROFILES[setup]
    rng = np.random.default_rng(100 + seed)
    circuit = random_circuit(int(rng.integers(1, 6)), int(rng.integers(1, 31)), rng)
    gates = [
        TaggedGate(g.gate, PrivacyTag.PRIVATE_STRUCTURE, g.role)
        if g.arity == 1 and not g.gate.params and rng.random() < 0.5 else g
        for g in circuit.gates
    ]
    circuit = TaggedCircuit(circuit.labels, gates)
    result = run_protocol(protocol, circuit, profile, RngStreams(seed))
    assert_same_state(result.state, circuit.simulate())
    assert result.summary["max_client_holdings"] <= profile.max_client_qubits


@pytest.mark.parametrize("splits", [2, 3])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_partial_client_delegates_rotation_shares(splits, seed):
    circuit = qaoa3()
    result = run_protocol3(circuit, CapabilityProfile.partial(2), RngStreams(seed), angle_splits=splits)
    assert_same_state(result.state, circuit.simulate())
    assert result.summary["oblivious"]
    shares = [m for m in result.transcript.instructions() if m.payload["params"]]
    assert len(shares) == 9 * splits
    assert {m.payload["gate"] for m in shares} == {"RZ", "RX"}
    angles = [g.gate.params[0] for g in circuit.gates if g.tag is PrivacyTag.PRIVATE_ANGLE]
    seen = [m.payload["params"][0] for m in shares]
    assert not any(abs(value - angle) < 1e-9 for value in seen for angle in angles)


def test_angle_shares_are_separated_by_round_trips():
    result = run_protocol3(qaoa3(), CapabilityProfile.partial(2), RngStreams(4))
    kinds = [e["type"] for e in result.transcript.server_view("server")["events"]]
    assert kinds.count(MessageKind.INSTRUCTION.value) == len(result.transcript.instructions())
    adjacent = [pair for pair in zip(kinds, kinds[1:]) if pair == (MessageKind.INSTRUCTION.value,) * 2]
    assert adjacent == []


def test_partial_client_measured_distribution():
    circuit = qaoa3()
    counts = sample_outcomes("p3", circuit, CapabilityProfile.partial(2), seed=13, shots=600)
    passed, worst = distribution_check(counts, 600, basis_probabilities(circuit.simulate()))
    assert passed, f"worst deviation {worst:.2f} sigma"


def test_rotation_shares_need_two_pieces():
    with pytest.raises(BadArgument):
        run_protocol3(qaoa3(), CapabilityProfile.partial(2), RngStreams(0), angle_splits=1)
    result = run_protocol3(qaoa3(), CapabilityProfile.one_qubit_gates(2), RngStreams(0), angle_splits=1)
    assert {m.payload["gate"] for m in result.transcript.instructions()} == {"CNOT"}
