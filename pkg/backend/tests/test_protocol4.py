import json

import numpy as np
import pytest
from scipy import stats

from scripts.blind_delegation.adversaries import Honest
from scripts.blind_delegation.circuit_ir import TWO_PI, PrivacyTag, TaggedCircuit, op
from scripts.blind_delegation.errors import BadArgument, CircuitUnsupportedByProfile
from scripts.blind_delegation.protocol_engine import MessageKind, run_protocol, run_protocol4, sample_outcomes
from scripts.blind_delegation.scenarios import grover3, qaoa3, qnn3
from scripts.blind_delegation.sim_core import RngStreams, basis_probabilities
from scripts.blind_delegation.verification import distribution_check
from tests.helpers import assert_same_state


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_zero_client_runs_are_exact(scenario, seed):
    result = run_protocol4(scenario, RngStreams(seed), measure=False)
    assert_same_state(result.state, scenario.simulate())
    assert result.summary["max_client_holdings"] == 0


def test_traps_under_zero_client_runs():
    circuit = qnn3()
    result = run_protocol4(circuit, RngStreams(4), measure=False, trap_density=1.0)
    assert result.summary["traps"] == 4
    assert_same_state(result.state, circuit.simulate())


@pytest.mark.slow
def test_first_share_is_uniform():
    """The share a single server sees is uniform on [0, 2pi) whatever the angle."""
    circuit = qaoa3()
    samples = [run_protocol4(circuit, RngStreams(seed), measure=False).run.shares[3][0]
               for seed in range(1000)]
    assert stats.kstest(np.array(samples) / TWO_PI, "uniform").pvalue > 0.01


def test_no_server_sees_a_whole_angle():
    circuit = qaoa3()
    angles = [g.gate.params[0] for g in circuit.gates if g.tag is PrivacyTag.PRIVATE_ANGLE]
    for seed in range(20):
        result = run_protocol4(circuit, RngStreams(seed))
        for view in result.server_views().values():
            seen = [p for event in view["events"] for p in event.get("params", [])]
            assert seen
            assert not any(abs(value - angle) < 1e-9 for value in seen for angle in angles)


def test_servers_only_talk_through_the_relay():
    result = run_protocol4(qnn3(), RngStreams(3))
    transfers = [m for m in result.transcript.messages if m.kind is MessageKind.QUBIT_TRANSFER]
    assert transfers
    assert all("common-node" in (m.sender, m.receiver) for m in transfers)
    notices = [m for m in result.transcript.messages if m.kind is MessageKind.RELABEL_NOTICE]
    assert all(m.receiver == "client" for m in notices)
    assert result.summary["hops"] == len(transfers) // 2


def test_each_share_goes_to_a_different_server():
    result = run_protocol4(qaoa3(), RngStreams(6), measure=False)
    receivers: dict[int, list[str]] = {}
    for m in result.transcript.instructions():
        if m.payload["params"]:
            receivers.setdefault(m.ledger["uid"], []).append(m.receiver)
    assert receivers
    for uid, names in receivers.items():
        assert sorted(names) == ["server1", "server2"], uid


def test_server_views_serialize():
    result = run_protocol4(grover3(), RngStreams(5))
    view = json.loads(result.transcript.server_view_json("server2"))
    assert view["server"] == "server2"
    assert all(event["type"] != "RelabelNotice" for event in view["events"])


def test_measured_distribution_matches_reference():
    circuit = qaoa3()
    counts = sample_outcomes("p4", circuit, None, seed=21, shots=2000)
    passed, worst = distribution_check(counts, 2000, basis_probabilities(circuit.simulate()))
    assert passed, f"worst deviation {worst:.2f} sigma"


def test_grover_under_zero_client():
    counts = sample_outcomes("p4", grover3(), None, seed=2, shots=300)
    assert set(counts) <= {"101", "110"}


def test_behaviors_are_rejected():
    with pytest.raises(BadArgument):
        run_protocol("p4", qaoa3(), None, RngStreams(0), behavior=Honest())


def test_private_gate_without_angle():
    circuit = TaggedCircuit(2, [op("CNOT", 0, 1, tag=PrivacyTag.PRIVATE_ANGLE)])
    with pytest.raises(CircuitUnsupportedByProfile):
        run_protocol4(circuit, RngStreams(0))


def test_uncovered_structure_is_reported(caplog):
    with caplog.at_level("WARNING", logger="scripts.blind_delegation.protocol_engine"):
        run_protocol4(grover3(), RngStreams(0), measure=False)
    assert "no traps to hide them" in caplog.text
    caplog.clear()
    with caplog.at_level("WARNING", logger="scripts.blind_delegation.protocol_engine"):
        run_protocol4(qaoa3(), RngStreams(0), measure=False)
    assert "no traps to hide them" not in caplog.text
