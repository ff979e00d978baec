"""
Actors, the message transcript and the delegation protocols.

Every actor works on one shared StateVector; sending a qubit moves custody,
not amplitudes. Servers address qubits by wire id and never see logical
labels: each transcript message keeps what travelled on the channel in
`payload` and the client's private annotation in `ledger`.

Protocols 2 and 3 (an M-qubit client and one server) share one scheduler,
DelegationRun. Protocol 4 (no client qubits, two servers and a relay node)
is ZeroClientRun.
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from itertools import combinations
from typing import Callable, Iterable, Sequence

import numpy as np

from .circuit_ir import (
    SPLITTABLE_KINDS,
    TWO_PI,
    CapabilityProfile,
    GateRole,
    PrivacyTag,
    TaggedCircuit,
    TaggedGate,
    TrapPlan,
    decompose_rzz,
    decompose_toffoli,
    expand_angle_splits,
    insert_traps,
    plan_swap_shuffle,
    ready_frontier,
    split_angle,
)
from .errors import (
    BadArgument,
    CircuitUnsupportedByProfile,
    ProtocolViolation,
    SchedulerStuck,
)
from .pauli_crypto import (
    NON_CLIFFORD_KINDS,
    SERVER_GATE_KINDS,
    CorrectionFrame,
    KeyMode,
    KeySource,
    PadKey,
    apply_local_corrections,
    conjugate_frame,
    decrypt,
    decrypt_measurement,
    encrypt,
    key_uniformity_pvalue,
    reveal_plaintext,
)
from .sim_core import (
    MAX_QUBITS,
    GateInstance,
    GateKind,
    RngStreams,
    StateVector,
    add_qubit,
    apply_gate,
    as_streams,
    bitstring,
    measure_z,
)

logger = logging.getLogger(__name__)

CLIENT = "client"
COMMON_NODE = "common-node"
KEY_SERVER = "key-server"
KEY_ALPHA = 0.01

SERVER_PROFILE = CapabilityProfile(MAX_QUBITS, can_swap_ports=True)


class MessageKind(str, Enum):
    QUBIT_TRANSFER = "QubitTransfer"
    INSTRUCTION = "Instruction"
    MEASURE_REQUEST = "MeasureRequest"
    MEASURE_RESULT = "MeasureResult"
    RELABEL_NOTICE = "RelabelNotice"


@dataclass(frozen=True)
class Message:
    seq: int
    tick: int
    kind: MessageKind
    sender: str
    receiver: str
    payload: dict
    ledger: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "tick": self.tick,
            "kind": self.kind.value,
            "sender": self.sender,
            "receiver": self.receiver,
            "payload": self.payload,
            "ledger": self.ledger,
        }


class Transcript:
    """Append-only message log with a global sequence number and tick clock."""

    def __init__(self) -> None:
        self.messages: list[Message] = []
        self.tick = 0

    def __len__(self) -> int:
        return len(self.messages)

    def advance(self) -> None:
        self.tick += 1

    def append(self, kind: MessageKind, sender: str, receiver: str, payload: dict,
               ledger: dict | None = None) -> Message:
        message = Message(len(self.messages), self.tick, kind, sender, receiver, payload, ledger or {})
        self.messages.append(message)
        return message

    def instructions(self, receiver: str | None = None) -> list[Message]:
        return [
            m for m in self.messages
            if m.kind is MessageKind.INSTRUCTION and (receiver is None or m.receiver == receiver)
        ]

    def server_view(self, name: str) -> dict:
        """Everything the named server saw, and nothing it did not."""
        events = []
        for m in self.messages:
            if name not in (m.sender, m.receiver) or m.kind is MessageKind.RELABEL_NOTICE:
                continue
            events.append({"seq": m.seq, "tick": m.tick, "type": m.kind.value,
                           "from": m.sender, "to": m.receiver, **m.payload})
        return {"server": name, "events": events}

    def server_view_json(self, name: str) -> str:
        return json.dumps(self.server_view(name), sort_keys=True)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(m.to_json(), sort_keys=True) + "\n" for m in self.messages)


class ServerActor:
    """An honest server: applies exactly what it is instructed to."""

    def __init__(self, name: str = "server"):
        self.name = name
        self.held: set[int] = set()
        self.instructed = 0
        self.applied = 0
        self.log: list[dict] = []

    def before_batch(self, state: StateVector, wires: dict[int, int], rng: np.random.Generator) -> StateVector:
        return state

    def apply(self, state: StateVector, gate: GateInstance, role: GateRole,
              rng: np.random.Generator) -> StateVector:
        self.instructed += 1
        self.applied += 1
        return apply_gate(state, gate)


class ClientActor:
    def __init__(self, profile: CapabilityProfile, key_source: KeySource):
        self.name = CLIENT
        self.profile = profile
        self.key_source = key_source
        self.frame = CorrectionFrame()
        self.held: set[int] = set()
        self.max_held = 0

    @property
    def free_slots(self) -> int:
        return self.profile.max_client_qubits - len(self.held)

    def clear_held(self) -> set[int]:
        return {label for label in self.held if not self.frame.is_encrypted(label)}

    def note_holdings(self) -> None:
        if len(self.held) > self.profile.max_client_qubits:
            raise ProtocolViolation(
                f"client holds {len(self.held)} qubits, capacity is {self.profile.max_client_qubits}"
            )
        self.max_held = max(self.max_held, len(self.held))


@dataclass(frozen=True)
class HoldingsPlan:
    retain: frozenset
    request: frozenset
    send: frozenset


class ProtocolRun:
    """State shared by every protocol: circuit, state, transcript and progress."""

    protocol = ""

    def __init__(self, circuit: TaggedCircuit, streams: RngStreams, measure: bool):
        self.source = circuit
        self.circuit = circuit
        self.streams = streams
        self.measure = measure
        self.state = StateVector.empty()
        self.transcript = Transcript()
        self.completed: set[int] = set()
        self.measured: dict[int, int] = {}
        self.wires: dict[int, int] = {}
        self.trap_plan = TrapPlan()

    def wire(self, label: int) -> int:
        return self.wires.setdefault(label, label)

    def wires_of(self, labels: Iterable[int]) -> list[int]:
        return sorted(self.wire(label) for label in labels)

    def ready(self) -> list[int]:
        return [
            uid for uid in range(len(self.circuit))
            if uid not in self.completed
            and all(pred in self.completed for pred in self.circuit.dag.predecessors(uid))
        ]

    def instruct(self, server: ServerActor, uid: int, tagged: TaggedGate,
                 params: Sequence[float] = (), sender: str = CLIENT) -> Message:
        payload = {"gate": tagged.kind.value, "wires": [self.wire(t) for t in tagged.targets],
                   "params": [float(p) for p in params]}
        ledger = {"uid": uid, "labels": list(tagged.targets), "role": tagged.role.value, "tag": tagged.tag.value}
        return self.transcript.append(MessageKind.INSTRUCTION, sender, server.name, payload, ledger)

    def delegable(self, tagged: TaggedGate) -> bool:
        return tagged.kind in SERVER_GATE_KINDS

    def outgoing(self, tagged: TaggedGate) -> GateInstance:
        """The gate the server is told to apply for `tagged`."""
        return tagged.gate

    def conjugate(self, gate: GateInstance) -> None:
        pass

    def census(self, roles: set[GateRole] | None = None) -> int:
        """Instructions sent to servers whose gate role is in `roles` (all when None)."""
        return sum(
            1 for m in self.transcript.instructions()
            if roles is None or GateRole(m.ledger.get("role", GateRole.CIRCUIT.value)) in roles
        )

    def server_names(self) -> list[str]:
        return []

    def summary(self) -> dict:
        raise NotImplementedError

    def result(self) -> "RunResult":
        raise NotImplementedError


def server_parallel_step(run: ProtocolRun, server: ServerActor, uids: Sequence[int]) -> list[Message]:
    """One parallel slot of server work: instruct, apply and track every gate."""
    if not uids:
        return []
    gates = [run.circuit.gates[uid] for uid in uids]
    for tagged in gates:
        if not set(tagged.targets) <= server.held:
            raise ProtocolViolation(f"{server.name} does not hold every target of {tagged.kind.value}")
        if not run.delegable(tagged):
            raise ProtocolViolation(f"{tagged.kind.value} may not be delegated to {server.name}")
    rng = run.streams.stream("adversary")
    run.state = server.before_batch(run.state, {label: run.wire(label) for label in server.held}, rng)
    run.transcript.advance()
    sent = []
    for uid, tagged in zip(uids, gates):
        gate = run.outgoing(tagged)
        sent.append(run.instruct(server, uid, tagged, gate.params))
        run.state = server.apply(run.state, gate, tagged.role, rng)
        run.conjugate(gate)
        run.completed.add(uid)
    return sent


@dataclass
class RunResult:
    run: ProtocolRun
    state: StateVector | None
    bits: dict[int, int] | None

    @property
    def transcript(self) -> Transcript:
        return self.run.transcript

    @property
    def summary(self) -> dict:
        return self.run.summary()

    def outcome(self, labels: Sequence[int] | None = None) -> str:
        if self.bits is None:
            raise BadArgument("statevector runs have no measured outcome")
        return bitstring(self.bits, labels)

    def server_views(self) -> dict[str, dict]:
        return {name: self.transcript.server_view(name) for name in self.run.server_names()}


class DelegationRun(ProtocolRun):
    """Protocols 2 and 3: a client of M qubits working with one server.

    Scheduling never looks at keys, angles or measurement outcomes, so the
    server's view depends only on the circuit shape, the profile and the
    shuffle stream.
    """

    def __init__(
        self,
        circuit: TaggedCircuit,
        profile: CapabilityProfile,
        streams: RngStreams,
        *,
        protocol: str = "p2",
        measure: bool = False,
        trap_density: float = 0.0,
        shuffle: bool | None = None,
        behavior=None,
        key_mode: KeyMode | str = KeyMode.PROTOCOL1_LITERAL,
        angle_splits: int = 2,
    ):
        if protocol not in ("p2", "p3"):
            raise BadArgument(f"unknown delegation protocol {protocol!r}")
        super().__init__(circuit, streams, measure)
        self.protocol = protocol
        self.profile = profile
        if profile.max_client_qubits < 1:
            raise CircuitUnsupportedByProfile("a client without qubits needs Protocol 4")
        if protocol == "p2" and not profile.multiqubit_allowed:
            raise CircuitUnsupportedByProfile("Protocol 2 needs a client that can run multi-qubit gates")
        if protocol == "p3" and profile.multiqubit_allowed:
            raise BadArgument("Protocol 3 is for clients limited to one-qubit gates")
        if shuffle is None:
            shuffle = protocol == "p3" and bool(profile.can_swap_ports)
        if shuffle and not profile.can_swap_ports:
            raise BadArgument("this client cannot mix ports, so qubits cannot be shuffled")
        self.shuffle = shuffle

        prepared = decompose_rzz(circuit)
        if protocol == "p3":
            prepared = decompose_toffoli(prepared)
            prepared, self.trap_plan = insert_traps(prepared, trap_density, streams.stream("traps"))
            hidden = any(g.tag is PrivacyTag.PRIVATE_STRUCTURE and g.arity > 1 for g in prepared.gates)
            if hidden and trap_density == 0:
                logger.warning("private-structure gates go to the server with no traps to hide them")
            if any(self._delegated_rotation(g) for g in prepared.gates):
                if angle_splits < 2:
                    raise BadArgument("rotations the client cannot run need at least two angle shares")
                prepared = expand_angle_splits(prepared, angle_splits, streams.stream("splits"),
                                               select=self._delegated_rotation)
        elif trap_density:
            logger.warning("trap insertion only applies to Protocol 3; ignoring density %.3f", trap_density)
        self.circuit = prepared
        self.oblivious = protocol == "p3" and any(
            g.tag is PrivacyTag.PRIVATE_STRUCTURE or self._delegated_rotation(g) for g in prepared.gates
        )

        self.client = ClientActor(profile, KeySource(key_mode, streams.stream("keys")))
        server = ServerActor("server")
        self.server = behavior.wrap(server, streams.stream("adversary-plan")) if behavior else server
        self.tainted: list[frozenset[int]] = []
        self.retired: set[int] = set()
        self.born: set[int] = set()
        self.sends = 0
        self.receives = 0
        self.rounds = 0
        self._validate()

    @property
    def capacity(self) -> int:
        return self.profile.max_client_qubits

    def server_names(self) -> list[str]:
        return [self.server.name]

    def conjugate(self, gate: GateInstance) -> None:
        if gate.kind in SPLITTABLE_KINDS:
            return
        self.client.frame = conjugate_frame(self.client.frame, gate)

    def delegable(self, tagged: TaggedGate) -> bool:
        return tagged.kind in SERVER_GATE_KINDS or self._delegated_rotation(tagged)

    def outgoing(self, tagged: TaggedGate) -> GateInstance:
        """Angle shares are sent with the sign that undoes the pad.

        X^a Z^b commutes past RZ(t) as RZ((-1)^a t), past RX(t) as
        RX((-1)^b t) and past RY(t) as RY((-1)^(a+b) t).
        """
        if not self._delegated_rotation(tagged):
            return tagged.gate
        label = tagged.targets[0]
        if self.client.frame.pending_on([label]):
            raise ProtocolViolation(f"qubit {label} has pending corrections; its pad sign is unknown")
        key = self.client.frame.key(label)
        flip = {GateKind.RZ: key.a, GateKind.RX: key.b, GateKind.RY: key.a ^ key.b}[tagged.kind]
        angle = tagged.gate.params[0]
        return GateInstance(tagged.kind, tagged.targets, (float((-angle if flip else angle) % TWO_PI),))

    def _client_can(self, tagged: TaggedGate) -> bool:
        return self.profile.permits(tagged.gate)

    def _delegated_rotation(self, tagged: TaggedGate) -> bool:
        """A private one-qubit rotation the client cannot run; the server gets it as shares."""
        return (
            self.protocol == "p3"
            and tagged.tag is PrivacyTag.PRIVATE_ANGLE
            and tagged.kind in SPLITTABLE_KINDS
            and not self._client_can(tagged)
        )

    def _server_can(self, tagged: TaggedGate) -> bool:
        if self._delegated_rotation(tagged):
            return True
        if tagged.kind not in SERVER_GATE_KINDS:
            return False
        if self.protocol == "p2":
            return tagged.tag is PrivacyTag.PUBLIC
        if tagged.arity > 1:
            return True
        return tagged.tag is PrivacyTag.PUBLIC and not self._client_can(tagged)

    def _validate(self) -> None:
        for uid, tagged in enumerate(self.circuit.gates):
            client_ok, server_ok = self._client_can(tagged), self._server_can(tagged)
            if not (client_ok or server_ok):
                raise CircuitUnsupportedByProfile(
                    f"gate {uid} ({tagged.kind.value}, {tagged.tag.value}) can be run by neither side"
                )
            if server_ok and tagged.kind in NON_CLIFFORD_KINDS and self.capacity < 2:
                raise CircuitUnsupportedByProfile(
                    f"{tagged.kind.value} on the server leaves two-qubit corrections; the client needs M >= 2"
                )

    # -- bookkeeping -------------------------------------------------------

    def _tainted_labels(self) -> set[int]:
        return set().union(*self.tainted) if self.tainted else set()

    def _finished(self) -> set[int]:
        return {
            label for label in self.born
            if all(uid in self.completed for uid in self.circuit.uses(label))
        }

    def _progress(self) -> tuple[int, int]:
        return len(self.completed), len(self.measured)

    def _done(self) -> bool:
        if len(self.completed) != len(self.circuit):
            return False
        return not self.measure or len(self.measured) == self.circuit.n_qubits

    def _remaining_uses(self, label: int) -> list[int]:
        return [uid for uid in self.circuit.uses(label) if uid not in self.completed]

    def _runnable_in_place(self, tagged: TaggedGate) -> bool:
        targets = set(tagged.targets)
        if self._client_can(tagged) and targets <= self.client.clear_held():
            return True
        available = self.server.held - self._tainted_labels()
        return self._server_can(tagged) and targets <= available

    # -- qubit movement ----------------------------------------------------

    def _generate(self, labels: Sequence[int]) -> None:
        if len(self.client.held) + len(labels) > self.capacity:
            raise ProtocolViolation("not enough free client qubits to generate a group")
        for label in labels:
            self.state = add_qubit(self.state, label)
            self.client.held.add(label)
            self.born.add(label)
        self.client.note_holdings()

    def _reshuffle(self, labels: Sequence[int]) -> None:
        mapping = plan_swap_shuffle([self.wire(label) for label in labels], self.streams.stream("shuffle"))
        for label in labels:
            self.wires[label] = mapping[self.wires[label]]
        self.transcript.append(MessageKind.RELABEL_NOTICE, CLIENT, CLIENT, {},
                               {"mapping": {str(k): v for k, v in sorted(mapping.items())}})

    def _send(self, labels: Iterable[int]) -> None:
        labels = sorted(labels)
        if not labels:
            return
        client = self.client
        for label in labels:
            if not client.frame.is_encrypted(label):
                key = client.key_source.take(free_slots=client.free_slots)
                self.state = encrypt(self.state, label, key)
                client.frame = client.frame.with_pad(label, key)
        if self.shuffle:
            self._reshuffle(labels)
        self.transcript.advance()
        self.transcript.append(MessageKind.QUBIT_TRANSFER, CLIENT, self.server.name,
                               {"wires": self.wires_of(labels)}, {"labels": labels})
        client.held.difference_update(labels)
        self.server.held.update(labels)
        self.sends += len(labels)
        client.key_source.replenish(client.free_slots)

    def _receive(self, labels: Iterable[int]) -> None:
        labels = sorted(labels)
        if not labels:
            return
        missing = set(labels) - self.server.held
        if missing:
            raise ProtocolViolation(f"server does not hold requested qubits {sorted(missing)}")
        self.transcript.advance()
        self.transcript.append(MessageKind.QUBIT_TRANSFER, self.server.name, CLIENT,
                               {"wires": self.wires_of(labels)}, {"labels": labels})
        self.server.held.difference_update(labels)
        self.client.held.update(labels)
        self.client.note_holdings()
        self.receives += len(labels)
        self._settle()

    def _settle(self) -> None:
        """Apply local corrections, then decrypt every held qubit that has none left."""
        client = self.client
        self.state, client.frame = apply_local_corrections(self.state, client.frame, client.held)
        for label in sorted(client.held):
            if client.frame.is_encrypted(label) and not client.frame.pending_on([label]):
                self.state, client.frame = decrypt(self.state, [label], client.frame)

    def _hold_exactly(self, labels: set[int]) -> None:
        self._send(self.client.held - labels)
        self._receive(labels - self.client.held)

    # -- execution ---------------------------------------------------------

    def _client_sweep(self) -> int:
        frontier = ready_frontier(self.circuit, self.completed, self.client.clear_held(), self.profile)
        for uid in frontier:
            self.state = apply_gate(self.state, self.circuit.gates[uid].gate)
            self.completed.add(uid)
        return len(frontier)

    def _server_sweep(self) -> int:
        count = 0
        while True:
            available = self.server.held - self._tainted_labels()
            frontier = ready_frontier(self.circuit, self.completed, available, SERVER_PROFILE,
                                      permits=self._server_can)
            if not frontier:
                return count
            batch = []
            for uid in frontier:
                batch.append(uid)
                if self.circuit.gates[uid].kind in NON_CLIFFORD_KINDS:
                    break
            server_parallel_step(self, self.server, batch)
            for uid in batch:
                tagged = self.circuit.gates[uid]
                if tagged.kind in NON_CLIFFORD_KINDS:
                    self.tainted.append(frozenset(tagged.targets))
            count += len(batch)

    def _resolve_taint(self) -> None:
        """Clear corrections left by server-side Toffoli-family gates.

        The schedule depends only on which qubits the gate touched: the client
        co-holds the whole set when it fits, otherwise every pair in turn.
        """
        while self.tainted:
            members = sorted(self.tainted.pop(0) - self.retired)
            if len(members) <= self.capacity:
                groups = [members]
            else:
                groups = [list(pair) for pair in combinations(members, 2)]
            for group in groups:
                self._hold_exactly(set(group))
            leftover = self.client.frame.pending_on(members)
            if leftover:
                raise SchedulerStuck(f"corrections on {members} could not be resolved")

    def _measure_finished(self, server_side: bool = True) -> int:
        if not self.measure:
            return 0
        client, frame = self.client, self.client.frame
        tainted = self._tainted_labels()
        count = 0
        for label in sorted(self._finished() - set(self.measured)):
            if label in client.held and not frame.is_encrypted(label) and self.profile.can_measure:
                self.state, record = measure_z(self.state, label, self.streams.stream("measure"))
                self.measured[label] = record.outcome
                client.held.discard(label)
            elif server_side and label in self.server.held and label not in tainted:
                wire = self.wire(label)
                self.transcript.advance()
                self.transcript.append(MessageKind.MEASURE_REQUEST, CLIENT, self.server.name,
                                       {"wires": [wire]}, {"labels": [label]})
                self.state, record = measure_z(self.state, label, self.streams.stream("measure"))
                plain = decrypt_measurement(record.outcome, client.frame.key(label),
                                            client.frame.pending_on([label]))
                self.transcript.append(MessageKind.MEASURE_RESULT, self.server.name, CLIENT,
                                       {"wire": wire, "outcome": record.outcome},
                                       {"label": label, "plaintext": plain})
                self.measured[label] = plain
                self.server.held.discard(label)
                client.frame = client.frame.forget(label)
            else:
                continue
            frame = client.frame
            self.retired.add(label)
            count += 1
        return count

    def _advance(self) -> None:
        while True:
            before = self._progress()
            self._client_sweep()
            self._measure_finished()
            self._server_sweep()
            self._resolve_taint()
            self._measure_finished()
            if self._progress() == before:
                return

    def _retention(self, last_group: Sequence[int]) -> set[int]:
        limit = self.capacity - len(last_group)
        if limit <= 0:
            return set()
        last = set(last_group)
        candidates = [
            label for label in sorted(self.client.held)
            if any(last & set(self.circuit.gates[uid].targets) for uid in self._remaining_uses(label))
        ]
        return set(candidates[:limit])

    def _interacting_at_server(self, limit: int) -> list[int]:
        if limit <= 0:
            return []
        first_use: dict[int, int] = {}
        for label in sorted(self.server.held - self._tainted_labels()):
            for uid in self._remaining_uses(label):
                tagged = self.circuit.gates[uid]
                if not self._client_can(tagged):
                    continue
                if self.protocol == "p2" and not set(tagged.targets) & self.client.held:
                    continue
                first_use[label] = uid
                break
        ranked = sorted(first_use, key=lambda label: (first_use[label], label))
        return ranked[:limit]

    def _initial_rounds(self) -> None:
        labels = list(self.circuit.labels)
        if not labels:
            return
        m = self.capacity
        groups = [labels[i:i + m] for i in range(0, len(labels), m)]
        kept = 0
        for index, group in enumerate(groups[:-1]):
            self._generate(group)
            self._client_sweep()
            self._measure_finished()
            retain = self._retention(groups[-1]) if index == len(groups) - 2 else set()
            kept = len(retain)
            self._send(self.client.held - retain)
            self._server_sweep()
            self._resolve_taint()
            self._measure_finished()
            self._send(self.client.held - retain)
            self.rounds += 1
        self._generate(groups[-1])
        room = m - len(self.client.held)
        if len(groups) > 1:
            logger.info(
                "last round requests up to %d qubits; the Q*M - N - P count would give %d",
                room, len(groups) * m - len(labels) - kept,
            )
        self._receive(self._interacting_at_server(room))
        self._advance()
        self.rounds += 1

    def _plan_exchange(self) -> HoldingsPlan:
        held = set(self.client.held)
        needed: set[int] = set()
        lead = None
        for uid in self.ready():
            tagged = self.circuit.gates[uid]
            if self._runnable_in_place(tagged):
                continue
            targets = set(tagged.targets)
            if self._client_can(tagged):
                if lead is None:
                    lead, needed = uid, set(targets)
                elif len(needed | targets) <= self.capacity:
                    needed |= targets
            elif lead is None:
                push = held & targets
                return HoldingsPlan(frozenset(held - push), frozenset(), frozenset(push))

        def next_use(label: int) -> float:
            remaining = self._remaining_uses(label)
            return remaining[0] if remaining else math.inf

        for label in sorted(held - needed, key=lambda q: (next_use(q), q)):
            if len(needed) >= self.capacity:
                break
            if any(self._client_can(self.circuit.gates[uid]) for uid in self._remaining_uses(label)):
                needed.add(label)
        return HoldingsPlan(frozenset(held & needed), frozenset(needed - held), frozenset(held - needed))

    def _apply_plan(self, plan: HoldingsPlan) -> None:
        self._send(plan.send)
        self._receive(plan.request)
        self.rounds += 1

    def _client_pass(self, groups: Sequence[Sequence[int]], final: bool = False) -> None:
        for group in groups:
            self._receive(group)
            self._client_sweep()
            if final:
                self._measure_finished(server_side=False)
            self._send(label for label in group if label in self.client.held)

    def _oblivious_schedule(self) -> None:
        """Fixed exchange pattern for hidden structure and delegated rotations.

        Qubits live at the server in fixed groups of M. Before every server
        gate each group makes a round trip through the client, which runs the
        one-qubit gates that are ready, so transfers and instructions depend
        only on the server-side gate list. Consecutive angle shares on a qubit
        are always split by a round trip and a fresh pad.
        """
        labels = list(self.circuit.labels)
        m = self.capacity
        groups = [labels[i:i + m] for i in range(0, len(labels), m)]
        for group in groups:
            self._generate(group)
            self._send(group)
        for uid, tagged in enumerate(self.circuit.gates):
            if self._client_can(tagged):
                continue
            self._client_pass(groups)
            if not all(pred in self.completed for pred in self.circuit.predecessors(uid)):
                raise SchedulerStuck(f"server gate {uid} ({tagged.kind.value}) is not ready in its turn")
            server_parallel_step(self, self.server, [uid])
            self.rounds += 1
        self._client_pass(groups, final=True)
        self._measure_finished()
        self.rounds += 1
        if not self._done():
            raise SchedulerStuck(f"{len(self.circuit) - len(self.completed)} gates left after the last pass")

    def execute(self) -> "DelegationRun":
        if self.oblivious:
            self._oblivious_schedule()
            logger.debug("%s finished on the fixed schedule: %s", self.protocol, self.summary())
            return self
        self._initial_rounds()
        while not self._done():
            before = self._progress()
            self._apply_plan(self._plan_exchange())
            self._advance()
            if self._progress() == before:
                raise SchedulerStuck(
                    f"no progress with {len(self.circuit) - len(self.completed)} gates left "
                    f"and {self.circuit.n_qubits - len(self.measured)} qubits unmeasured"
                )
        logger.debug("%s finished: %s", self.protocol, self.summary())
        return self

    def plaintext_state(self) -> StateVector:
        return reveal_plaintext(self.state, self.client.frame)

    def summary(self) -> dict:
        return {
            "protocol": self.protocol,
            "qubits": self.circuit.n_qubits,
            "gates": len(self.circuit),
            "traps": len(self.trap_plan),
            "sends": self.sends,
            "receives": self.receives,
            "rounds": self.rounds,
            "max_client_holdings": self.client.max_held,
            "ticks": self.transcript.tick,
            "messages": len(self.transcript),
            "instructions": len(self.transcript.instructions()),
            "server_applied": self.server.applied,
            "key_fallbacks": self.client.key_source.fallbacks,
            "shuffle": self.shuffle,
            "oblivious": self.oblivious,
        }

    def result(self) -> RunResult:
        if self.measure:
            return RunResult(self, None, dict(sorted(self.measured.items())))
        return RunResult(self, self.plaintext_state(), None)


class ZeroClientRun(ProtocolRun):
    """Protocol 4: two servers, a relay node and a client holding no qubits.

    Server 1 creates every qubit. Each private rotation is split in two shares
    applied on different servers; between shares the relay permutes wires and
    tells only the client how. One server pads the result with dealt keys and
    the other measures it.
    """

    protocol = "p4"

    def __init__(
        self,
        circuit: TaggedCircuit,
        streams: RngStreams,
        *,
        measure: bool = True,
        trap_density: float = 0.0,
        key_mode: KeyMode | str = KeyMode.PREGENERATED_POOL,
    ):
        super().__init__(circuit, streams, measure)
        prepared = decompose_rzz(circuit)
        prepared, self.trap_plan = insert_traps(prepared, trap_density, streams.stream("traps"))
        if trap_density == 0 and any(g.tag is PrivacyTag.PRIVATE_STRUCTURE for g in prepared.gates):
            logger.warning("private-structure gates go to the servers as public ones with no traps to hide them")
        for uid, tagged in enumerate(prepared.gates):
            if tagged.tag is PrivacyTag.PRIVATE_ANGLE and tagged.kind not in SPLITTABLE_KINDS:
                raise CircuitUnsupportedByProfile(f"gate {uid} ({tagged.kind.value}) has no angle to split")
        self.circuit = prepared
        self.servers = (ServerActor("server1"), ServerActor("server2"))
        self.current = 0
        self.dealer = KeySource(key_mode, streams.stream("keys"))
        self.shares: dict[int, tuple[float, float]] = {}
        self.pads: dict[int, PadKey] = {}
        self.hops = 0
        self.client_holdings = 0

    def server_names(self) -> list[str]:
        return [server.name for server in self.servers]

    def _batch(self, server: ServerActor, items: Sequence[tuple[int, TaggedGate, tuple]],
               sender: str = CLIENT) -> None:
        rng = self.streams.stream("adversary")
        self.state = server.before_batch(self.state, {q: self.wire(q) for q in server.held}, rng)
        self.transcript.advance()
        for uid, tagged, params in items:
            self.instruct(server, uid, tagged, params, sender)
            self.state = server.apply(self.state, tagged.gate, tagged.role, rng)

    def _public_phase(self, server: ServerActor) -> None:
        while True:
            frontier = ready_frontier(self.circuit, self.completed, server.held, SERVER_PROFILE,
                                      permits=lambda tagged: tagged.tag is not PrivacyTag.PRIVATE_ANGLE)
            if not frontier:
                return
            items = [(uid, self.circuit.gates[uid], self.circuit.gates[uid].gate.params) for uid in frontier]
            self._batch(server, items)
            self.completed.update(frontier)

    def _share(self, uid: int, angle: float) -> tuple[int, TaggedGate, tuple]:
        tagged = self.circuit.gates[uid]
        piece = GateInstance(tagged.kind, tagged.targets, (angle,))
        return uid, TaggedGate(piece, tagged.tag, tagged.role), (angle,)

    def _hop(self) -> None:
        source = self.servers[self.current]
        target = self.servers[1 - self.current]
        labels = sorted(source.held)
        self.transcript.advance()
        self.transcript.append(MessageKind.QUBIT_TRANSFER, source.name, COMMON_NODE,
                               {"wires": self.wires_of(labels)}, {"labels": labels})
        mapping = plan_swap_shuffle([self.wire(label) for label in labels], self.streams.stream("shuffle"))
        for label in labels:
            self.wires[label] = mapping[self.wires[label]]
        self.transcript.append(MessageKind.RELABEL_NOTICE, COMMON_NODE, CLIENT,
                               {"mapping": {str(k): v for k, v in sorted(mapping.items())}})
        self.transcript.advance()
        self.transcript.append(MessageKind.QUBIT_TRANSFER, COMMON_NODE, target.name,
                               {"wires": self.wires_of(labels)}, {"labels": labels})
        source.held = set()
        target.held = set(labels)
        self.current = 1 - self.current
        self.hops += 1

    def _deal_keys(self, count: int) -> list[int]:
        for _ in range(16):
            bits = self.dealer.take_bits(count, free_slots=2)
            pvalue = key_uniformity_pvalue(bits)
            if pvalue >= KEY_ALPHA:
                return bits
            logger.warning("dealt key pool failed the uniformity check (p=%.4f); redrawing", pvalue)
        raise ProtocolViolation("key dealer could not produce a uniform key pool")

    def _encrypt_and_measure(self) -> None:
        holder = self.servers[self.current]
        labels = sorted(holder.held)
        bits = self._deal_keys(2 * len(labels))
        items = []
        for index, label in enumerate(labels):
            key = PadKey(bits[2 * index], bits[2 * index + 1])
            self.pads[label] = key
            if key.b:
                items.append((-1, TaggedGate(GateInstance(GateKind.Z, (label,))), ()))
            if key.a:
                items.append((-1, TaggedGate(GateInstance(GateKind.X, (label,))), ()))
        self._batch(holder, items, sender=KEY_SERVER)
        self._hop()
        measurer = self.servers[self.current]
        self.transcript.advance()
        self.transcript.append(MessageKind.MEASURE_REQUEST, CLIENT, measurer.name,
                               {"wires": self.wires_of(labels)})
        outcomes = {}
        for label in labels:
            self.state, record = measure_z(self.state, label, self.streams.stream("measure"))
            outcomes[str(self.wire(label))] = record.outcome
            self.measured[label] = decrypt_measurement(record.outcome, self.pads[label])
        self.transcript.append(MessageKind.MEASURE_RESULT, measurer.name, CLIENT, {"outcomes": outcomes},
                               {"plaintext": {str(k): v for k, v in sorted(self.measured.items())}})
        measurer.held = set()

    def execute(self) -> "ZeroClientRun":
        first = self.servers[0]
        for label in self.circuit.labels:
            self.state = add_qubit(self.state, label)
        first.held = set(self.circuit.labels)
        in_flight: dict[int, float] = {}
        rng = self.streams.stream("shares")
        while True:
            server = self.servers[self.current]
            if in_flight:
                self._batch(server, [self._share(uid, angle) for uid, angle in sorted(in_flight.items())])
                self.completed.update(in_flight)
                in_flight = {}
            self._public_phase(server)
            private = [uid for uid in self.ready() if self.circuit.gates[uid].tag is PrivacyTag.PRIVATE_ANGLE]
            if not private:
                break
            items = []
            for uid in private:
                first_share, second_share = split_angle(self.circuit.gates[uid].gate.params[0], 2, rng)
                self.shares[uid] = (first_share, second_share)
                in_flight[uid] = second_share
                items.append(self._share(uid, first_share))
            self._batch(server, items)
            self._hop()
        if len(self.completed) != len(self.circuit):
            raise SchedulerStuck(f"{len(self.circuit) - len(self.completed)} gates could not be scheduled")
        if self.measure:
            self._encrypt_and_measure()
        return self

    def summary(self) -> dict:
        return {
            "protocol": self.protocol,
            "qubits": self.circuit.n_qubits,
            "gates": len(self.circuit),
            "traps": len(self.trap_plan),
            "hops": self.hops,
            "split_rotations": len(self.shares),
            "max_client_holdings": self.client_holdings,
            "ticks": self.transcript.tick,
            "messages": len(self.transcript),
            "instructions": len(self.transcript.instructions()),
            "key_fallbacks": self.dealer.fallbacks,
        }

    def result(self) -> RunResult:
        if self.measure:
            return RunResult(self, None, dict(sorted(self.measured.items())))
        return RunResult(self, self.state, None)


def _with_census(behavior, dry_run: Callable[[], ProtocolRun]):
    """Give a gate-dropping behavior the number of instructions it can choose from."""
    if behavior is None or not getattr(behavior, "needs_census", False):
        return behavior
    return behavior.with_census(dry_run().execute().census(behavior.roles))


def run_protocol2(
    circuit: TaggedCircuit,
    profile: CapabilityProfile,
    rng: RngStreams | int,
    *,
    measure: bool = False,
    behavior=None,
    shuffle: bool | None = None,
    key_mode: KeyMode | str = KeyMode.PROTOCOL1_LITERAL,
) -> RunResult:
    streams = as_streams(rng)
    options = dict(protocol="p2", measure=measure, shuffle=shuffle, key_mode=key_mode)
    behavior = _with_census(behavior, lambda: DelegationRun(circuit, profile, streams.fresh(), **options))
    return DelegationRun(circuit, profile, streams, behavior=behavior, **options).execute().result()


def run_protocol3(
    circuit: TaggedCircuit,
    profile: CapabilityProfile,
    rng: RngStreams | int,
    *,
    trap_density: float = 0.0,
    measure: bool = False,
    behavior=None,
    shuffle: bool | None = None,
    key_mode: KeyMode | str = KeyMode.PROTOCOL1_LITERAL,
    angle_splits: int = 2,
) -> RunResult:
    streams = as_streams(rng)
    options = dict(protocol="p3", measure=measure, shuffle=shuffle, key_mode=key_mode,
                   trap_density=trap_density, angle_splits=angle_splits)
    behavior = _with_census(behavior, lambda: DelegationRun(circuit, profile, streams.fresh(), **options))
    return DelegationRun(circuit, profile, streams, behavior=behavior, **options).execute().result()


def run_protocol4(
    circuit: TaggedCircuit,
    rng: RngStreams | int,
    *,
    measure: bool = True,
    trap_density: float = 0.0,
    key_mode: KeyMode | str = KeyMode.PREGENERATED_POOL,
) -> RunResult:
    streams = as_streams(rng)
    run = ZeroClientRun(circuit, streams, measure=measure, trap_density=trap_density, key_mode=key_mode)
    return run.execute().result()


PROTOCOLS = ("p2", "p3", "p4")


def run_protocol(protocol: str, circuit: TaggedCircuit, profile: CapabilityProfile | None,
                 rng: RngStreams | int, **options) -> RunResult:
    """Dispatch on protocol name; options pass through to the protocol runner."""
    if protocol == "p2":
        return run_protocol2(circuit, profile, rng, **options)
    if protocol == "p3":
        return run_protocol3(circuit, profile, rng, **options)
    if protocol == "p4":
        if options.pop("behavior", None) is not None:
            raise BadArgument("server behaviors are exercised under Protocols 2 and 3 only")
        options.pop("shuffle", None)
        return run_protocol4(circuit, rng, **options)
    raise BadArgument(f"unknown protocol {protocol!r}; expected one of {', '.join(PROTOCOLS)}")


def _one_shot(protocol: str, circuit: TaggedCircuit, profile: CapabilityProfile | None, seed: int,
              options: dict, index: int) -> str:
    streams = RngStreams(seed).child("shot", index)
    return run_protocol(protocol, circuit, profile, streams, measure=True, **options).outcome()


def sample_outcomes(
    protocol: str,
    circuit: TaggedCircuit,
    profile: CapabilityProfile | None,
    seed: int,
    shots: int,
    jobs: int = 1,
    **options,
) -> Counter:
    """Outcome counts over independent measured runs, one RNG child per shot."""
    if shots < 0:
        raise BadArgument("shots must be non-negative")
    worker = partial(_one_shot, protocol, circuit, profile, seed, options)
    if jobs > 1 and shots > 1:
        with multiprocessing.Pool(jobs) as pool:
            outcomes = pool.map(worker, range(shots))
    else:
        outcomes = [worker(index) for index in range(shots)]
    return Counter(outcomes)
