"""
Tagged circuits and the rewriting passes that prepare them for delegation.

A TaggedCircuit is a gate list plus a dependency DAG (networkx) with one edge
from the previous gate on each target qubit. Passes never mutate their input.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

import networkx as nx
import numpy as np

from .errors import BadArgument, BadGate, UnknownQubit
from .sim_core import (
    SINGLE_QUBIT_KINDS,
    GateInstance,
    GateKind,
    StateVector,
    apply_gate,
)

logger = logging.getLogger(__name__)

TWO_PI = 2 * math.pi
SPLITTABLE_KINDS = frozenset({GateKind.RX, GateKind.RY, GateKind.RZ})


class PrivacyTag(str, Enum):
    PUBLIC = "public"
    PRIVATE_ANGLE = "private-angle"
    PRIVATE_STRUCTURE = "private-structure"


class GateRole(str, Enum):
    CIRCUIT = "circuit"
    TRAP = "trap"
    MARKER = "marker"
    VERIFIER = "verifier"


@dataclass(frozen=True)
class TaggedGate:
    gate: GateInstance
    tag: PrivacyTag = PrivacyTag.PUBLIC
    role: GateRole = GateRole.CIRCUIT

    def __post_init__(self) -> None:
        object.__setattr__(self, "tag", PrivacyTag(self.tag))
        object.__setattr__(self, "role", GateRole(self.role))

    @property
    def kind(self) -> GateKind:
        return self.gate.kind

    @property
    def targets(self) -> tuple[int, ...]:
        return self.gate.targets

    @property
    def arity(self) -> int:
        return self.gate.kind.arity

    def to_json(self) -> dict:
        data = self.gate.to_json()
        data["tag"] = self.tag.value
        if self.role is not GateRole.CIRCUIT:
            data["role"] = self.role.value
        return data

    @classmethod
    def from_json(cls, data: dict) -> "TaggedGate":
        try:
            return cls(
                GateInstance.from_json(data),
                PrivacyTag(data.get("tag", PrivacyTag.PUBLIC.value)),
                GateRole(data.get("role", GateRole.CIRCUIT.value)),
            )
        except ValueError as exc:
            raise BadGate(f"malformed tagged gate {data!r}") from exc


def op(kind: str, *targets: int, params: Sequence[float] = (), tag=PrivacyTag.PUBLIC,
       role=GateRole.CIRCUIT) -> TaggedGate:
    return TaggedGate(GateInstance(kind, tuple(targets), tuple(params)), tag, role)


class TaggedCircuit:
    """An ordered gate list over labeled qubits with its dependency DAG."""

    def __init__(self, labels: Iterable[int] | int, gates: Sequence[TaggedGate]):
        if isinstance(labels, int):
            labels = range(labels)
        self.labels: tuple[int, ...] = tuple(sorted(int(label) for label in labels))
        if len(set(self.labels)) != len(self.labels):
            raise BadArgument(f"repeated circuit labels {self.labels}")
        self.gates: tuple[TaggedGate, ...] = tuple(gates)
        known = set(self.labels)
        for tagged in self.gates:
            missing = set(tagged.targets) - known
            if missing:
                raise UnknownQubit(f"gate {tagged.kind.value} targets unknown qubits {sorted(missing)}")
        self.dag = self._build_dag()
        self._uses: dict[int, list[int]] = {label: [] for label in self.labels}
        for uid, tagged in enumerate(self.gates):
            for target in tagged.targets:
                self._uses[target].append(uid)

    def _build_dag(self) -> nx.DiGraph:
        dag = nx.DiGraph()
        dag.add_nodes_from(range(len(self.gates)))
        last: dict[int, int] = {}
        for uid, tagged in enumerate(self.gates):
            for target in tagged.targets:
                if target in last:
                    dag.add_edge(last[target], uid)
                last[target] = uid
        assert nx.is_directed_acyclic_graph(dag)
        return dag

    @property
    def n_qubits(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.gates)

    def predecessors(self, uid: int) -> list[int]:
        return list(self.dag.predecessors(uid))

    def uses(self, label: int) -> list[int]:
        """Gate indices touching a qubit, in circuit order."""
        return self._uses[label]

    def kind_histogram(self) -> Counter:
        return Counter(tagged.kind.value for tagged in self.gates)

    def simulate(self, state: StateVector | None = None) -> StateVector:
        """Reference simulation from |0...0> (or a given state)."""
        state = StateVector.zeros(self.labels) if state is None else state
        for tagged in self.gates:
            state = apply_gate(state, tagged.gate)
        return state

    def unitary(self) -> np.ndarray:
        """Dense unitary, first label least significant. Small circuits only."""
        dim = 2 ** self.n_qubits
        columns = []
        for index in range(dim):
            amplitudes = np.zeros(dim, dtype=complex)
            amplitudes[index] = 1
            state = StateVector(amplitudes, self.labels)
            columns.append(self.simulate(state).amplitudes)
        return np.stack(columns, axis=1)

    def to_json(self) -> dict:
        return {"labels": list(self.labels), "gates": [tagged.to_json() for tagged in self.gates]}

    @classmethod
    def from_json(cls, data: dict) -> "TaggedCircuit":
        if not isinstance(data, dict) or "gates" not in data:
            raise BadArgument("circuit JSON needs a 'gates' list")
        labels = data.get("labels", data.get("n_qubits"))
        if labels is None:
            raise BadArgument("circuit JSON needs 'labels' or 'n_qubits'")
        return cls(labels, [TaggedGate.from_json(item) for item in data["gates"]])

    @classmethod
    def load(cls, path) -> "TaggedCircuit":
        with open(path, "r", encoding="utf-8") as handle:
            try:
                return cls.from_json(json.load(handle))
            except json.JSONDecodeError as exc:
                raise BadArgument(f"{path} is not valid JSON: {exc}") from exc

    def __repr__(self) -> str:
        return f"TaggedCircuit(labels={self.labels}, gates={len(self.gates)})"


@dataclass(frozen=True)
class CapabilityProfile:
    """What the client can do locally."""

    max_client_qubits: int
    multiqubit_allowed: bool = True
    allowed_single_qubit_gates: frozenset = field(default_factory=lambda: SINGLE_QUBIT_KINDS)
    can_measure: bool = True
    can_swap_ports: bool | None = None

    def __post_init__(self) -> None:
        if self.max_client_qubits < 0:
            raise BadArgument("max_client_qubits must be non-negative")
        try:
            kinds = frozenset(GateKind(kind) for kind in self.allowed_single_qubit_gates)
        except ValueError as exc:
            raise BadArgument(f"unknown gate kind in profile: {exc}") from exc
        if any(kind.arity != 1 for kind in kinds):
            raise BadArgument("allowed_single_qubit_gates may only list one-qubit kinds")
        object.__setattr__(self, "allowed_single_qubit_gates", kinds)
        if self.can_swap_ports is None:
            object.__setattr__(self, "can_swap_ports", self.max_client_qubits >= 2)

    @classmethod
    def full(cls, max_client_qubits: int) -> "CapabilityProfile":
        return cls(max_client_qubits)

    @classmethod
    def one_qubit_gates(cls, max_client_qubits: int) -> "CapabilityProfile":
        return cls(max_client_qubits, multiqubit_allowed=False)

    @classmethod
    def partial(cls, max_client_qubits: int, kinds: Iterable[str] = ("X", "Z")) -> "CapabilityProfile":
        return cls(max_client_qubits, multiqubit_allowed=False, allowed_single_qubit_gates=frozenset(kinds))

    @classmethod
    def zero(cls) -> "CapabilityProfile":
        return cls(0, multiqubit_allowed=False, allowed_single_qubit_gates=frozenset(),
                   can_measure=False, can_swap_ports=False)

    def permits(self, gate: GateInstance) -> bool:
        if gate.kind.arity == 1:
            return gate.kind in self.allowed_single_qubit_gates and self.max_client_qubits >= 1
        return self.multiqubit_allowed and gate.kind.arity <= self.max_client_qubits

    def to_json(self) -> dict:
        return {
            "max_client_qubits": self.max_client_qubits,
            "multiqubit_allowed": self.multiqubit_allowed,
            "allowed_single_qubit_gates": sorted(kind.value for kind in self.allowed_single_qubit_gates),
            "can_measure": self.can_measure,
            "can_swap_ports": self.can_swap_ports,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CapabilityProfile":
        if not isinstance(data, dict) or "max_client_qubits" not in data:
            raise BadArgument("profile JSON needs 'max_client_qubits'")
        kinds = data.get("allowed_single_qubit_gates")
        return cls(
            int(data["max_client_qubits"]),
            bool(data.get("multiqubit_allowed", True)),
            frozenset(kinds) if kinds is not None else SINGLE_QUBIT_KINDS,
            bool(data.get("can_measure", True)),
            data.get("can_swap_ports"),
        )

    @classmethod
    def load(cls, path) -> "CapabilityProfile":
        with open(path, "r", encoding="utf-8") as handle:
            try:
                return cls.from_json(json.load(handle))
            except json.JSONDecodeError as exc:
                raise BadArgument(f"{path} is not valid JSON: {exc}") from exc


def decompose_rzz(circuit: TaggedCircuit) -> TaggedCircuit:
    """RZZ(θ) on (a, b) becomes CNOT(a,b) RZ(θ) on b, CNOT(a,b)."""
    gates: list[TaggedGate] = []
    for tagged in circuit.gates:
        if tagged.kind is not GateKind.RZZ:
            gates.append(tagged)
            continue
        a, b = tagged.targets
        skeleton = GateInstance(GateKind.CNOT, (a, b))
        gates.append(TaggedGate(skeleton, PrivacyTag.PUBLIC, tagged.role))
        gates.append(TaggedGate(GateInstance(GateKind.RZ, (b,), tagged.gate.params),
                                PrivacyTag.PRIVATE_ANGLE, tagged.role))
        gates.append(TaggedGate(skeleton, PrivacyTag.PUBLIC, tagged.role))
    return TaggedCircuit(circuit.labels, gates)


_QUARTER = math.pi / 4


def _ccz_sequence(a: int, b: int, c: int) -> list[GateInstance]:
    def cx(control, target):
        return GateInstance(GateKind.CNOT, (control, target))

    def t(label):
        return GateInstance(GateKind.T, (label,))

    def tdg(label):
        return GateInstance(GateKind.RZ, (label,), (-_QUARTER,))

    return [
        cx(b, c), tdg(c), cx(a, c), t(c), cx(b, c), tdg(c), cx(a, c),
        t(b), t(c), cx(a, b), t(a), tdg(b), cx(a, b),
    ]


def decompose_toffoli(circuit: TaggedCircuit) -> TaggedCircuit:
    """Expand CCZ and CCX into CNOT, T and T-dagger (up to global phase).

    T-dagger is written as RZ(-pi/4). Expanded gates keep the original tag.
    """
    gates: list[TaggedGate] = []
    for tagged in circuit.gates:
        if tagged.kind not in (GateKind.CCZ, GateKind.CCX):
            gates.append(tagged)
            continue
        a, b, c = tagged.targets
        sequence = _ccz_sequence(a, b, c)
        if tagged.kind is GateKind.CCX:
            hadamard = GateInstance(GateKind.H, (c,))
            sequence = [hadamard, *sequence, hadamard]
        gates.extend(TaggedGate(item, tagged.tag, tagged.role) for item in sequence)
    return TaggedCircuit(circuit.labels, gates)


def split_angle(theta: float, n: int, rng: np.random.Generator) -> list[float]:
    """n shares of theta: n-1 uniform on [0, 2π), the last closing the sum mod 2π."""
    if n < 1:
        raise BadArgument("angle split needs at least one share")
    if n == 1:
        return [float(theta)]
    shares = [float(x) for x in rng.uniform(0.0, TWO_PI, size=n - 1)]
    shares.append(float((theta - sum(shares)) % TWO_PI))
    return shares


def expand_angle_splits(
    circuit: TaggedCircuit,
    n: int,
    rng: np.random.Generator,
    select: Callable[[TaggedGate], bool] | None = None,
) -> TaggedCircuit:
    """Replace each private one-qubit rotation by n rotations with split angles.

    `select` narrows the pass to the rotations it accepts.
    """
    gates: list[TaggedGate] = []
    for tagged in circuit.gates:
        splittable = tagged.tag is PrivacyTag.PRIVATE_ANGLE and tagged.kind in SPLITTABLE_KINDS
        if not splittable or (select is not None and not select(tagged)):
            gates.append(tagged)
            continue
        for share in split_angle(tagged.gate.params[0], n, rng):
            piece = GateInstance(tagged.kind, tagged.targets, (share,))
            gates.append(TaggedGate(piece, PrivacyTag.PRIVATE_ANGLE, tagged.role))
    return TaggedCircuit(circuit.labels, gates)


@dataclass(frozen=True)
class TrapRecord:
    position: int
    kind: GateKind
    targets: tuple[int, int]

    def pair(self) -> tuple[GateInstance, GateInstance]:
        item = GateInstance(self.kind, self.targets)
        return item, item


@dataclass(frozen=True)
class TrapPlan:
    traps: tuple[TrapRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.traps)


def insert_traps(
    circuit: TaggedCircuit, density: float, rng: np.random.Generator
) -> tuple[TaggedCircuit, TrapPlan]:
    """Insert identity-composing server gate pairs after real server gates.

    Each multi-qubit gate is followed by a trap with probability `density`. A
    trap is G, a zero-angle private marker on G's last qubit, then G again; the
    marker sends the qubit back to the client between the two halves.
    """
    if not 0.0 <= density <= 1.0:
        raise BadArgument(f"trap density must lie in [0, 1], got {density}")
    if density == 0.0 or circuit.n_qubits < 2:
        return circuit, TrapPlan()
    gates: list[TaggedGate] = []
    traps: list[TrapRecord] = []
    for tagged in circuit.gates:
        gates.append(tagged)
        if tagged.arity < 2 or rng.random() >= density:
            continue
        a, b = (int(x) for x in rng.choice(circuit.labels, size=2, replace=False))
        kind = GateKind.CNOT if rng.random() < 0.5 else GateKind.CZ
        record = TrapRecord(len(gates), kind, (a, b))
        half = TaggedGate(GateInstance(kind, (a, b)), PrivacyTag.PUBLIC, GateRole.TRAP)
        marker = TaggedGate(GateInstance(GateKind.RZ, (b,), (0.0,)), PrivacyTag.PRIVATE_ANGLE, GateRole.MARKER)
        gates.extend([half, marker, half])
        traps.append(record)
    logger.debug("inserted %d trap pairs at density %.3f", len(traps), density)
    return TaggedCircuit(circuit.labels, gates), TrapPlan(tuple(traps))


def plan_swap_shuffle(wires: Sequence[int], rng: np.random.Generator) -> dict[int, int]:
    """A uniformly random relabeling of the given wires among themselves."""
    wires = [int(w) for w in wires]
    if not wires:
        raise BadArgument("shuffle needs at least one wire")
    image = [wires[i] for i in rng.permutation(len(wires))]
    return dict(zip(wires, image))


def invert_permutation(mapping: dict[int, int]) -> dict[int, int]:
    return {image: source for source, image in mapping.items()}


def ready_frontier(
    circuit: TaggedCircuit,
    completed: set[int],
    held: set[int],
    profile: CapabilityProfile,
    permits: Callable[[TaggedGate], bool] | None = None,
) -> list[int]:
    """Maximal list of gates runnable now on the held qubits, in circuit order.

    A gate qualifies when every predecessor is completed or already selected,
    all its targets are held and the profile (and `permits`, if given) allow it.
    Gate order is a topological order, so one pass reaches the fixpoint.
    """
    selected: list[int] = []
    done = set(completed)
    for uid, tagged in enumerate(circuit.gates):
        if uid in done:
            continue
        if not set(tagged.targets) <= held:
            continue
        if not profile.permits(tagged.gate):
            continue
        if permits is not None and not permits(tagged):
            continue
        if all(pred in done for pred in circuit.dag.predecessors(uid)):
            selected.append(uid)
            done.add(uid)
    return selected
