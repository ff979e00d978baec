"""
Exact statevector simulation over labeled qubits.

Qubits are addressed by integer labels, never by position. A state keeps its
labels in creation order; the label at position p is bit p of the flat
amplitude index (little-endian), so appending a qubit makes it the new most
significant bit. Gate matrices are written with targets[0] as the most
significant bit, e.g. CNOT(control, target).
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import BadArgument, BadGate, LabelMismatch, UnknownQubit

logger = logging.getLogger(__name__)

MAX_QUBITS = 20
NORM_TOLERANCE = 1e-12


class GateKind(str, Enum):
    H = "H"
    X = "X"
    Y = "Y"
    Z = "Z"
    S = "S"
    T = "T"
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    CNOT = "CNOT"
    CZ = "CZ"
    SWAP = "SWAP"
    RZZ = "RZZ"
    CCZ = "CCZ"
    CCX = "CCX"

    @property
    def arity(self) -> int:
        return _ARITY[self]

    @property
    def n_params(self) -> int:
        return 1 if self in ROTATION_KINDS else 0


_ARITY = {
    GateKind.CNOT: 2,
    GateKind.CZ: 2,
    GateKind.SWAP: 2,
    GateKind.RZZ: 2,
    GateKind.CCZ: 3,
    GateKind.CCX: 3,
}
for _kind in GateKind:
    _ARITY.setdefault(_kind, 1)

ROTATION_KINDS = frozenset({GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.RZZ})
SINGLE_QUBIT_KINDS = frozenset(k for k in GateKind if k.arity == 1)
DIAGONAL_KINDS = frozenset(
    {GateKind.Z, GateKind.S, GateKind.T, GateKind.RZ, GateKind.CZ, GateKind.RZZ, GateKind.CCZ}
)


@dataclass(frozen=True)
class GateInstance:
    """One gate application: a kind, its target labels and its angles."""

    kind: GateKind
    targets: tuple[int, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        try:
            kind = GateKind(self.kind)
        except ValueError as exc:
            raise BadGate(f"unknown gate kind {self.kind!r}") from exc
        targets = tuple(int(t) for t in self.targets)
        params = tuple(float(p) for p in self.params)
        if len(targets) != kind.arity:
            raise BadGate(f"{kind.value} takes {kind.arity} target(s), got {len(targets)}")
        if len(set(targets)) != len(targets):
            raise BadGate(f"{kind.value} has repeated targets {targets}")
        if len(params) != kind.n_params:
            raise BadGate(f"{kind.value} takes {kind.n_params} parameter(s), got {len(params)}")
        if not all(math.isfinite(p) for p in params):
            raise BadGate(f"{kind.value} has a non-finite angle {params}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "params", params)

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "targets": list(self.targets), "params": list(self.params)}

    @classmethod
    def from_json(cls, data: dict) -> "GateInstance":
        try:
            return cls(data["kind"], tuple(data["targets"]), tuple(data.get("params", ())))
        except (KeyError, TypeError) as exc:
            raise BadGate(f"malformed gate {data!r}") from exc


_SQRT_HALF = 1 / math.sqrt(2)
_FIXED = {
    GateKind.H: np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT_HALF,
    GateKind.X: np.array([[0, 1], [1, 0]], dtype=complex),
    GateKind.Y: np.array([[0, -1j], [1j, 0]], dtype=complex),
    GateKind.Z: np.diag([1, -1]).astype(complex),
    GateKind.S: np.diag([1, 1j]).astype(complex),
    GateKind.T: np.diag([1, np.exp(1j * math.pi / 4)]).astype(complex),
    GateKind.CNOT: np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
    GateKind.CZ: np.diag([1, 1, 1, -1]).astype(complex),
    GateKind.SWAP: np.array(
        [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
    ),
    GateKind.CCZ: np.diag([1, 1, 1, 1, 1, 1, 1, -1]).astype(complex),
}
_ccx = np.eye(8, dtype=complex)
_ccx[[6, 7]] = _ccx[[7, 6]]
_FIXED[GateKind.CCX] = _ccx


def gate_matrix(kind: GateKind, params: Sequence[float] = ()) -> np.ndarray:
    """Dense unitary of a gate, targets[0] as the most significant bit."""
    kind = GateKind(kind)
    if kind in _FIXED:
        return _FIXED[kind].copy()
    theta = float(params[0])
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    if kind is GateKind.RX:
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind is GateKind.RY:
        return np.array([[c, -s], [s, c]], dtype=complex)
    lo, hi = np.exp(-0.5j * theta), np.exp(0.5j * theta)
    if kind is GateKind.RZ:
        return np.diag([lo, hi])
    return np.diag([lo, hi, hi, lo])


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray
    labels: tuple[int, ...]

    @classmethod
    def empty(cls) -> "StateVector":
        return cls(np.ones(1, dtype=complex), ())

    @classmethod
    def zeros(cls, labels: Iterable[int]) -> "StateVector":
        state = cls.empty()
        for label in labels:
            state = state.with_qubit(label)
        return state

    @property
    def n(self) -> int:
        return len(self.labels)

    def position(self, label: int) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownQubit(f"qubit {label} is not part of the state") from None

    def axis(self, label: int) -> int:
        return self.n - 1 - self.position(label)

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.n)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def with_qubit(self, label: int) -> "StateVector":
        if label in self.labels:
            raise BadArgument(f"qubit {label} already exists")
        if self.n + 1 > MAX_QUBITS:
            raise BadArgument(f"state is limited to {MAX_QUBITS} qubits")
        amplitudes = np.kron(np.array([1, 0], dtype=complex), self.amplitudes)
        return StateVector(amplitudes, self.labels + (int(label),))

    def reordered(self, labels: Sequence[int]) -> "StateVector":
        """Same state with qubits laid out in the given label order."""
        labels = tuple(labels)
        if sorted(labels) != sorted(self.labels):
            raise LabelMismatch(f"cannot reorder {self.labels} as {labels}")
        n = self.n
        if n == 0:
            return self
        perm = [self.axis(labels[n - 1 - k]) for k in range(n)]
        return StateVector(self.tensor().transpose(perm).reshape(-1).copy(), labels)


def apply_gate(state: StateVector, gate: GateInstance) -> StateVector:
    """Apply a gate to its target labels and return the new state."""
    axes = [state.axis(t) for t in gate.targets]
    k, n = len(axes), state.n
    unitary = gate_matrix(gate.kind, gate.params).reshape((2,) * (2 * k))
    out = np.tensordot(unitary, state.tensor(), axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    result = StateVector(np.ascontiguousarray(out).reshape(-1), state.labels)
    drift = abs(result.norm() - 1.0)
    if drift > 1e-9:
        logger.debug("norm drift %.3e after %s", drift, gate.kind.value)
    return result


def add_qubit(state: StateVector, label: int) -> StateVector:
    """Tensor a fresh |0> onto the state under a new label."""
    return state.with_qubit(label)


@dataclass(frozen=True)
class MeasurementRecord:
    label: int
    outcome: int
    probability: float


def measure_z(
    state: StateVector, label: int, rng: np.random.Generator
) -> tuple[StateVector, MeasurementRecord]:
    """Computational-basis measurement by the Born rule; the qubit stays in the state."""
    axis = state.axis(label)
    psi = state.tensor()
    p_one = float(np.sum(np.abs(np.take(psi, 1, axis=axis)) ** 2))
    p_one = min(max(p_one, 0.0), 1.0)
    outcome = int(rng.random() < p_one)
    probability = p_one if outcome else 1.0 - p_one
    collapsed = psi.copy()
    index: list = [slice(None)] * state.n
    index[axis] = 1 - outcome
    collapsed[tuple(index)] = 0
    collapsed = collapsed.reshape(-1) / math.sqrt(probability)
    return StateVector(collapsed, state.labels), MeasurementRecord(label, outcome, probability)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    labels: tuple[int, ...]

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))


def reduced_density_matrix(state: StateVector, labels: Sequence[int]) -> DensityMatrix:
    """Partial trace onto `labels`; labels[0] is the least significant bit."""
    labels = tuple(labels)
    if len(set(labels)) != len(labels):
        raise BadArgument(f"repeated labels {labels}")
    keep = [state.axis(label) for label in reversed(labels)]
    rest = [axis for axis in range(state.n) if axis not in keep]
    block = state.tensor().transpose(keep + rest).reshape(2 ** len(labels), -1)
    return DensityMatrix(block @ block.conj().T, labels)


def fidelity_up_to_global_phase(a: StateVector, b: StateVector) -> float:
    if set(a.labels) != set(b.labels):
        raise LabelMismatch(f"label sets differ: {sorted(a.labels)} vs {sorted(b.labels)}")
    b = b.reordered(a.labels)
    overlap = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
    return float(min(max(overlap, 0.0), 1.0))


def basis_probabilities(state: StateVector, labels: Sequence[int] | None = None) -> dict[str, float]:
    """Z-basis outcome probabilities keyed by bitstring, labels[0] first."""
    labels = tuple(sorted(state.labels) if labels is None else labels)
    keep = [state.axis(label) for label in labels]
    rest = tuple(axis for axis in range(state.n) if axis not in keep)
    probs = np.abs(state.tensor()) ** 2
    marginal = probs.transpose(keep + list(rest)).reshape(2 ** len(labels), -1).sum(axis=1)
    width = len(labels)
    return {format(i, f"0{width}b") if width else "": float(p) for i, p in enumerate(marginal)}


def bitstring(bits: dict[int, int], labels: Sequence[int] | None = None) -> str:
    labels = sorted(bits) if labels is None else labels
    return "".join(str(bits[label]) for label in labels)


class RngStreams:
    """Named, independent random streams derived from one seed.

    Each name maps to its own SeedSequence spawn key, so drawing from one stream
    never shifts another. Children give per-shot or per-trial streams.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0:
            raise BadArgument("seed must be non-negative")
        self.seed = int(seed)
        self.path = tuple(path)
        self._streams: dict[str, np.random.Generator] = {}

    @staticmethod
    def _key(name: str) -> int:
        return zlib.crc32(name.encode("utf-8"))

    def stream(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            sequence = np.random.SeedSequence(self.seed, spawn_key=self.path + (self._key(name),))
            self._streams[name] = np.random.default_rng(sequence)
        return self._streams[name]

    def child(self, name: str, index: int) -> "RngStreams":
        return RngStreams(self.seed, self.path + (self._key(name), int(index)))

    def fresh(self) -> "RngStreams":
        """Same seed and path, with every stream rewound."""
        return RngStreams(self.seed, self.path)

    def __repr__(self) -> str:
        return f"RngStreams(seed={self.seed}, path={self.path})"


def as_streams(rng: "RngStreams | int") -> RngStreams:
    return rng if isinstance(rng, RngStreams) else RngStreams(int(rng))
