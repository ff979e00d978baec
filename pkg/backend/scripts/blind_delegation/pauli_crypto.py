"""
Quantum one-time pad and the client's correction ledger.

A qubit encrypted with key (a, b) holds X^a Z^b |psi> (Z first). After the
server applies gates to encrypted qubits the ledger tracks

    plaintext = P_inv . D . encrypted

where P_inv = prod Z^b X^a over the frame and D is the list of pending
correction gates (applied in list order, global phases ignored). Pauli and
Clifford server gates keep D empty; a Toffoli-family gate leaves CZ/CNOT
corrections in D that must be applied by whoever co-holds their qubits.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import BadArgument, CorrectionNotLocal, NoCapacity, UnsupportedConjugation
from .sim_core import (
    DIAGONAL_KINDS,
    GateInstance,
    GateKind,
    StateVector,
    apply_gate,
    measure_z,
)

logger = logging.getLogger(__name__)

SERVER_GATE_KINDS = frozenset(
    {
        GateKind.X, GateKind.Y, GateKind.Z, GateKind.H, GateKind.S,
        GateKind.CNOT, GateKind.CZ, GateKind.SWAP, GateKind.CCZ, GateKind.CCX,
    }
)
NON_CLIFFORD_KINDS = frozenset({GateKind.CCZ, GateKind.CCX})


@dataclass(frozen=True)
class PadKey:
    a: int
    b: int

    def __post_init__(self) -> None:
        if self.a not in (0, 1) or self.b not in (0, 1):
            raise BadArgument(f"pad bits must be 0 or 1, got ({self.a}, {self.b})")


ZERO_KEY = PadKey(0, 0)


@dataclass
class CorrectionFrame:
    """Per-qubit pad bits plus the pending correction list."""

    pauli: dict[int, PadKey] = field(default_factory=dict)
    pending: list[GateInstance] = field(default_factory=list)

    def copy(self) -> "CorrectionFrame":
        return CorrectionFrame(dict(self.pauli), list(self.pending))

    def is_encrypted(self, label: int) -> bool:
        return label in self.pauli

    def key(self, label: int) -> PadKey:
        return self.pauli.get(label, ZERO_KEY)

    def with_pad(self, label: int, key: PadKey) -> "CorrectionFrame":
        """Frame after padding `label` with `key`.

        Re-padding an encrypted qubit composes the keys, which is only sound
        while no pending correction touches it.
        """
        frame = self.copy()
        if label in frame.pauli:
            if self.pending_on([label]):
                raise CorrectionNotLocal(f"qubit {label} has pending corrections")
            old = frame.pauli[label]
            key = PadKey(old.a ^ key.a, old.b ^ key.b)
        frame.pauli[label] = key
        return frame

    def forget(self, label: int) -> "CorrectionFrame":
        frame = self.copy()
        frame.pauli.pop(label, None)
        return frame

    def pending_on(self, labels: Iterable[int]) -> list[GateInstance]:
        labels = set(labels)
        return [item for item in self.pending if labels & set(item.targets)]

    def to_json(self) -> dict:
        return {
            "pauli": {str(label): [key.a, key.b] for label, key in sorted(self.pauli.items())},
            "pending": [item.to_json() for item in self.pending],
        }


def encrypt(state: StateVector, label: int, key: PadKey) -> StateVector:
    """Apply X^a Z^b to one qubit."""
    if key.b:
        state = apply_gate(state, GateInstance(GateKind.Z, (label,)))
    if key.a:
        state = apply_gate(state, GateInstance(GateKind.X, (label,)))
    return state


def _inverse_pad(state: StateVector, label: int, key: PadKey) -> StateVector:
    if key.a:
        state = apply_gate(state, GateInstance(GateKind.X, (label,)))
    if key.b:
        state = apply_gate(state, GateInstance(GateKind.Z, (label,)))
    return state


def _inverse(item: GateInstance) -> list[GateInstance]:
    if item.kind is GateKind.S:
        return [GateInstance(GateKind.Z, item.targets), item]
    return [item]


def _operator(gate: GateInstance, labels: tuple[int, ...]) -> np.ndarray:
    dim = 2 ** len(labels)
    columns = []
    for index in range(dim):
        basis = np.zeros(dim, dtype=complex)
        basis[index] = 1
        columns.append(apply_gate(StateVector(basis, labels), gate).amplitudes)
    return np.stack(columns, axis=1)


@lru_cache(maxsize=4096)
def commutes(first: GateInstance, second: GateInstance) -> bool:
    """Exact commutation of two gates, checked on the qubits they share."""
    if not set(first.targets) & set(second.targets):
        return True
    if first == second or (first.kind in DIAGONAL_KINDS and second.kind in DIAGONAL_KINDS):
        return True
    labels = tuple(sorted(set(first.targets) | set(second.targets)))
    a, b = _operator(first, labels), _operator(second, labels)
    return bool(np.allclose(a @ b, b @ a, atol=1e-12))


def _bits(frame: CorrectionFrame, labels: Sequence[int]) -> tuple[list[int], list[int]]:
    keys = [frame.key(label) for label in labels]
    return [k.a for k in keys], [k.b for k in keys]


def _store(frame: CorrectionFrame, labels: Sequence[int], a: list[int], b: list[int],
           encrypted: set[int]) -> None:
    for label, a_bit, b_bit in zip(labels, a, b):
        if label in encrypted or a_bit or b_bit:
            frame.pauli[label] = PadKey(a_bit, b_bit)
        else:
            frame.pauli.pop(label, None)


def _pauli_update(kind: GateKind, targets: tuple[int, ...], a: list[int], b: list[int]) -> list[GateInstance]:
    """Rewrite the pad bits in place for G P G^dagger = K P'; return K."""
    correction: list[GateInstance] = []
    if kind in (GateKind.X, GateKind.Y, GateKind.Z):
        pass
    elif kind is GateKind.H:
        a[0], b[0] = b[0], a[0]
    elif kind is GateKind.S:
        b[0] ^= a[0]
    elif kind is GateKind.CNOT:
        a[1] ^= a[0]
        b[0] ^= b[1]
    elif kind is GateKind.CZ:
        b[0] ^= a[1]
        b[1] ^= a[0]
    elif kind is GateKind.SWAP:
        a.reverse()
        b.reverse()
    elif kind is GateKind.CCZ:
        q0, q1, q2 = targets
        s0, s1, s2 = a
        if s2:
            correction.append(GateInstance(GateKind.CZ, (q0, q1)))
        if s1:
            correction.append(GateInstance(GateKind.CZ, (q0, q2)))
        if s0:
            correction.append(GateInstance(GateKind.CZ, (q1, q2)))
        b[0] ^= s1 & s2
        b[1] ^= s0 & s2
        b[2] ^= s0 & s1
    elif kind is GateKind.CCX:
        c0, c1, t = targets
        a0, a1, at = a
        bt = b[2]
        if bt:
            correction.append(GateInstance(GateKind.CZ, (c0, c1)))
        if a1:
            correction.append(GateInstance(GateKind.CNOT, (c0, t)))
        if a0:
            correction.append(GateInstance(GateKind.CNOT, (c1, t)))
        b[0] ^= a1 & bt
        b[1] ^= a0 & bt
        a[2] = at ^ (a0 & a1)
    else:
        raise UnsupportedConjugation(f"{kind.value} cannot be applied to encrypted qubits")
    return correction


def conjugate_frame(frame: CorrectionFrame, gate: GateInstance) -> CorrectionFrame:
    """Ledger update after the server applies `gate` to the encrypted state."""
    if gate.kind not in SERVER_GATE_KINDS:
        raise UnsupportedConjugation(f"{gate.kind.value} cannot be applied to encrypted qubits")
    labels = gate.targets
    encrypted = {label for label in labels if frame.is_encrypted(label)}
    a, b = _bits(frame, labels)
    correction = _pauli_update(gate.kind, labels, a, b)
    result = frame.copy()
    if gate.kind is GateKind.SWAP and len(encrypted) == 1:
        encrypted = set(labels) - encrypted
    _store(result, labels, a, b, encrypted)
    touching = result.pending_on(labels)
    if touching and not all(commutes(gate, item) for item in touching):
        result.pending = _inverse(gate) + result.pending + [gate]
    result.pending.extend(correction)
    return result


def _peel(frame: CorrectionFrame, chosen) -> tuple[list[GateInstance], list[GateInstance]]:
    """Split pending into gates movable to the front that satisfy `chosen`, and the rest."""
    front: list[GateInstance] = []
    rest: list[GateInstance] = []
    for item in frame.pending:
        if chosen(item) and all(commutes(item, earlier) for earlier in rest):
            front.append(item)
        else:
            rest.append(item)
    return front, rest


def apply_local_corrections(
    state: StateVector, frame: CorrectionFrame, held: Iterable[int]
) -> tuple[StateVector, CorrectionFrame]:
    """Apply every pending correction whose qubits are all held and that can move first."""
    held = set(held)
    front, rest = _peel(frame, lambda item: set(item.targets) <= held)
    for item in front:
        state = apply_gate(state, item)
    result = frame.copy()
    result.pending = rest
    return state, result


def decrypt(
    state: StateVector,
    labels: Sequence[int],
    frame: CorrectionFrame,
    held: Iterable[int] | None = None,
) -> tuple[StateVector, CorrectionFrame]:
    """Apply the corrections touching `labels`, then remove their pads.

    `held` is every qubit the decrypting party holds; each correction touching
    `labels` must lie inside it.
    """
    labels = list(labels)
    held = set(labels) if held is None else set(held) | set(labels)
    relevant = frame.pending_on(labels)
    outside = [item for item in relevant if not set(item.targets) <= held]
    if outside:
        raise CorrectionNotLocal(
            f"correction {outside[0].kind.value}{outside[0].targets} reaches outside held qubits"
        )
    front, rest = _peel(frame, lambda item: bool(set(item.targets) & set(labels)))
    if len(front) != len(relevant):
        raise CorrectionNotLocal(f"corrections on {labels} are blocked by earlier ones")
    for item in front:
        state = apply_gate(state, item)
    result = frame.copy()
    result.pending = rest
    for label in labels:
        if label in result.pauli:
            state = _inverse_pad(state, label, result.pauli.pop(label))
    return state, result


def decrypt_measurement(outcome: int, key: PadKey, pending: Sequence[GateInstance] = ()) -> int:
    """Plaintext Z outcome of an encrypted qubit: the X bit of the key flips it."""
    if pending:
        raise CorrectionNotLocal("measured qubit still has pending corrections")
    return int(outcome) ^ key.a


def reveal_plaintext(state: StateVector, frame: CorrectionFrame) -> StateVector:
    """Full plaintext state from the ledger; audit use only."""
    for item in frame.pending:
        state = apply_gate(state, item)
    for label, key in frame.pauli.items():
        state = _inverse_pad(state, label, key)
    return state


def keygen_rounds(free_slots: int, bits_needed: int) -> int:
    if free_slots < 1:
        raise NoCapacity("no free qubit slot for key generation")
    return math.ceil(bits_needed / free_slots)


def protocol1_keygen(free_slots: int, bits_needed: int, rng: np.random.Generator) -> list[int]:
    """Random bits from |+> preparation and measurement on the client's free slots.

    Each round prepares one |+> per free slot and measures it; surplus bits of
    the last round are discarded.
    """
    rounds = keygen_rounds(free_slots, bits_needed)
    bits: list[int] = []
    hadamard = GateInstance(GateKind.H, (0,))
    for _ in range(rounds):
        for _ in range(free_slots):
            scratch = apply_gate(StateVector.zeros([0]), hadamard)
            _, record = measure_z(scratch, 0, rng)
            bits.append(record.outcome)
    return bits[:bits_needed]


class KeyMode(str, Enum):
    PROTOCOL1_LITERAL = "protocol1"
    PREGENERATED_POOL = "pool"
    EXTERNAL_CLASSICAL = "external"


class KeySource:
    """Where pad bits come from.

    Protocol-1 mode generates bits on free client slots and keeps a small
    buffer; when the client is full it falls back to a pregenerated pool.
    """

    def __init__(self, mode: KeyMode | str, rng: np.random.Generator, pool_size: int = 256):
        self.mode = KeyMode(mode)
        self.rng = rng
        self.pool_size = pool_size
        self.buffer: list[int] = []
        self.fallbacks = 0
        self.generated = 0

    def _fill_pool(self) -> None:
        self.buffer.extend(int(bit) for bit in self.rng.integers(0, 2, size=self.pool_size))

    def replenish(self, free_slots: int, target: int = 4) -> None:
        if self.mode is not KeyMode.PROTOCOL1_LITERAL or len(self.buffer) >= target or free_slots < 1:
            return
        bits = protocol1_keygen(free_slots, target - len(self.buffer), self.rng)
        self.generated += len(bits)
        self.buffer.extend(bits)

    def take_bits(self, count: int, free_slots: int = 0) -> list[int]:
        if self.mode is KeyMode.EXTERNAL_CLASSICAL:
            return [int(bit) for bit in self.rng.integers(0, 2, size=count)]
        while len(self.buffer) < count:
            if self.mode is KeyMode.PROTOCOL1_LITERAL:
                try:
                    bits = protocol1_keygen(free_slots, count - len(self.buffer), self.rng)
                except NoCapacity:
                    self.fallbacks += 1
                    logger.info("no free client slot for key generation; using the pregenerated pool")
                    self._fill_pool()
                    continue
                self.generated += len(bits)
                self.buffer.extend(bits)
            else:
                self._fill_pool()
        taken, self.buffer = self.buffer[:count], self.buffer[count:]
        return taken

    def take(self, free_slots: int = 0) -> PadKey:
        a, b = self.take_bits(2, free_slots)
        return PadKey(a, b)


def key_uniformity_pvalue(bits: Sequence[int]) -> float:
    """Two-sided binomial test of the ones count against p = 1/2."""
    bits = list(bits)
    if not bits:
        return 1.0
    return float(stats.binomtest(int(sum(bits)), len(bits), 0.5).pvalue)
