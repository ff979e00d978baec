"""
Built-in example circuits and a random circuit generator.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .circuit_ir import GateRole, PrivacyTag, TaggedCircuit, TaggedGate, op
from .errors import BadArgument
from .sim_core import GateInstance, GateKind

PUBLIC = PrivacyTag.PUBLIC
ANGLE = PrivacyTag.PRIVATE_ANGLE
STRUCTURE = PrivacyTag.PRIVATE_STRUCTURE

GROVER_MARKED = ("101", "110")
QAOA_ANGLES = (0.3, 0.7, 1.1, 0.4, 0.9, 1.3, 0.5, 0.8, 1.2)
QNN_ANGLES = (0.2, 0.5, 0.8, 0.6, 1.0, 1.4, 0.7, 0.3, 1.1)


def grover3(marked: Sequence[str] = GROVER_MARKED) -> TaggedCircuit:
    """One Grover iteration over three qubits marking the given bitstrings.

    Bitstrings read q0 first. The oracle's X gates reveal which strings are
    marked, so they carry the private-structure tag.
    """
    gates: list[TaggedGate] = [op("H", q) for q in range(3)]
    for pattern in marked:
        if len(pattern) != 3 or set(pattern) - {"0", "1"}:
            raise BadArgument(f"marked string {pattern!r} must be three bits")
        flips = [op("X", q, tag=STRUCTURE) for q, bit in enumerate(pattern) if bit == "0"]
        gates += flips + [op("CCZ", 0, 1, 2)] + flips
    gates += [op("H", q) for q in range(3)] + [op("X", q) for q in range(3)]
    gates += [op("CCZ", 0, 1, 2)]
    gates += [op("X", q) for q in range(3)] + [op("H", q) for q in range(3)]
    return TaggedCircuit(3, gates)


def _angles(angles: Sequence[float] | None, default: Sequence[float], per_layer: int,
            layers: int) -> list[float]:
    values = list(default) if angles is None else [float(a) for a in angles]
    needed = per_layer * layers
    if angles is None and len(values) < needed:
        values = (values * math.ceil(needed / len(values)))[:needed]
    if len(values) != needed:
        raise BadArgument(f"expected {needed} angles, got {len(values)}")
    return values


def qaoa3(angles: Sequence[float] | None = None, layers: int = 1) -> TaggedCircuit:
    """QAOA-style ansatz: RZ fields, RZZ couplings on every pair, RX mixers."""
    if layers < 1:
        raise BadArgument("qaoa3 needs at least one layer")
    theta = _angles(angles, QAOA_ANGLES, 9, layers)
    gates = [op("H", q) for q in range(3)]
    for layer in range(layers):
        t = theta[9 * layer:9 * layer + 9]
        gates += [op("RZ", q, params=(t[q],), tag=ANGLE) for q in range(3)]
        for (a, b), angle in zip(((0, 1), (0, 2), (1, 2)), t[3:6]):
            gates.append(op("RZZ", a, b, params=(angle,), tag=ANGLE))
        gates += [op("RX", q, params=(t[6 + q],), tag=ANGLE) for q in range(3)]
    return TaggedCircuit(3, gates)


def qnn3(angles: Sequence[float] | None = None) -> TaggedCircuit:
    """Three-qubit QNN: data encoding, two entangling CNOT ladders, trainable RY.

    The first three angles are inputs, the other six are weights.
    """
    values = _angles(angles, QNN_ANGLES, 9, 1)
    inputs, weights = values[:3], values[3:]
    gates = []
    for q in range(3):
        gates += [op("RX", q, params=(inputs[q],), tag=ANGLE), op("RY", q, params=(weights[q],), tag=ANGLE)]
    gates += [op("CNOT", 0, 1), op("CNOT", 1, 2)]
    gates += [op("RY", q, params=(weights[3 + q],), tag=ANGLE) for q in range(3)]
    gates += [op("CNOT", 0, 1), op("CNOT", 1, 2)]
    return TaggedCircuit(3, gates)


RANDOM_KINDS = ("H", "X", "Y", "Z", "S", "T", "RX", "RY", "RZ", "CNOT", "CZ", "SWAP", "RZZ", "CCZ", "CCX")


def random_circuit(
    n_qubits: int,
    n_gates: int,
    rng: np.random.Generator,
    kinds: Sequence[str] = RANDOM_KINDS,
    private_fraction: float = 0.5,
) -> TaggedCircuit:
    """Random gates over `kinds`; rotations are private with probability `private_fraction`."""
    if n_qubits < 1 or n_gates < 0:
        raise BadArgument("random circuits need at least one qubit")
    choices = [GateKind(kind) for kind in kinds if GateKind(kind).arity <= n_qubits]
    if not choices:
        raise BadArgument(f"no gate kind in {list(kinds)} fits {n_qubits} qubits")
    gates = []
    for _ in range(n_gates):
        kind = choices[int(rng.integers(len(choices)))]
        targets = tuple(int(q) for q in rng.choice(n_qubits, size=kind.arity, replace=False))
        params = tuple(float(a) for a in rng.uniform(0, 2 * math.pi, size=kind.n_params))
        private = bool(params) and rng.random() < private_fraction
        gates.append(TaggedGate(GateInstance(kind, targets, params), ANGLE if private else PUBLIC,
                                GateRole.CIRCUIT))
    return TaggedCircuit(n_qubits, gates)


SCENARIOS: dict[str, Callable[..., TaggedCircuit]] = {
    "grover3": grover3,
    "qaoa3": qaoa3,
    "qnn3": qnn3,
}


def build_scenario(name: str, angles: Sequence[float] | None = None) -> TaggedCircuit:
    if name not in SCENARIOS:
        raise BadArgument(f"unknown scenario {name!r}; expected one of {', '.join(sorted(SCENARIOS))}")
    if name == "grover3":
        if angles:
            raise BadArgument("grover3 takes no angles")
        return grover3()
    return SCENARIOS[name](angles)


def parse_angles(text: str | None) -> list[float] | None:
    """Comma-separated floats, or a JSON list."""
    if not text:
        return None
    try:
        if text.lstrip().startswith("["):
            return [float(a) for a in json.loads(text)]
        return [float(a) for a in text.split(",") if a.strip()]
    except (ValueError, TypeError) as exc:
        raise BadArgument(f"malformed angles {text!r}") from exc


def load_circuit(source: str, angles: Sequence[float] | None = None) -> TaggedCircuit:
    """A scenario by name, or a circuit JSON file by path."""
    if source in SCENARIOS:
        return build_scenario(source, angles)
    path = Path(source)
    if not path.is_file():
        raise BadArgument(f"{source!r} is neither a scenario ({', '.join(sorted(SCENARIOS))}) nor a file")
    if angles:
        raise BadArgument("--angles only applies to built-in scenarios")
    return TaggedCircuit.load(path)
