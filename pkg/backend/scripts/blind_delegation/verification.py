"""
Honest-execution verification with interleaved verifier circuits.

Verifier subcircuits run on fresh qubits, never touch the original circuit's
qubits and end in a computational basis state, so a single shot either
matches the locally simulated outcome or exposes tampering.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import multiprocessing
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache, partial
from typing import Sequence

import numpy as np

from .adversaries import DropRandomGate
from .circuit_ir import (
    CapabilityProfile,
    GateRole,
    PrivacyTag,
    TaggedCircuit,
    TaggedGate,
)
from .errors import BadArgument, TooLargeToSimulate, VerificationUnsupported
from .protocol_engine import run_protocol
from .sim_core import (
    MAX_QUBITS,
    ROTATION_KINDS,
    GateInstance,
    GateKind,
    RngStreams,
    as_streams,
    basis_probabilities,
    bitstring,
)

logger = logging.getLogger(__name__)

MAX_VERIFIER_QUBITS = 10
DETERMINISM_TOLERANCE = 1e-9
DEFAULT_HISTOGRAM = Counter({"H": 2, "X": 2, "CNOT": 2})
EXPERIMENT_COLUMNS = (
    "N", "N'", "n", "trials", "empirical_nondetect", "analytic_nondetect",
    "gate_nondetect", "log10_analytic_nondetect", "sigma",
)


class Verdict(str, Enum):
    HONEST = "Honest"
    DISHONEST = "Dishonest"


@dataclass(frozen=True)
class VerifierSpec:
    n_qubits: int
    k: int
    per_circuit: int
    subcircuits: tuple[TaggedCircuit, ...]
    expected: tuple[str, ...]

    def expected_distributions(self) -> list[dict[str, float]]:
        return [basis_probabilities(sub.simulate()) for sub in self.subcircuits]


@dataclass
class DetectionReport:
    shots: int
    mismatches: int
    analytic_nondetection: float
    gate_nondetection: float
    instructions: dict[str, int] = field(default_factory=dict)
    original_counts: Counter = field(default_factory=Counter)

    @property
    def verdict(self) -> Verdict:
        return Verdict.DISHONEST if self.mismatches >= 1 else Verdict.HONEST

    def to_json(self) -> dict:
        return {
            "shots": self.shots,
            "mismatches": self.mismatches,
            "verdict": self.verdict.value,
            "analytic_nondetection": self.analytic_nondetection,
            "gate_nondetection": self.gate_nondetection,
            "instructions": dict(sorted(self.instructions.items())),
            "original_counts": dict(sorted(self.original_counts.items())),
        }


def nondetection_probability(n_original: int, n_verifier: int, shots: int) -> float:
    """(1 / (1 + N'/N))^n, evaluated in log space."""
    if n_original < 1 or n_verifier < 0 or shots < 0:
        raise BadArgument("need N >= 1, N' >= 0 and n >= 0")
    if shots == 0:
        return 1.0
    return math.exp(-shots * math.log1p(n_verifier / n_original))


def log10_nondetection_probability(n_original: int, n_verifier: int, shots: int) -> float:
    if n_original < 1 or n_verifier < 0 or shots < 0:
        raise BadArgument("need N >= 1, N' >= 0 and n >= 0")
    return -shots * math.log1p(n_verifier / n_original) / math.log(10)


def gate_nondetection_probability(original_gates: int, verifier_gates: int, shots: int) -> float:
    """Chance a uniform single-gate drop per shot misses every verifier gate."""
    return nondetection_probability(original_gates, verifier_gates, shots)


def histogram_distance(first: Counter, second: Counter) -> float:
    """Total-variation distance between two gate-kind histograms."""
    total_a, total_b = sum(first.values()), sum(second.values())
    if not total_a or not total_b:
        return 1.0 if total_a != total_b else 0.0
    kinds = set(first) | set(second)
    return 0.5 * sum(abs(first[k] / total_a - second[k] / total_b) for k in kinds)


def _apportion(histogram: Counter, budget: int) -> Counter:
    """Integer kind counts summing to `budget`, proportional to `histogram`."""
    total = sum(histogram.values())
    shares = {kind: budget * count / total for kind, count in histogram.items()}
    counts = Counter({kind: int(math.floor(share)) for kind, share in shares.items()})
    leftovers = sorted(shares, key=lambda kind: (-(shares[kind] - counts[kind]), kind))
    for kind in leftovers[: budget - sum(counts.values())]:
        counts[kind] += 1
    return counts


class _VerifierBuilder:
    """Realizes a multiset of gate kinds as a circuit with a deterministic outcome.

    Qubits are either in a basis state or inside an H ... H sandwich (a +/-
    state). Gates on sandwiched qubits are restricted to those that keep them
    in the X basis, and every open sandwich is closed at the end.
    """

    def __init__(self, width: int, rng: np.random.Generator):
        self.width = width
        self.rng = rng
        self.open: set[int] = set()
        self.gates: list[TaggedGate] = []

    def _emit(self, kind: GateKind, *targets: int) -> None:
        params = (math.pi,) if kind in ROTATION_KINDS else ()
        tag = PrivacyTag.PRIVATE_ANGLE if kind in ROTATION_KINDS else PrivacyTag.PUBLIC
        self.gates.append(TaggedGate(GateInstance(kind, targets, params), tag, GateRole.VERIFIER))

    def _pick(self, pool: Sequence[int], count: int = 1) -> list[int]:
        return [int(q) for q in self.rng.choice(sorted(pool), size=count, replace=False)]

    def _basis(self) -> list[int]:
        return [q for q in range(self.width) if q not in self.open]

    def _ensure_basis(self, count: int) -> list[int]:
        while len(self._basis()) < count:
            (label,) = self._pick(self.open)
            self._emit(GateKind.H, label)
            self.open.discard(label)
        return self._basis()

    def add(self, kind: GateKind) -> None:
        width = self.width
        if kind.arity > width:
            kind = {3: GateKind.CZ, 2: GateKind.X}[kind.arity] if width == 2 else GateKind.X
        if kind is GateKind.H:
            if self.open and (not self._basis() or self.rng.random() < 0.5):
                (label,) = self._pick(self.open)
                self.open.discard(label)
            else:
                (label,) = self._pick(self._basis())
                self.open.add(label)
            self._emit(kind, label)
        elif kind in (GateKind.S, GateKind.T):
            (label,) = self._pick(self._ensure_basis(1))
            self._emit(kind, label)
        elif kind.arity == 1 or kind in (GateKind.SWAP, GateKind.RZZ):
            targets = self._pick(range(width), kind.arity)
            self._emit(kind, *targets)
            if kind is GateKind.SWAP:
                a, b = targets
                if (a in self.open) != (b in self.open):
                    self.open ^= {a, b}
        elif kind in (GateKind.CNOT, GateKind.CCX):
            controls = self._pick(self._ensure_basis(kind.arity - 1), kind.arity - 1)
            (target,) = self._pick([q for q in range(width) if q not in controls])
            self._emit(kind, *controls, target)
        else:
            basis = self._ensure_basis(kind.arity - 1)
            chosen = self._pick(basis, kind.arity - 1)
            (extra,) = self._pick([q for q in range(width) if q not in chosen])
            targets = chosen + [extra]
            order = self.rng.permutation(len(targets))
            self._emit(kind, *[targets[i] for i in order])

    def finish(self) -> TaggedCircuit:
        for label in sorted(self.open):
            self._emit(GateKind.H, label)
        self.open.clear()
        return TaggedCircuit(self.width, self.gates)


def expected_outcome(subcircuit: TaggedCircuit) -> str:
    probabilities = basis_probabilities(subcircuit.simulate())
    outcome, probability = max(probabilities.items(), key=lambda item: item[1])
    if probability < 1 - DETERMINISM_TOLERANCE:
        raise BadArgument(f"verifier subcircuit is not deterministic (max probability {probability:.6f})")
    return outcome


def build_verifier(
    n_verifier_qubits: int,
    k: int,
    rng: np.random.Generator,
    reference: TaggedCircuit | None = None,
) -> VerifierSpec:
    """K deterministic subcircuits of N'/K qubits with the reference's gate mix."""
    if n_verifier_qubits < 1 or k < 1 or n_verifier_qubits % k:
        raise BadArgument(f"K={k} must divide N'={n_verifier_qubits}")
    width = n_verifier_qubits // k
    if width > MAX_VERIFIER_QUBITS:
        raise TooLargeToSimulate(f"verifier subcircuits of {width} qubits exceed {MAX_VERIFIER_QUBITS}")
    if reference is not None and len(reference):
        histogram = reference.kind_histogram()
        budget = max(width, round(len(reference) * width / max(reference.n_qubits, 1)))
    else:
        histogram, budget = DEFAULT_HISTOGRAM, 3 * width
    counts = _apportion(histogram, budget)
    subcircuits, expected = [], []
    for _ in range(k):
        kinds = [GateKind(kind) for kind in sorted(counts.elements())]
        builder = _VerifierBuilder(width, rng)
        for index in rng.permutation(len(kinds)):
            builder.add(kinds[index])
        subcircuit = builder.finish()
        subcircuits.append(subcircuit)
        expected.append(expected_outcome(subcircuit))
    return VerifierSpec(n_verifier_qubits, k, width, tuple(subcircuits), tuple(expected))


@dataclass(frozen=True)
class InterleavedCircuit:
    circuit: TaggedCircuit
    original_labels: tuple[int, ...]
    verifier_labels: tuple[tuple[int, ...], ...]


def interleave(original: TaggedCircuit, spec: VerifierSpec, rng: np.random.Generator) -> InterleavedCircuit:
    """Place verifier qubits after the original's and mix the two gate streams at random."""
    offset = (max(original.labels) + 1) if original.labels else 0
    verifier_gates: list[TaggedGate] = []
    groups = []
    for index, subcircuit in enumerate(spec.subcircuits):
        base = offset + index * spec.per_circuit
        groups.append(tuple(base + label for label in subcircuit.labels))
        for tagged in subcircuit.gates:
            moved = GateInstance(tagged.kind, tuple(base + t for t in tagged.targets), tagged.gate.params)
            verifier_gates.append(TaggedGate(moved, tagged.tag, GateRole.VERIFIER))
    slots = np.array([0] * len(original.gates) + [1] * len(verifier_gates))
    slots = slots[rng.permutation(len(slots))]
    streams = (iter(original.gates), iter(verifier_gates))
    merged = [next(streams[slot]) for slot in slots]
    labels = list(original.labels) + [label for group in groups for label in group]
    return InterleavedCircuit(TaggedCircuit(labels, merged), tuple(original.labels), tuple(groups))


def _interleaved_shot(protocol, combined: InterleavedCircuit, profile, expected, seed, path, options,
                      index) -> tuple[bool, str]:
    streams = RngStreams(seed, path).child("shot", index)
    bits = run_protocol(protocol, combined.circuit, profile, streams, measure=True, shuffle=True,
                        **options).bits
    mismatch = any(
        bitstring(bits, labels) != outcome for labels, outcome in zip(combined.verifier_labels, expected)
    )
    return mismatch, bitstring(bits, combined.original_labels)


def run_interleaved(
    circuit: TaggedCircuit,
    profile: CapabilityProfile,
    spec: VerifierSpec,
    adversary,
    rng: RngStreams | int,
    *,
    protocol: str = "p2",
    shots: int = 100,
    trap_density: float = 0.0,
    jobs: int = 1,
) -> DetectionReport:
    """Run original and verifier circuits together, shuffling on every send."""
    if protocol == "p4" or profile is None or not profile.can_swap_ports:
        raise VerificationUnsupported("verification needs a client that can mix its qubit ports")
    streams = as_streams(rng)
    combined = interleave(circuit, spec, streams.stream("interleave"))
    options = {"behavior": adversary}
    if protocol == "p3":
        options["trap_density"] = trap_density

    census_run = run_protocol(protocol, combined.circuit, profile, streams.child("census", 0),
                              measure=True, shuffle=True, **dict(options, behavior=None)).run
    original_gates = census_run.census({GateRole.CIRCUIT})
    verifier_gates = census_run.census({GateRole.VERIFIER})

    worker = partial(_interleaved_shot, protocol, combined, profile, spec.expected,
                     streams.seed, streams.path, options)
    if jobs > 1 and shots > 1:
        with multiprocessing.Pool(jobs) as pool:
            outcomes = pool.map(worker, range(shots))
    else:
        outcomes = [worker(index) for index in range(shots)]
    mismatches = sum(1 for mismatch, _ in outcomes if mismatch)
    report = DetectionReport(
        shots=shots,
        mismatches=mismatches,
        analytic_nondetection=nondetection_probability(max(circuit.n_qubits, 1), spec.n_qubits, shots),
        gate_nondetection=(
            gate_nondetection_probability(original_gates, verifier_gates, shots) if original_gates else 0.0
        ),
        instructions={"original": original_gates, "verifier": verifier_gates,
                      "total": census_run.census()},
        original_counts=Counter(outcome for _, outcome in outcomes),
    )
    logger.info("verification: %d/%d shots mismatched, verdict %s", mismatches, shots, report.verdict.value)
    return report


LADDER_PROFILE = CapabilityProfile.partial(2, ("X", "Z"))


def ladder_circuit(n_original: int, n_verifier: int, depth: int = 2) -> InterleavedCircuit:
    """Y-gate ladders a partial client must delegate; verifier qubits follow the original ones.

    Every delegated Y on a verifier qubit flips its outcome, so dropping it is
    always caught, and gate counts are proportional to qubit counts.
    """
    if n_original < 1 or n_verifier < 0 or depth < 1:
        raise BadArgument("ladders need N >= 1, N' >= 0 and depth >= 1")
    total = n_original + n_verifier
    gates = []
    for _ in range(depth):
        for label in range(total):
            role = GateRole.CIRCUIT if label < n_original else GateRole.VERIFIER
            gates.append(TaggedGate(GateInstance(GateKind.Y, (label,)), PrivacyTag.PUBLIC, role))
    verifier = tuple(range(n_original, total))
    return InterleavedCircuit(TaggedCircuit(total, gates), tuple(range(n_original)),
                              (verifier,) if verifier else ())


def _dropped_survival(protocol: str, combined: InterleavedCircuit, expected: Sequence[str],
                      profile: CapabilityProfile, seed: int, census: int, index: int) -> float:
    behavior = DropRandomGate(1, "all", census=census, forced=(index,))
    state = run_protocol(protocol, combined.circuit, profile, RngStreams(seed), shuffle=True,
                         behavior=behavior).state
    survive = 1.0
    for labels, outcome in zip(combined.verifier_labels, expected):
        survive *= basis_probabilities(state, labels).get(outcome, 0.0)
    return survive


def instruction_sensitivity(
    combined: InterleavedCircuit,
    expected: Sequence[str],
    profile: CapabilityProfile,
    seed: int,
    protocol: str = "p3",
    jobs: int = 1,
) -> tuple[np.ndarray, list[GateRole]]:
    """Exact chance that dropping each delegated instruction flips a verifier outcome."""
    base = run_protocol(protocol, combined.circuit, profile, RngStreams(seed), shuffle=True).run
    roles = [GateRole(m.ledger["role"]) for m in base.transcript.instructions()]
    census = len(roles)
    worker = partial(_dropped_survival, protocol, combined, tuple(expected), profile, seed, census)
    if jobs > 1 and census > 1:
        with multiprocessing.Pool(jobs) as pool:
            survival = pool.map(worker, range(census))
    else:
        survival = [worker(index) for index in range(census)]
    detect = np.clip(1.0 - np.array(survival, dtype=float), 0.0, 1.0)
    return detect, roles


@lru_cache(maxsize=16)
def _ladder_sensitivity(n_original: int, n_verifier: int, depth: int, seed: int,
                        jobs: int) -> tuple[np.ndarray, tuple[GateRole, ...]]:
    combined = ladder_circuit(n_original, n_verifier, depth)
    expected = ["1" * n_verifier if depth % 2 else "0" * n_verifier] if n_verifier else []
    detect, roles = instruction_sensitivity(combined, expected, LADDER_PROFILE, seed, jobs=jobs)
    detect.setflags(write=False)
    return detect, tuple(roles)


def detection_experiment(
    n_original: int,
    n_verifier: int,
    shots: int,
    trials: int,
    seed: int,
    depth: int = 2,
    chunk: int = 2000,
    jobs: int = 1,
) -> dict:
    """Monte-Carlo non-detection rate of a one-gate-per-shot dropping server.

    With zero trials only the analytic columns are filled, which is the only
    option once N + N' exceeds what the simulator holds.
    """
    if n_original < 1 or n_verifier < 0 or shots < 1 or trials < 0:
        raise BadArgument("need N >= 1, N' >= 0, n >= 1 and trials >= 0")
    original_gates, verifier_gates = depth * n_original, depth * n_verifier
    empirical = None
    if trials:
        if n_original + n_verifier > MAX_QUBITS:
            raise TooLargeToSimulate(
                f"{n_original + n_verifier} qubits exceed {MAX_QUBITS}; rerun with zero trials for the analytic row"
            )
        detect, roles = _ladder_sensitivity(n_original, n_verifier, depth, seed, jobs)
        original_gates = sum(1 for role in roles if role is GateRole.CIRCUIT)
        verifier_gates = sum(1 for role in roles if role is GateRole.VERIFIER)
        rng = RngStreams(seed).stream("trials")
        missed = 0
        for start in range(0, trials, chunk):
            size = min(chunk, trials - start)
            picks = rng.integers(0, len(detect), size=(size, shots))
            caught = rng.random((size, shots)) < detect[picks]
            missed += int(np.count_nonzero(~caught.any(axis=1)))
        empirical = missed / trials
        logger.info("ladder N=%d N'=%d n=%d: %d of %d trials undetected", n_original, n_verifier, shots,
                    missed, trials)
    gate_value = gate_nondetection_probability(original_gates, verifier_gates, shots)
    return {
        "N": n_original,
        "N'": n_verifier,
        "n": shots,
        "trials": trials,
        "empirical_nondetect": empirical,
        "analytic_nondetect": nondetection_probability(n_original, n_verifier, shots),
        "gate_nondetect": gate_value,
        "log10_analytic_nondetect": log10_nondetection_probability(n_original, n_verifier, shots),
        "sigma": math.sqrt(gate_value * (1 - gate_value) / trials) if trials else None,
    }


def experiment_csv(rows: Sequence[dict]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=EXPERIMENT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({column: row[column] for column in EXPERIMENT_COLUMNS})
    return buffer.getvalue()


def distribution_check(counts: Counter, shots: int, reference: dict[str, float],
                       sigmas: float = 4.0) -> tuple[bool, float]:
    """Compare sampled counts with reference probabilities outcome by outcome.

    Returns whether every frequency lies within `sigmas` binomial standard
    deviations of its reference value, and the worst deviation in sigma units.
    The variance is floored at one count so a rare outcome seen once is not
    flagged; an outcome the reference rules out always fails.
    """
    if shots < 1:
        return True, 0.0
    worst = 0.0
    passed = True
    for outcome in sorted(set(reference) | set(counts)):
        p = min(max(reference.get(outcome, 0.0), 0.0), 1.0)
        frequency = counts.get(outcome, 0) / shots
        gap = abs(frequency - p)
        if gap <= 1e-9:
            continue
        if p <= 1e-12:
            return False, math.inf
        sigma = math.sqrt(max(p * (1 - p), 1 / shots) / shots)
        worst = max(worst, gap / sigma)
        passed = passed and gap <= sigmas * sigma
    return passed, worst
