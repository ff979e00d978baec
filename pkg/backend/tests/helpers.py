"""Shared assertions for the simulator tests."""

import math

import numpy as np

from scripts.blind_delegation.sim_core import StateVector, fidelity_up_to_global_phase

TOLERANCE = 1e-10


def assert_same_state(actual: StateVector, expected: StateVector, tolerance: float = TOLERANCE):
    fidelity = fidelity_up_to_global_phase(actual, expected)
    assert fidelity >= 1 - tolerance, f"fidelity {fidelity:.15f}"


def sigma(p: float, shots: int) -> float:
    return math.sqrt(p * (1 - p) / shots)


def random_state(labels, rng: np.random.Generator) -> StateVector:
    amplitudes = rng.normal(size=2 ** len(labels)) + 1j * rng.normal(size=2 ** len(labels))
    return StateVector(amplitudes / np.linalg.norm(amplitudes), tuple(labels))


def equal_up_to_phase(a: np.ndarray, b: np.ndarray, tolerance: float = 1e-12) -> bool:
    """Whether two matrices differ only by a global phase."""
    index = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    if abs(b[index]) < tolerance:
        return np.allclose(a, b, atol=tolerance)
    phase = a[index] / b[index]
    return abs(abs(phase) - 1) < tolerance and np.allclose(a, phase * b, atol=tolerance)
