# Blind delegated quantum computation simulator
from .circuit_ir import CapabilityProfile, GateRole, PrivacyTag, TaggedCircuit, TaggedGate
from .errors import DelegationError
from .protocol_engine import run_protocol, run_protocol2, run_protocol3, run_protocol4, sample_outcomes
from .scenarios import SCENARIOS, load_circuit
from .sim_core import GateInstance, GateKind, RngStreams, StateVector

__all__ = [
    "CapabilityProfile",
    "DelegationError",
    "GateInstance",
    "GateKind",
    "GateRole",
    "PrivacyTag",
    "RngStreams",
    "SCENARIOS",
    "StateVector",
    "TaggedCircuit",
    "TaggedGate",
    "load_circuit",
    "run_protocol",
    "run_protocol2",
    "run_protocol3",
    "run_protocol4",
    "sample_outcomes",
]
