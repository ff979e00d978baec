"""
Error types raised by the delegation simulator.

Every failure the simulator reports is a DelegationError so runners and the
web service can tell invalid input apart from unexpected crashes.
"""


class DelegationError(RuntimeError):
    """Base class for every simulator error."""


class UnknownQubit(DelegationError):
    pass


class BadGate(DelegationError):
    pass


class LabelMismatch(DelegationError):
    pass


class BadArgument(DelegationError):
    pass


class NoCapacity(DelegationError):
    """The client has no free qubit slot to generate keys in."""


class UnsupportedConjugation(DelegationError):
    """The gate is outside the set the server may apply to encrypted qubits."""


class CorrectionNotLocal(DelegationError):
    """A pending correction touches a qubit the decrypting party does not hold."""


class CircuitUnsupportedByProfile(DelegationError):
    pass


class SchedulerStuck(DelegationError):
    pass


class ProtocolViolation(DelegationError):
    pass


class TooLargeToSimulate(DelegationError):
    pass


class VerificationUnsupported(DelegationError):
    pass
