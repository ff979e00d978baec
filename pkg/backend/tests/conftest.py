import numpy as np
import pytest

from scripts.blind_delegation.circuit_ir import CapabilityProfile
from scripts.blind_delegation.scenarios import grover3, qaoa3, qnn3


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["grover3", "qaoa3", "qnn3"])
def scenario(request):
    return {"grover3": grover3, "qaoa3": qaoa3, "qnn3": qnn3}[request.param]()


@pytest.fixture
def full_m2():
    return CapabilityProfile.full(2)


@pytest.fixture
def one_qubit_m2():
    return CapabilityProfile.one_qubit_gates(2)
