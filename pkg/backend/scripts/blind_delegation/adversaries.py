"""
Server behaviors that test the privacy and verification claims.

A behavior turns an honest ServerActor into one that deviates. Behaviors
never touch classical messages: the transcript always records what the
client instructed, and deviations go to the actor's own log.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .circuit_ir import GateRole
from .errors import BadArgument
from .protocol_engine import ServerActor
from .sim_core import GateInstance, StateVector, apply_gate, measure_z

logger = logging.getLogger(__name__)

SCOPES = {
    "all": None,
    "original": frozenset({GateRole.CIRCUIT}),
    "verifier": frozenset({GateRole.VERIFIER}),
}


@dataclass(frozen=True)
class Honest:
    needs_census = False
    roles = None

    def wrap(self, server: ServerActor, rng: np.random.Generator | None = None) -> ServerActor:
        return server

    def describe(self) -> str:
        return "honest"


@dataclass(frozen=True)
class DropRandomGate:
    """Silently skip `count` instructed gates per run, uniform over the scope."""

    count: int = 1
    scope: str = "all"
    census: int | None = None
    forced: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.count < 0:
            raise BadArgument("drop count must be non-negative")
        if self.forced is not None and self.census is not None and any(
            not 0 <= i < self.census for i in self.forced
        ):
            raise BadArgument(f"forced drop indices {self.forced} outside 0..{self.census - 1}")
        if self.scope not in SCOPES:
            raise BadArgument(f"unknown drop scope {self.scope!r}; expected one of {sorted(SCOPES)}")

    @property
    def roles(self):
        return SCOPES[self.scope]

    @property
    def needs_census(self) -> bool:
        return self.census is None

    def with_census(self, census: int) -> "DropRandomGate":
        return replace(self, census=int(census))

    def wrap(self, server: ServerActor, rng: np.random.Generator) -> ServerActor:
        if self.census is None:
            raise BadArgument("DropRandomGate needs the number of in-scope instructions first")
        if self.forced is not None:
            picks = self.forced
        else:
            size = min(self.count, self.census)
            picks = rng.choice(self.census, size=size, replace=False) if size else []
        return DroppingServer(server.name, frozenset(int(i) for i in picks), self.roles)

    def describe(self) -> str:
        return f"drop:{self.count}:{self.scope}"


@dataclass(frozen=True)
class MeasureAndResend:
    """Measure the watched wires in Z before every batch, then carry on honestly."""

    wires: tuple[int, ...] = (0,)
    needs_census = False
    roles = None

    def wrap(self, server: ServerActor, rng: np.random.Generator | None = None) -> ServerActor:
        return MeasuringServer(server.name, frozenset(self.wires))

    def describe(self) -> str:
        return "measure:" + ",".join(str(w) for w in self.wires)


class DroppingServer(ServerActor):
    def __init__(self, name: str, drops: frozenset, roles):
        super().__init__(name)
        self.drops = drops
        self.roles = roles
        self.in_scope = 0

    def apply(self, state: StateVector, gate: GateInstance, role: GateRole,
              rng: np.random.Generator) -> StateVector:
        self.instructed += 1
        if self.roles is None or role in self.roles:
            index = self.in_scope
            self.in_scope += 1
            if index in self.drops:
                self.log.append({"event": "drop", "index": index, "gate": gate.kind.value})
                logger.debug("%s dropped in-scope instruction %d (%s)", self.name, index, gate.kind.value)
                return state
        self.applied += 1
        return apply_gate(state, gate)


class MeasuringServer(ServerActor):
    def __init__(self, name: str, watched: frozenset):
        super().__init__(name)
        self.watched = watched

    def before_batch(self, state: StateVector, wires: dict[int, int], rng: np.random.Generator) -> StateVector:
        for label, wire in sorted(wires.items(), key=lambda item: item[1]):
            if wire not in self.watched:
                continue
            state, record = measure_z(state, label, rng)
            self.log.append({"event": "measure", "wire": wire, "outcome": record.outcome})
        return state


def wrap_server(behavior, server: ServerActor, rng: np.random.Generator | None = None) -> ServerActor:
    return behavior.wrap(server, rng)


def parse_behavior(text: str | None):
    """Behavior from its command-line form: honest, drop:N[:scope] or measure:W[,W...]."""
    if not text or text == "honest":
        return Honest()
    name, _, rest = text.partition(":")
    try:
        if name == "drop":
            count, _, scope = rest.partition(":")
            return DropRandomGate(int(count or 1), scope or "all")
        if name == "measure":
            return MeasureAndResend(tuple(int(w) for w in rest.split(",") if w))
    except ValueError as exc:
        raise BadArgument(f"malformed adversary {text!r}: {exc}") from exc
    raise BadArgument(f"unknown adversary {text!r}; expected honest, drop:N[:scope] or measure:W,...")


def export_log(server: ServerActor) -> str:
    return json.dumps({"server": server.name, "events": server.log}, sort_keys=True, indent=2)
