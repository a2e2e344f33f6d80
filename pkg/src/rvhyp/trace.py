"""Trace events emitted by a machine while it runs."""

import json
from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: str
    payload: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"seq": self.seq, "kind": self.kind, **self.payload},
                          separators=(",", ":"))


def hexs(value: int | None) -> str | None:
    return None if value is None else f"0x{value:x}"


class Tracer:
    """Collects events with strictly increasing sequence numbers."""

    def __init__(self) -> None:
        self.events: list[TraceEvent] = []

    def emit(self, kind: str, **payload: Any) -> TraceEvent:
        event = TraceEvent(len(self.events), kind, payload)
        self.events.append(event)
        return event

    def lines(self) -> list[str]:
        return [e.to_json() for e in self.events]

    def of_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]


class NullTracer(Tracer):
    """Drops events; used by the fuzzer where traces would only cost time."""

    def emit(self, kind: str, **payload: Any) -> TraceEvent:
        return TraceEvent(-1, kind, payload)
