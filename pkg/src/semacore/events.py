"""Typed engine events, the line-delimited JSON wire codec, and the event bus.

Every event names its session and agent so multiplexed consumers can route
without side tables. The wire format is one JSON object per line: version tag
``v``, a ``type`` discriminator, and the payload fields flattened alongside.
Serialization is byte-deterministic (sorted keys, compact separators) so
transcripts can be compared with ``==``.
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import asdict, dataclass, field

WIRE_VERSION = 1


@dataclass(frozen=True)
class EngineEvent:
    session_id: str
    agent_id: str


@dataclass(frozen=True)
class TextChunk(EngineEvent):
    text: str


@dataclass(frozen=True)
class ThinkingChunk(EngineEvent):
    thinking: str


@dataclass(frozen=True)
class ToolCallStarted(EngineEvent):
    call_id: str
    tool_name: str
    args: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ToolResultEvent(EngineEvent):
    call_id: str
    tool_name: str
    content: str
    is_error: bool = False
    is_user_refusal: bool = False


@dataclass(frozen=True)
class TokenStats(EngineEvent):
    """Context metering snapshot; ``phase`` tags why it was emitted
    (measure, compress_triggered, summarized, truncated)."""

    context_tokens: int
    limit: int
    phase: str = "measure"


@dataclass(frozen=True)
class PermissionRequested(EngineEvent):
    request_id: str
    layer: str
    summary: str
    risk_note: str = ""


@dataclass(frozen=True)
class TodoUpdated(EngineEvent):
    todos: list = field(default_factory=list)   # [{id, content, state}]
    update_kind: str = "replace"                # replace | subset


@dataclass(frozen=True)
class BackgroundNotification(EngineEvent):
    task_id: str
    status: str
    exit_code: int | None = None
    message: str = ""


@dataclass(frozen=True)
class SessionComplete(EngineEvent):
    status: str       # completed | aborted
    reason: str = ""


@dataclass(frozen=True)
class ErrorEvent(EngineEvent):
    message: str
    code: str = ""


EVENT_TYPES: dict[str, type[EngineEvent]] = {
    "text_chunk": TextChunk,
    "thinking_chunk": ThinkingChunk,
    "tool_call_started": ToolCallStarted,
    "tool_result": ToolResultEvent,
    "token_stats": TokenStats,
    "permission_request": PermissionRequested,
    "todo_update": TodoUpdated,
    "background_notification": BackgroundNotification,
    "session_complete": SessionComplete,
    "error": ErrorEvent,
}
_TYPE_NAMES = {cls: name for name, cls in EVENT_TYPES.items()}


def event_type(event: EngineEvent) -> str:
    return _TYPE_NAMES[type(event)]


class WireDecodeError(ValueError):
    """Raised for frames that are not well-formed engine events."""


def serialize_event(event: EngineEvent) -> str:
    """One deterministic JSON line (no trailing newline)."""
    cls = type(event)
    if cls not in _TYPE_NAMES:
        raise TypeError(f"not a wire event: {cls.__name__}")
    frame = {"v": WIRE_VERSION, "type": _TYPE_NAMES[cls], **asdict(event)}
    return json.dumps(frame, sort_keys=True, separators=(",", ":"))


def deserialize_event(line: str) -> EngineEvent:
    """Inverse of serialize_event. The variant set is closed: unknown types,
    version mismatches, and field mismatches all raise WireDecodeError."""
    try:
        frame = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireDecodeError(f"invalid JSON: {exc}") from None
    if not isinstance(frame, dict):
        raise WireDecodeError("frame is not an object")
    if frame.pop("v", None) != WIRE_VERSION:
        raise WireDecodeError("missing or unsupported version tag")
    type_name = frame.pop("type", None)
    cls = EVENT_TYPES.get(type_name)
    if cls is None:
        raise WireDecodeError(f"unknown event type: {type_name!r}")
    try:
        return cls(**frame)
    except TypeError as exc:
        raise WireDecodeError(f"bad fields for {type_name}: {exc}") from None


class EventBus:
    """Per-instance fan-out of engine events to subscriber queues.

    publish() is synchronous and non-blocking; each subscriber gets every
    event in publication order. Slow consumers are the service layer's
    problem (see service.DropBuffer), not the engine's.
    """

    def __init__(self) -> None:
        self._subscribers: list[asyncio.Queue] = []

    def subscribe(self) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue()
        self._subscribers.append(q)
        return q

    def unsubscribe(self, q: asyncio.Queue) -> None:
        if q in self._subscribers:
            self._subscribers.remove(q)

    def publish(self, event: EngineEvent) -> None:
        for q in list(self._subscribers):
            q.put_nowait(event)
