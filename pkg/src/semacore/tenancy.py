"""Multi-tenant resource resolution and the two-tier session state.

Every engine instance owns a ResourceBundle (event bus, state manager, tool
orchestrator, config). Code running on behalf of an instance resolves the
bundle through a continuation-local variable rather than globals, so any
number of instances can share one process and one event loop without leaking
state into each other. Resolution is two-tier: the context-bound bundle wins;
outside any context a single lazily created fallback bundle is used, so
embedding code that never opts into multi-tenancy still works.

Session state is split per the ownership rule: anything one agent mutates
during its loop lives in AgentLocalState (history, todos, file reads,
execution status); anything shared across the session's agents lives in
GlobalState (edit permission flag, the active abort signal, a staged session
switch, the input queue).
"""

from __future__ import annotations

import asyncio
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Any, Awaitable, Callable

from .config import EngineConfig
from .events import EventBus


class AbortSignal:
    """Trip-once cancellation flag observable from any task."""

    def __init__(self) -> None:
        self._event = asyncio.Event()

    @property
    def tripped(self) -> bool:
        return self._event.is_set()

    def trip(self) -> None:
        self._event.set()

    async def wait(self) -> None:
        await self._event.wait()


IDLE = "idle"
PROCESSING = "processing"


@dataclass
class AgentLocalState:
    """State owned by a single agent inside a session."""

    agent_id: str
    exec_status: str = IDLE
    history: list = field(default_factory=list)        # list[Message]
    todos: list = field(default_factory=list)          # list[TodoItem]
    file_reads: dict = field(default_factory=dict)     # path -> last read time
    pending_skills: list = field(default_factory=list) # skill bodies, turn-scoped


@dataclass
class GlobalState:
    """State shared by every agent in a session."""

    g_edit: bool = False
    abort: AbortSignal = field(default_factory=AbortSignal)
    pending_session: str | None = None
    input_queue: Any = None

    def rearm_abort(self) -> None:
        # Signals are trip-once; each turn starts with a live one.
        if self.abort.tripped:
            self.abort = AbortSignal()


@dataclass
class SessionState:
    local: dict[str, AgentLocalState]
    global_state: GlobalState


@dataclass
class ResourceBundle:
    """The four per-instance components everything else resolves through."""

    event_bus: EventBus
    state_manager: Any
    tool_orchestrator: Any
    tenant_config: EngineConfig


class NoContextError(RuntimeError):
    pass


_ACTIVE: ContextVar[ResourceBundle | None] = ContextVar("semacore_bundle", default=None)
_fallback: ResourceBundle | None = None
_fallback_factory: Callable[[], ResourceBundle] | None = None


def register_fallback_factory(factory: Callable[[], ResourceBundle]) -> None:
    global _fallback_factory
    _fallback_factory = factory


def reset_fallback() -> None:
    """Drop the lazily created fallback bundle (test isolation hook)."""
    global _fallback
    _fallback = None


def current_bundle() -> ResourceBundle | None:
    return _ACTIVE.get()


def resolve_resources() -> ResourceBundle:
    """Context-bound bundle if inside run_in_context, else the global fallback.

    The fallback is created on first use and then reused; repeated calls
    outside any context return the identical object.
    """
    bundle = _ACTIVE.get()
    if bundle is not None:
        return bundle
    global _fallback
    if _fallback is None:
        if _fallback_factory is None:
            raise NoContextError("no execution context and no fallback factory registered")
        _fallback = _fallback_factory()
    return _fallback


async def run_in_context(owner: Any, task: Awaitable | Callable[[], Awaitable]) -> Any:
    """Run ``task`` with ``owner``'s bundle bound for the whole await chain.

    ``owner`` is a ResourceBundle or anything with a ``.bundle`` attribute.
    Nesting is fine: the innermost binding wins and is restored on exit.
    """
    bundle = owner if isinstance(owner, ResourceBundle) else owner.bundle
    token = _ACTIVE.set(bundle)
    try:
        if callable(task):
            task = task()
        return await task
    finally:
        _ACTIVE.reset(token)
