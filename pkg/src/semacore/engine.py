"""Engine instances and sessions: dispatch, turn lifecycle, reconstruction.

An EngineInstance is one fully isolated engine: its own event bus, adapter,
tool registry, policy store, background pool, and sessions. Any number of
instances coexist on one event loop; instance code resolves its resources
through the tenancy context so nothing leaks across.

Dispatch follows the execution-status mirror: an idle session starts a turn
immediately, a busy one enqueues. Turn finalization is synchronous with turn
completion (no await between them), so an observer can never catch a session
idle with work it should have started: either a staged session switch is
applied (purging every trace of the old session) or the next queued batch
starts.
"""

from __future__ import annotations

import asyncio
import itertools
from dataclasses import asdict, dataclass
from pathlib import Path

from . import tenancy
from .adapters import select_adapter
from .background import BackgroundManager, PrimaryShell
from .config import EngineConfig
from .context import ContextBudget
from .events import (
    BackgroundNotification,
    ErrorEvent,
    EventBus,
    SessionComplete,
    TextChunk,
)
from .permissions import ApprovalBroker, PolicyStore, Resolution
from .queueing import COMMAND, SessionQueue, classify
from .runtime import MAIN_AGENT, AgentRuntime
from .skills import BUILTIN_SKILLS_DIR, load_skills
from .tenancy import IDLE, PROCESSING, AgentLocalState, GlobalState, ResourceBundle, SessionState
from .tools import ToolRegistry, build_default_registry


class SessionUnknownError(KeyError):
    pass


@dataclass
class StateManager:
    """SessionState accessor half of the resource bundle."""

    instance: "EngineInstance"

    def get(self, session_id: str) -> SessionState:
        return self.instance.require_session(session_id).state

    def active(self) -> SessionState | None:
        session = self.instance.active_session
        return session.state if session else None


@dataclass
class ToolOrchestrator:
    """Tool registry plus the scheduler that runs plans against it."""

    registry: ToolRegistry
    runtime: AgentRuntime


class Session:
    """One conversation: a main agent, transient sub-agents, shared state."""

    def __init__(self, session_id: str, instance: "EngineInstance"):
        self.id = session_id
        self.instance = instance
        self.local: dict[str, AgentLocalState] = {MAIN_AGENT: AgentLocalState(MAIN_AGENT)}
        self.global_state = GlobalState()
        self.queue = SessionQueue()
        self.global_state.input_queue = self.queue
        self._notes: list[str] = []
        self._turn: asyncio.Task | None = None
        self._sub_seq = 0

    @property
    def state(self) -> SessionState:
        return SessionState(local=self.local, global_state=self.global_state)

    def next_sub_id(self) -> int:
        self._sub_seq += 1
        return self._sub_seq

    def drain_notes(self) -> list[str]:
        notes = self._notes
        self._notes = []
        return notes

    @property
    def busy(self) -> bool:
        return self._turn is not None

    # --------------------------------------------------------- dispatch

    def dispatch(self, content: str) -> str:
        """Start a turn if idle, else enqueue. Never drops an item."""
        self.instance.stats["dispatched"] += 1
        main = self.local[MAIN_AGENT]
        if main.exec_status == IDLE and self._turn is None:
            self.instance.stats["processed"] += 1
            if classify(content) == COMMAND:
                self._start_command_turn(content)
            else:
                self._start_query_turn(content)
            return "started"
        self.queue.push(content)
        return "enqueued"

    def _start_query_turn(self, prompt: str) -> None:
        self.local[MAIN_AGENT].exec_status = PROCESSING
        self._turn = self.instance.spawn(self._query_runner(prompt))

    def _start_command_turn(self, content: str) -> None:
        self.local[MAIN_AGENT].exec_status = PROCESSING
        self._turn = self.instance.spawn(self._command_runner(content))

    async def _query_runner(self, prompt: str) -> None:
        try:
            await self.instance.runtime.run_query(self, prompt)
        finally:
            self._turn = None
            self._finalize()

    async def _command_runner(self, content: str) -> None:
        main = self.local[MAIN_AGENT]
        try:
            self.global_state.rearm_abort()
            self._execute_command(content)
            self.instance.bus.publish(
                SessionComplete(
                    session_id=self.id, agent_id=MAIN_AGENT,
                    status="completed", reason="command",
                )
            )
        finally:
            main.exec_status = IDLE
            self._turn = None
            self._finalize()

    def _execute_command(self, content: str) -> None:
        parts = content.split()
        name = parts[0]
        if name == "/new":
            if len(parts) < 2:
                self._error("usage: /new <session_id>", "bad-command")
                return
            self.request_switch(parts[1])
        elif name == "/abort":
            self.global_state.abort.trip()
        elif name == "/status":
            main = self.local[MAIN_AGENT]
            lines = [
                f"session {self.id}",
                f"queued items: {len(self.queue)}",
                f"todos: {len(main.todos)}",
                f"history messages: {len(main.history)}",
                f"background active: {len(self.instance.bg_manager.active)}",
            ]
            self.instance.bus.publish(
                TextChunk(session_id=self.id, agent_id=MAIN_AGENT, text="\n".join(lines))
            )
        else:
            self._error(f"unknown command: {name}", "unknown-command")

    def _error(self, message: str, code: str) -> None:
        self.instance.bus.publish(
            ErrorEvent(session_id=self.id, agent_id=MAIN_AGENT, message=message, code=code)
        )

    # ------------------------------------------------------ turn end

    def _finalize(self) -> None:
        """Runs exactly once per turn, synchronously with its completion."""
        if self.global_state.pending_session is not None:
            self.instance.reconstruct(self.id, self.global_state.pending_session)
            return
        batch = self.queue.dequeue_batch()
        if batch is None:
            return
        self.instance.stats["processed"] += batch.item_count
        if batch.kind == COMMAND:
            self._start_command_turn(batch.content)
        else:
            self._start_query_turn(batch.content)

    # ------------------------------------------------------- control

    def request_switch(self, new_session_id: str) -> str:
        """Stage a switch if busy (applied at finalize), else apply now."""
        if self._turn is not None:
            self.global_state.pending_session = new_session_id  # last one wins
            self.global_state.abort.trip()
            return "staged"
        self.instance.reconstruct(self.id, new_session_id)
        return "applied"

    def trip_abort(self) -> None:
        self.global_state.abort.trip()

    def notify_background(self, message: str) -> None:
        """Deliver a completion note: synthetic turn when idle, staged when busy."""
        if self._turn is not None:
            self._notes.append(message)
        else:
            self.dispatch(message)

    # ------------------------------------------------------ inspection

    def state_dump(self) -> dict:
        """Deep, comparison-friendly view of everything session-scoped."""
        return {
            "agents": {
                agent_id: {
                    "exec_status": a.exec_status,
                    "history": [asdict(m) for m in a.history],
                    "todos": [asdict(t) for t in a.todos],
                    "file_reads": sorted(a.file_reads),
                    "pending_skills": list(a.pending_skills),
                }
                for agent_id, a in self.local.items()
            },
            "g_edit": self.global_state.g_edit,
            "pending_session": self.global_state.pending_session,
            "queue": self.queue.snapshot(),
            "notes": list(self._notes),
        }


class EngineInstance:
    """One embedded engine; everything it owns hangs off this object."""

    def __init__(self, config: EngineConfig):
        config.validate()
        self.config = config
        self.workspace = Path(config.workspace).resolve()
        self.bus = EventBus()
        self.adapter = select_adapter(config)
        self.registry = build_default_registry()
        self.policy_store = PolicyStore(
            self.workspace / ".sema" / "policy.json",
            seed_whitelist=config.effective_whitelist(),
        )
        self.bg_manager = BackgroundManager(
            self.workspace / ".sema" / "bg",
            max_concurrent=config.max_background,
            retention=config.background_retention,
            on_terminal=self._on_background_terminal,
            cwd=self.workspace,
        )
        self.shell = PrimaryShell(self.bg_manager, config.timeout_threshold, self.workspace)
        self.broker = ApprovalBroker()
        skill_report = load_skills(
            project_dir=self.workspace / ".sema" / "skills",
            user_dir=config.user_skills_dir or None,
            builtin_dir=BUILTIN_SKILLS_DIR,
        )
        self.skills = skill_report.registry
        self.skill_warnings = list(skill_report.warnings)
        self._warned = False
        self.runtime = AgentRuntime(self)
        self.budget = ContextBudget(
            limit=config.context_limit,
            forward_buffer=config.forward_buffer,
            trigger_ratio=config.compress_ratio,
        )
        self.sessions: dict[str, Session] = {}
        self.active_session_id: str | None = None
        self.stats = {"dispatched": 0, "processed": 0, "purged": 0}
        self._request_seq = itertools.count(1)
        self.bundle = ResourceBundle(
            event_bus=self.bus,
            state_manager=StateManager(self),
            tool_orchestrator=ToolOrchestrator(self.registry, self.runtime),
            tenant_config=config,
        )

    # ------------------------------------------------------- sessions

    def create_session(self, session_id: str = "s1") -> Session:
        if session_id in self.sessions:
            raise ValueError(f"session already exists: {session_id}")
        session = Session(session_id, self)
        self.sessions[session_id] = session
        self.active_session_id = session_id
        return session

    @property
    def active_session(self) -> Session | None:
        if self.active_session_id is None:
            return None
        return self.sessions.get(self.active_session_id)

    def require_session(self, session_id: str | None = None) -> Session:
        sid = session_id or self.active_session_id
        if sid is None or sid not in self.sessions:
            raise SessionUnknownError(f"unknown session: {session_id!r}")
        return self.sessions[sid]

    def reconstruct(self, old_session_id: str, new_session_id: str) -> Session:
        """Purge the old session completely and boot a fresh one.

        The new id always hosts *fresh* state, even if a session by that name
        existed before: reconstruction promises zero residue.
        """
        for sid in {old_session_id, new_session_id}:
            stale = self.sessions.pop(sid, None)
            if stale is not None:
                self.stats["purged"] += stale.queue.purge()
                stale.global_state.pending_session = None
                stale._notes.clear()
        return self.create_session(new_session_id)

    # ----------------------------------------------------- public API

    def dispatch(self, content: str, session_id: str | None = None) -> str:
        return self.require_session(session_id).dispatch(content)

    def resolve(self, request_id: str, resolution: Resolution) -> bool:
        return self.broker.resolve(request_id, resolution)

    def trip_abort(self, session_id: str | None = None) -> None:
        self.require_session(session_id).trip_abort()

    def request_session_switch(self, new_session_id: str, session_id: str | None = None) -> str:
        return self.require_session(session_id).request_switch(new_session_id)

    def subscribe(self) -> asyncio.Queue:
        return self.bus.subscribe()

    def spawn(self, coro) -> asyncio.Task:
        """Run a coroutine bound to this instance's resource context."""
        return asyncio.create_task(tenancy.run_in_context(self, coro))

    def next_request_id(self) -> str:
        return f"req-{next(self._request_seq)}"

    async def wait_idle(self, timeout: float = 30.0) -> None:
        """Block until no session has a turn running or queued work."""
        loop = asyncio.get_running_loop()
        deadline = loop.time() + timeout
        while True:
            busy = any(
                s._turn is not None or len(s.queue) > 0 for s in self.sessions.values()
            )
            if not busy:
                return
            if loop.time() > deadline:
                raise asyncio.TimeoutError("engine did not go idle in time")
            await asyncio.sleep(0.002)

    async def close(self) -> None:
        for session in list(self.sessions.values()):
            session.trip_abort()
        await self.bg_manager.shutdown()
        for session in list(self.sessions.values()):
            if session._turn is not None:
                try:
                    await asyncio.wait_for(asyncio.shield(session._turn), timeout=2.0)
                except (asyncio.TimeoutError, asyncio.CancelledError):
                    session._turn.cancel()

    # ------------------------------------------------------- internals

    def flush_boot_warnings(self, session: Session) -> None:
        if self._warned or not self.skill_warnings:
            self._warned = True
            return
        self._warned = True
        for warning in self.skill_warnings:
            self.bus.publish(
                ErrorEvent(
                    session_id=session.id, agent_id=MAIN_AGENT,
                    message=warning, code="skill-warning",
                )
            )

    def _on_background_terminal(self, task) -> None:
        session = self.active_session
        if session is None:
            return
        message = f"[background task {task.task_id} {task.status}"
        if task.exit_code is not None:
            message += f" exit={task.exit_code}"
        message += "]"
        self.bus.publish(
            BackgroundNotification(
                session_id=session.id, agent_id=MAIN_AGENT,
                task_id=task.task_id, status=task.status,
                exit_code=task.exit_code, message=message,
            )
        )
        session.notify_background(message)


def create_instance(config: EngineConfig) -> EngineInstance:
    """Validate the config and build a fully wired engine instance."""
    return EngineInstance(config)


def _fallback_bundle() -> ResourceBundle:
    # Outside any instance context: a minimal engine with an empty script.
    return EngineInstance(EngineConfig(script=[])).bundle


tenancy.register_fallback_factory(_fallback_bundle)
