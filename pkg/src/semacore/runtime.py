"""The agent loop: model turns, tool scheduling, interrupts, delegation.

One query turn is: compress if needed, stream a model turn, dispatch the
tool plan (all-read batches in parallel, anything else strictly serial, in
plan order), flush results into history, recurse until a turn produces no
tool calls. Interrupts are honored at four phases; whichever phase the abort
lands in, the history that remains is structurally valid: every dispatched
call gets exactly one result (real, refusal, or cancellation placeholder).

Sub-agents run the same loop one level deep on a private history inside the
same session, inherit the parent's live permission scope, bypass context
compression, and are purged atomically when they report back.
"""

from __future__ import annotations

import asyncio
import time
from dataclasses import dataclass
from pathlib import Path

from .adapters import (
    EMIT_TEXT,
    EMIT_THINKING,
    ModelRequest,
    collect_turn,
)
from .context import maybe_compress
from .events import (
    EngineEvent,
    ErrorEvent,
    PermissionRequested,
    SessionComplete,
    TextChunk,
    ThinkingChunk,
    ToolCallStarted,
    ToolResultEvent,
)
from .messages import (
    ASSISTANT,
    TOOL_CALL,
    USER,
    ContentBlock,
    Message,
    message_text,
    text_block,
    tool_result_block,
    user_message,
)
from .permissions import (
    GUIDED_CORRECTION,
    L1_FILE_EDIT,
    L2_BASH,
    L3_SKILL,
    L4_EXTERNAL,
    PERSISTENT_ALLOW,
    REJECT,
    OperationRequest,
    PolicyContext,
    decide,
)
from .tenancy import IDLE, PROCESSING, AgentLocalState
from .tools import READ_ONLY, ToolContext, ToolError

POST_INFERENCE_DISPATCH = "post_inference_dispatch"
PRE_EXECUTION = "pre_execution"
ACTIVE_EXECUTION = "active_execution"
RECURSION_TERMINATION = "recursion_termination"
PHASES = (POST_INFERENCE_DISPATCH, PRE_EXECUTION, ACTIVE_EXECUTION, RECURSION_TERMINATION)

MAIN_AGENT = "main"

_ASSETS = Path(__file__).parent / "assets"
MAIN_PROMPT = (_ASSETS / "system_main.md").read_text()
SUBAGENT_PROMPT = (_ASSETS / "system_subagent.md").read_text()


@dataclass
class SubAgentReport:
    agent_id: str
    status: str
    final_text: str
    tokens_consumed: int
    wall_time: float


def _repo_status(workspace: Path) -> str:
    lines = [f"Workspace: {workspace}"]
    head = workspace / ".git" / "HEAD"
    if head.is_file():
        ref = head.read_text().strip()
        branch = ref.rsplit("/", 1)[-1] if ref.startswith("ref:") else ref[:12]
        lines.append(f"Git branch: {branch}")
    return "\n".join(lines)


class AgentRuntime:
    """Drives agents for one engine instance."""

    def __init__(self, instance):
        self.instance = instance
        # Test seam: async callable (phase, session, agent_id) awaited at each
        # interrupt phase. None in production.
        self.phase_probe = None

    # ---------------------------------------------------------- events

    def _emit(self, session, agent_id: str, cls: type[EngineEvent], **fields) -> None:
        self.instance.bus.publish(cls(session_id=session.id, agent_id=agent_id, **fields))

    async def _probe(self, phase: str, session, agent_id: str) -> None:
        if self.phase_probe is not None:
            await self.phase_probe(phase, session, agent_id)

    # ----------------------------------------------------------- query

    async def run_query(self, session, prompt: str) -> str:
        """One user-visible query turn on the main agent."""
        agent = session.local[MAIN_AGENT]
        agent.exec_status = PROCESSING
        session.global_state.rearm_abort()
        self.instance.flush_boot_warnings(session)
        parts = [prompt]
        parts.extend(session.drain_notes())
        agent.history.append(user_message(text_block("\n\n".join(parts))))
        try:
            status, reason = await self._loop(
                session, agent, self.instance.registry, self._main_prompt(), main=True
            )
        except Exception as exc:  # engine bugs become error events, not hangs
            self._emit(session, agent.agent_id, ErrorEvent, message=repr(exc), code="internal")
            status, reason = "aborted", "internal-error"
        finally:
            agent.exec_status = IDLE
            agent.pending_skills.clear()
        self._emit(session, agent.agent_id, SessionComplete, status=status, reason=reason)
        return status

    def _main_prompt(self) -> str:
        return MAIN_PROMPT.format(repo_status=_repo_status(self.instance.workspace))

    def _subagent_prompt(self) -> str:
        return SUBAGENT_PROMPT.format(repo_status=_repo_status(self.instance.workspace))

    # ------------------------------------------------------------ loop

    async def _loop(
        self, session, agent: AgentLocalState, registry, base_prompt: str, main: bool
    ) -> tuple[str, str]:
        abort = lambda: session.global_state.abort  # rearmed per turn; resolve late
        cfg = self.instance.config
        for _ in range(cfg.max_turns):
            if main:
                await maybe_compress(
                    agent,
                    self.instance.adapter,
                    self.instance.budget,
                    lambda cls, **f: self._emit(session, agent.agent_id, cls, **f),
                    abort=abort(),
                    timeout=cfg.summarize_timeout,
                )
            if abort().tripped:
                return "aborted", "interrupted"

            system_prompt = base_prompt
            if agent.pending_skills:
                system_prompt = base_prompt + "\n\n" + "\n\n".join(agent.pending_skills)
            request = ModelRequest(
                system_prompt=system_prompt,
                history=list(agent.history),
                tool_schemas=registry.schemas(),
            )
            turn = await collect_turn(
                self.instance.adapter,
                request,
                abort(),
                on_emission=lambda e: self._stream_emission(session, agent.agent_id, e),
            )
            if turn.error:
                self._emit(session, agent.agent_id, ErrorEvent, message=turn.error, code="adapter")
                return "aborted", "adapter-error"
            if turn.blocks or turn.usage:
                agent.history.append(
                    Message(role=ASSISTANT, blocks=tuple(turn.blocks), usage=turn.usage)
                )
            calls = [b for b in turn.blocks if b.kind == TOOL_CALL]

            if not calls:
                if abort().tripped:
                    return "aborted", "interrupted"
                return "completed", ""

            # Phase 1: the tool plan exists but nothing has run yet.
            await self._probe(POST_INFERENCE_DISPATCH, session, agent.agent_id)
            if abort().tripped:
                self._flush_results(
                    session, agent, calls,
                    [self._cancelled(c, "interrupted before dispatch") for c in calls],
                    main,
                )
                return "aborted", "interrupted"

            for c in calls:
                self._emit(
                    session, agent.agent_id, ToolCallStarted,
                    call_id=c.call_id, tool_name=c.tool_name, args=dict(c.args),
                )
            results = await self._schedule(session, agent, calls, registry)

            # Phase 4: flush everything collected, then stop if interrupted.
            await self._probe(RECURSION_TERMINATION, session, agent.agent_id)
            self._flush_results(session, agent, calls, results, main)
            if abort().tripped:
                return "aborted", "interrupted"
        return "completed", "max-turns"

    def _stream_emission(self, session, agent_id: str, emission) -> None:
        if emission.kind == EMIT_TEXT:
            self._emit(session, agent_id, TextChunk, text=emission.text)
        elif emission.kind == EMIT_THINKING:
            self._emit(session, agent_id, ThinkingChunk, thinking=emission.text)

    def _cancelled(self, call: ContentBlock, note: str) -> ContentBlock:
        return tool_result_block(call.call_id, f"cancelled: {note}", is_error=True)

    def _flush_results(self, session, agent, calls, results, main: bool) -> None:
        """Emit tool_result events and append the result message (plan order)."""
        names = {c.call_id: c.tool_name for c in calls}
        for r in results:
            self._emit(
                session, agent.agent_id, ToolResultEvent,
                call_id=r.call_id, tool_name=names.get(r.call_id, ""),
                content=r.content, is_error=r.is_error, is_user_refusal=r.is_user_refusal,
            )
        blocks: list[ContentBlock] = list(results)
        if main:
            blocks.extend(text_block(note) for note in session.drain_notes())
        agent.history.append(Message(role=USER, blocks=tuple(blocks)))

    # ------------------------------------------------------- scheduling

    async def _schedule(self, session, agent, calls, registry) -> list[ContentBlock]:
        """Read/write policy: all-read batches run concurrently, any write
        serializes the whole batch in plan order. Results return in plan
        order regardless of completion order."""
        descriptors = [registry.get(c.tool_name) for c in calls]
        all_read = all(d is not None and d.kind == READ_ONLY for d in descriptors)
        if all_read and len(calls) > 1:
            return list(
                await asyncio.gather(
                    *(self._execute_call(session, agent, c, registry) for c in calls)
                )
            )
        results = []
        for c in calls:
            results.append(await self._execute_call(session, agent, c, registry))
        return results

    async def _execute_call(self, session, agent, call, registry) -> ContentBlock:
        abort = session.global_state.abort

        # Phase 2: last check before this specific call commits.
        await self._probe(PRE_EXECUTION, session, agent.agent_id)
        if abort.tripped:
            return self._cancelled(call, "interrupted before execution")

        descriptor = registry.get(call.tool_name)
        if descriptor is None:
            return tool_result_block(
                call.call_id, f"unknown tool: {call.tool_name}", is_error=True
            )

        if descriptor.permission_layer is not None:
            outcome = await self._permission_gate(session, agent, call, descriptor)
            if outcome is not None:
                return outcome

        ctx = ToolContext(
            session=session,
            agent=agent,
            workspace=self.instance.workspace,
            registry=registry,
            bg_manager=self.instance.bg_manager,
            shell=self.instance.shell,
            skills=self.instance.skills,
            runtime=self,
            abort=abort,
            emit=lambda cls, **f: self._emit(session, agent.agent_id, cls, **f),
        )
        handler_task = asyncio.create_task(descriptor.handler(dict(call.args), ctx))
        abort_task = asyncio.create_task(abort.wait())

        # Phase 3: the handler is live; an abort now must not corrupt history.
        await self._probe(ACTIVE_EXECUTION, session, agent.agent_id)
        await asyncio.wait({handler_task, abort_task}, return_when=asyncio.FIRST_COMPLETED)

        if handler_task.done():
            abort_task.cancel()
            try:
                content = handler_task.result()
            except ToolError as exc:
                return tool_result_block(call.call_id, str(exc), is_error=True)
            except Exception as exc:
                return tool_result_block(call.call_id, f"tool crashed: {exc!r}", is_error=True)
            return tool_result_block(call.call_id, content)

        handler_task.cancel()
        try:
            await handler_task
        except BaseException:
            pass
        abort_task.cancel()
        return self._cancelled(call, "interrupted during execution")

    # ------------------------------------------------------ permissions

    def _operation_for(self, descriptor, args: dict) -> OperationRequest:
        layer = descriptor.permission_layer
        if layer == L2_BASH:
            command = str(args.get("command", ""))
            return OperationRequest(
                layer=layer, tool_name=descriptor.name, command=command,
                summary=f"run shell command: {command}",
            )
        if layer == L3_SKILL:
            name = str(args.get("name", ""))
            return OperationRequest(
                layer=layer, tool_name=descriptor.name, skill=name,
                summary=f"invoke skill: {name}",
            )
        if layer == L4_EXTERNAL:
            return OperationRequest(
                layer=layer, tool_name=descriptor.name, external=descriptor.name,
                summary=f"call external tool: {descriptor.name}",
            )
        return OperationRequest(
            layer=layer, tool_name=descriptor.name,
            summary=f"edit file: {args.get('path', '?')}",
        )

    async def _permission_gate(self, session, agent, call, descriptor) -> ContentBlock | None:
        """None means proceed; otherwise the result block to record."""
        op = self._operation_for(descriptor, call.args)
        ctx = PolicyContext(
            edit_allowed=session.global_state.g_edit,
            project=self.instance.policy_store.project,
        )
        decision = decide(op, ctx)
        if decision.kind == "allow":
            return None
        if decision.kind == "deny":
            detail = ", ".join(decision.reasons) or "blocked"
            return tool_result_block(
                call.call_id, f"denied: {detail}", is_error=True
            )

        request_id = self.instance.next_request_id()
        self.instance.broker.open(request_id)
        self._emit(
            session, agent.agent_id, PermissionRequested,
            request_id=request_id, layer=op.layer, summary=op.summary,
            risk_note=decision.risk_note,
        )
        resolution = await self.instance.broker.wait(request_id, session.global_state.abort)
        if resolution is None:
            # Session aborted while suspended: treated as reject for control
            # flow, recorded as a plain cancellation (not a user refusal).
            return self._cancelled(call, "interrupted awaiting approval")
        if resolution.kind == REJECT:
            session.global_state.abort.trip()
            return tool_result_block(
                call.call_id, "User rejected the operation.",
                is_error=True, is_user_refusal=True,
            )
        if resolution.kind == GUIDED_CORRECTION:
            feedback = resolution.feedback or "User suggested a different approach."
            return tool_result_block(
                call.call_id, feedback, is_error=True, is_user_refusal=True
            )
        if resolution.kind == PERSISTENT_ALLOW:
            if op.layer == L1_FILE_EDIT:
                session.global_state.g_edit = True
            else:
                self.instance.policy_store.grant(op)
        return None  # transient_allow / persistent_allow proceed

    # ------------------------------------------------------- delegation

    async def spawn_subagent(self, session, prompt: str) -> SubAgentReport:
        """Run a one-level-deep sub-agent to completion and purge its state."""
        agent_id = f"sub-{session.next_sub_id()}"
        sub = AgentLocalState(agent_id=agent_id, exec_status=PROCESSING)
        session.local[agent_id] = sub
        sub.history.append(user_message(text_block(prompt)))
        sub_registry = self.instance.registry.without("task")
        started = time.monotonic()
        status = "aborted"
        final_text = ""
        tokens = 0
        try:
            status, _reason = await self._loop(
                session, sub, sub_registry, self._subagent_prompt(), main=False
            )
            for msg in reversed(sub.history):
                if msg.role == ASSISTANT:
                    final_text = message_text(msg)
                    break
            cumulative = 0
            outputs = 0
            for msg in sub.history:
                if msg.role == ASSISTANT and msg.usage is not None:
                    cumulative = max(cumulative, msg.usage.cumulative_input_tokens)
                    outputs += msg.usage.output_tokens
            tokens = cumulative + outputs
        finally:
            # Atomic purge: the session never sees a half-dead sub-agent.
            del session.local[agent_id]
        return SubAgentReport(
            agent_id=agent_id,
            status=status,
            final_text=final_text,
            tokens_consumed=tokens,
            wall_time=time.monotonic() - started,
        )
