"""Context window lifecycle: O(1) metering, compression, safe truncation.

The effective context size of a history is the cumulative input token count
reported by the latest assistant message plus a fixed forward buffer that
reserves room for the next model turn. Crossing 75% of the window triggers
compression: everything before the last user-initiated turn is replaced by a
model-written summary, the retained tail is scrubbed (thinking dropped,
usage cleared), and the loop continues. If summarization itself fails, a
deterministic truncation keeps the most recent messages that fit in half the
window, cutting only at assistant boundaries so no tool call/result pair is
ever split.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, replace
from pathlib import Path

from .adapters import ModelRequest, collect_turn
from .events import TokenStats
from .messages import (
    ASSISTANT,
    THINKING,
    TOOL_RESULT,
    USER,
    Message,
    UsageMetadata,
    text_block,
    user_message,
)
from .todos import render_todos

DEFAULT_FORWARD_BUFFER = 8_000
DEFAULT_TRIGGER_RATIO = 0.75

_ASSETS = Path(__file__).parent / "assets"
SUMMARIZE_PROMPT = (_ASSETS / "summarize.md").read_text()

_RULES_REMINDER = (
    "Context notes:\n"
    "- The conversation above this point was compacted; the summary replaces it.\n"
    "- Keep following the engine rules: exact-match edits, one active todo,\n"
    "  background tasks for long commands, tool output is authoritative.\n"
    "Current todos:\n"
)


class NoPivotError(Exception):
    """History contains no user message free of tool results."""


class SummarizeError(Exception):
    """The summarization model turn failed; callers fall back to truncation."""


@dataclass(frozen=True)
class ContextBudget:
    limit: int
    forward_buffer: int = DEFAULT_FORWARD_BUFFER
    trigger_ratio: float = DEFAULT_TRIGGER_RATIO

    def __post_init__(self) -> None:
        if self.limit <= 0:
            raise ValueError("limit must be positive")
        if not (0.0 < self.trigger_ratio < 1.0):
            raise ValueError("trigger_ratio must be in (0, 1)")
        if self.forward_buffer < 0:
            raise ValueError("forward_buffer must be nonnegative")


def latest_usage(history: list[Message]) -> UsageMetadata | None:
    for msg in reversed(history):
        if msg.role == ASSISTANT and msg.usage is not None:
            return msg.usage
    return None


def effective_context_size(history: list[Message], budget: ContextBudget) -> int:
    """Latest cumulative input count plus the forward buffer; O(1) because the
    provider already counted the whole conversation."""
    usage = latest_usage(history)
    cumulative = usage.cumulative_input_tokens if usage else 0
    return cumulative + budget.forward_buffer


def should_compress(size: int, budget: ContextBudget) -> bool:
    return size > budget.trigger_ratio * budget.limit


@dataclass
class HistoryPartition:
    hist: list[Message]   # everything before the pivot; gets summarized
    keep: list[Message]   # pivot onward; survives verbatim (after scrubbing)
    pivot_index: int


def partition_history(history: list[Message]) -> HistoryPartition:
    """Split at the last user message that carries no tool results.

    Such a pivot starts a user-initiated turn, so no call/result pair spans
    the boundary: if the previous assistant had open calls, this message
    would have to carry their results and could not qualify.
    """
    for i in range(len(history) - 1, -1, -1):
        msg = history[i]
        if msg.role == USER and not any(b.kind == TOOL_RESULT for b in msg.blocks):
            return HistoryPartition(hist=list(history[:i]), keep=list(history[i:]), pivot_index=i)
    raise NoPivotError("no user message without tool results")


def _scrub_keep(keep: list[Message]) -> list[Message]:
    scrubbed = []
    for msg in keep:
        if msg.role == ASSISTANT:
            blocks = tuple(b for b in msg.blocks if b.kind != THINKING)
            if not blocks:
                continue
            scrubbed.append(Message(role=ASSISTANT, blocks=blocks, usage=None))
        else:
            scrubbed.append(msg)
    return scrubbed


async def summarize_history(
    hist: list[Message], adapter, abort=None, timeout: float | None = None
) -> str:
    request = ModelRequest(
        system_prompt=SUMMARIZE_PROMPT,
        history=[*hist, user_message("Summarize the conversation so far.")],
    )
    try:
        result = await asyncio.wait_for(collect_turn(adapter, request, abort), timeout)
    except asyncio.TimeoutError:
        raise SummarizeError("summarization timed out") from None
    if result.error:
        raise SummarizeError(result.error)
    summary = "".join(b.text for b in result.blocks if b.kind == "text")
    if not summary.strip():
        raise SummarizeError("empty summary")
    return summary


async def compress(
    history: list[Message],
    adapter,
    budget: ContextBudget,
    todos: list | None = None,
    abort=None,
    timeout: float | None = None,
) -> list[Message]:
    """Replace the pre-pivot prefix with a summary message.

    The result is [user(summary + reminder), *scrubbed keep] and always
    passes validate_history (consecutive user messages are legal).
    """
    part = partition_history(history)
    if not part.hist:
        raise NoPivotError("pivot at history start; nothing to summarize")
    summary = await summarize_history(part.hist, adapter, abort=abort, timeout=timeout)
    reminder = _RULES_REMINDER + render_todos(todos or [])
    head = user_message(text_block(summary), text_block(reminder))
    return [head, *_scrub_keep(part.keep)]


def _convert_orphan_results(msg: Message) -> Message:
    bridge = text_block("[context truncated: output of earlier tool calls follows as plain text]")
    converted = []
    for b in msg.blocks:
        if b.kind == TOOL_RESULT:
            converted.append(text_block(f"[tool output {b.call_id}]\n{b.content}"))
        else:
            converted.append(b)
    return Message(role=USER, blocks=(bridge, *converted))


def safe_truncate(history: list[Message], budget: ContextBudget) -> list[Message]:
    """Deterministic degradation when summarization is unavailable.

    Keeps the suffix after the earliest assistant message m whose distance
    from the latest count fits half the window (C - cum(m) <= L/2). Cutting
    at an assistant boundary cannot split a call/result pair except for m's
    own calls, whose now-orphaned results in the first kept message are
    converted to plain text with a bridging note. Usage on kept assistants
    is cleared; the next real turn re-establishes counts. Idempotent: a
    history already within half the window is returned unchanged.
    """
    usage = latest_usage(history)
    if usage is None:
        return list(history)
    c = usage.cumulative_input_tokens
    half = budget.limit / 2
    if c <= half:
        return list(history)

    cut: int | None = None
    for i, msg in enumerate(history):
        if (
            msg.role == ASSISTANT
            and msg.usage is not None
            and c - msg.usage.cumulative_input_tokens <= half
        ):
            cut = i
            break

    suffix = history[cut + 1 :] if cut is not None else []
    if not suffix:
        # Degenerate: one oversized turn. Keep only the final user-initiated turn.
        try:
            suffix = partition_history(history).keep
        except NoPivotError:
            suffix = [m for m in history[-1:] if m.role == USER]
    else:
        suffix = list(suffix)

    if suffix and suffix[0].role == USER and any(b.kind == TOOL_RESULT for b in suffix[0].blocks):
        suffix[0] = _convert_orphan_results(suffix[0])
    if suffix and suffix[0].role == ASSISTANT:
        suffix.insert(0, user_message("[context truncated]"))

    return [
        replace(m, usage=None) if m.role == ASSISTANT and m.usage is not None else m
        for m in suffix
    ]


async def maybe_compress(
    agent,
    adapter,
    budget: ContextBudget,
    emit,
    *,
    bypass: bool = False,
    abort=None,
    timeout: float | None = None,
) -> bool:
    """Turn-start hook: measure, and compress or truncate when over trigger.

    ``agent`` is an AgentLocalState; ``emit(cls, **fields)`` publishes
    events. Sub-agents pass bypass=True and never touch the machinery.
    Returns True when the history was rewritten.
    """
    if bypass:
        return False
    size = effective_context_size(agent.history, budget)
    if not should_compress(size, budget):
        return False
    emit(TokenStats, context_tokens=size, limit=budget.limit, phase="compress_triggered")
    try:
        new_history = await compress(
            agent.history, adapter, budget, todos=agent.todos, abort=abort, timeout=timeout
        )
        phase = "summarized"
    except (NoPivotError, SummarizeError):
        new_history = safe_truncate(agent.history, budget)
        phase = "truncated"
    agent.history = new_history
    emit(
        TokenStats,
        context_tokens=effective_context_size(new_history, budget),
        limit=budget.limit,
        phase=phase,
    )
    return True
