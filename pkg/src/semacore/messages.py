"""Conversation data model shared by every engine component.

A message is a role plus an ordered tuple of content blocks, with optional
usage metadata on assistant turns. ``validate_history`` checks the structural
rules the rest of the engine depends on: no two consecutive assistant
messages, every tool call answered exactly once by the immediately following
user message, blocks only where their kind belongs, and nondecreasing
cumulative input token counts. Consecutive *user* messages are legal; context
compression produces them on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

USER = "user"
ASSISTANT = "assistant"
ROLES = (USER, ASSISTANT)

TEXT = "text"
THINKING = "thinking"
TOOL_CALL = "tool_call"
TOOL_RESULT = "tool_result"
BLOCK_KINDS = (TEXT, THINKING, TOOL_CALL, TOOL_RESULT)


@dataclass(frozen=True)
class UsageMetadata:
    """Token accounting attached to assistant messages.

    ``cumulative_input_tokens`` is the full conversation footprint as counted
    by the provider for that turn, which is what makes O(1) context metering
    possible: the latest value *is* the context size.
    """

    cumulative_input_tokens: int
    output_tokens: int


@dataclass(frozen=True)
class ContentBlock:
    """One unit of message content; ``kind`` selects which fields are live."""

    kind: str
    text: str = ""              # text / thinking payload
    call_id: str = ""           # tool_call / tool_result
    tool_name: str = ""         # tool_call
    args: dict = field(default_factory=dict)   # tool_call
    content: str = ""           # tool_result payload
    is_error: bool = False      # tool_result
    is_user_refusal: bool = False  # tool_result


def text_block(text: str) -> ContentBlock:
    return ContentBlock(kind=TEXT, text=text)


def thinking_block(text: str) -> ContentBlock:
    return ContentBlock(kind=THINKING, text=text)


def tool_call_block(call_id: str, tool_name: str, args: dict | None = None) -> ContentBlock:
    return ContentBlock(kind=TOOL_CALL, call_id=call_id, tool_name=tool_name, args=args or {})


def tool_result_block(
    call_id: str,
    content: str,
    *,
    is_error: bool = False,
    is_user_refusal: bool = False,
) -> ContentBlock:
    return ContentBlock(
        kind=TOOL_RESULT,
        call_id=call_id,
        content=content,
        is_error=is_error,
        is_user_refusal=is_user_refusal,
    )


@dataclass(frozen=True)
class Message:
    role: str
    blocks: tuple[ContentBlock, ...]
    usage: UsageMetadata | None = None


def user_message(*blocks: ContentBlock | str) -> Message:
    """Build a user message; bare strings become text blocks."""
    resolved = tuple(text_block(b) if isinstance(b, str) else b for b in blocks)
    return Message(role=USER, blocks=resolved)


def assistant_message(*blocks: ContentBlock | str, usage: UsageMetadata | None = None) -> Message:
    resolved = tuple(text_block(b) if isinstance(b, str) else b for b in blocks)
    return Message(role=ASSISTANT, blocks=resolved, usage=usage)


def message_text(message: Message) -> str:
    """Concatenated text blocks of a message (thinking excluded)."""
    return "".join(b.text for b in message.blocks if b.kind == TEXT)


def tool_calls_of(message: Message) -> list[ContentBlock]:
    return [b for b in message.blocks if b.kind == TOOL_CALL]


def tool_results_of(message: Message) -> list[ContentBlock]:
    return [b for b in message.blocks if b.kind == TOOL_RESULT]


@dataclass(frozen=True)
class Violation:
    """First structural rule a history breaks, and where."""

    index: int
    rule: str
    detail: str = ""


def validate_history(history: list[Message]) -> Violation | None:
    """Return the first violation in ``history``, or None if it is valid.

    Rules, in the order they are reported for a given index:
    bad-role, usage-on-user, consecutive-assistant, bad-block-kind,
    misplaced-block, then pairing (dangling-call checked before
    dangling-result, both reported at the user message that should have
    carried the results), duplicate-result, duplicate-call-id, bad-usage,
    usage-regression. A trailing assistant with unanswered calls reports
    dangling-call at the last index.
    """
    prev_role: str | None = None
    pending_calls: list[str] = []
    last_cumulative: int | None = None

    for i, msg in enumerate(history):
        if msg.role not in ROLES:
            return Violation(i, "bad-role", msg.role)
        if msg.role == USER and msg.usage is not None:
            return Violation(i, "usage-on-user")
        if msg.role == ASSISTANT and prev_role == ASSISTANT:
            return Violation(i, "consecutive-assistant")

        for b in msg.blocks:
            if b.kind not in BLOCK_KINDS:
                return Violation(i, "bad-block-kind", b.kind)
            if msg.role == USER and b.kind in (THINKING, TOOL_CALL):
                return Violation(i, "misplaced-block", b.kind)
            if msg.role == ASSISTANT and b.kind == TOOL_RESULT:
                return Violation(i, "misplaced-block", b.kind)

        if msg.role == USER:
            result_ids = [b.call_id for b in tool_results_of(msg)]
            for cid in pending_calls:
                n = result_ids.count(cid)
                if n == 0:
                    return Violation(i, "dangling-call", cid)
                if n > 1:
                    return Violation(i, "duplicate-result", cid)
            for rid in result_ids:
                if rid not in pending_calls:
                    return Violation(i, "dangling-result", rid)
            pending_calls = []
        else:
            call_ids = [b.call_id for b in tool_calls_of(msg)]
            if len(set(call_ids)) != len(call_ids):
                return Violation(i, "duplicate-call-id")
            pending_calls = call_ids
            if msg.usage is not None:
                u = msg.usage
                if u.cumulative_input_tokens < 0 or u.output_tokens < 0:
                    return Violation(i, "bad-usage")
                if last_cumulative is not None and u.cumulative_input_tokens < last_cumulative:
                    return Violation(i, "usage-regression")
                last_cumulative = u.cumulative_input_tokens

        prev_role = msg.role

    if pending_calls:
        return Violation(len(history) - 1, "dangling-call", pending_calls[0])
    return None
