"""Shared test machinery: history generators, the independent pipeline
oracle, and scripted-instance builders.

The oracle here deliberately re-implements quote-aware splitting with a
different algorithm (recursive first-operator split) than the package's
linear scanner, so agreement between the two is meaningful evidence.
"""

from __future__ import annotations

import asyncio
import random
from typing import Iterable

from hypothesis import strategies as st

from semacore.config import EngineConfig
from semacore.engine import EngineInstance, create_instance
from semacore.events import EngineEvent, SessionComplete, event_type
from semacore.messages import (
    ASSISTANT,
    USER,
    ContentBlock,
    Message,
    UsageMetadata,
    text_block,
    thinking_block,
    tool_call_block,
    tool_result_block,
)

# --------------------------------------------------------------- histories

_WORDS = st.text(
    alphabet="abcdefghijklmnopqrstuvwxyz /.:",
    min_size=1,
    max_size=30,
)


@st.composite
def valid_histories(draw, max_exchanges: int = 4, ensure_usage: bool = False):
    """Structurally valid conversation histories.

    Shapes covered: consecutive user messages, tool-call rounds with results
    in the immediately following user message, thinking blocks, assistants
    with and without usage, monotone cumulative counts, trailing user text.
    """
    history: list[Message] = []
    cumulative = draw(st.integers(min_value=100, max_value=2000))
    call_seq = 0
    exchanges = draw(st.integers(1, max_exchanges))
    for _ in range(exchanges):
        for _ in range(draw(st.integers(1, 2))):
            history.append(Message(role=USER, blocks=(text_block(draw(_WORDS)),)))
        if not draw(st.booleans()) and not ensure_usage:
            continue
        for _ in range(draw(st.integers(0, 2))):
            blocks: list[ContentBlock] = []
            if draw(st.booleans()):
                blocks.append(thinking_block(draw(_WORDS)))
            if draw(st.booleans()):
                blocks.append(text_block(draw(_WORDS)))
            calls = []
            for _ in range(draw(st.integers(1, 3))):
                call_seq += 1
                calls.append(tool_call_block(f"c{call_seq}", draw(st.sampled_from(["read_file", "grep", "bash"])), {"path": "x"}))
            blocks.extend(calls)
            usage = None
            if draw(st.booleans()):
                cumulative += draw(st.integers(0, 4000))
                usage = UsageMetadata(cumulative, draw(st.integers(0, 400)))
            history.append(Message(role=ASSISTANT, blocks=tuple(blocks), usage=usage))
            results: list[ContentBlock] = [
                tool_result_block(c.call_id, draw(_WORDS), is_error=draw(st.booleans()))
                for c in calls
            ]
            if draw(st.booleans()):
                results.append(text_block(draw(_WORDS)))
            history.append(Message(role=USER, blocks=tuple(results)))
        final_blocks: list[ContentBlock] = []
        if draw(st.booleans()):
            final_blocks.append(thinking_block(draw(_WORDS)))
        final_blocks.append(text_block(draw(_WORDS)))
        cumulative += draw(st.integers(0, 4000))
        history.append(
            Message(
                role=ASSISTANT,
                blocks=tuple(final_blocks),
                usage=UsageMetadata(cumulative, draw(st.integers(0, 400))),
            )
        )
    return history


# ---------------------------------------------------------- pipeline oracle

class OracleParseError(ValueError):
    pass


def _first_operator(command: str) -> tuple[int, int] | None:
    """(index, length) of the first unquoted operator, tracking quotes and
    escapes exactly as a POSIX-ish shell would."""
    in_single = False
    in_double = False
    i = 0
    n = len(command)
    while i < n:
        c = command[i]
        if in_single:
            if c == "'":
                in_single = False
            i += 1
            continue
        if in_double:
            if c == "\\":
                if i + 1 >= n:
                    raise OracleParseError("trailing escape in quotes")
                i += 2
                continue
            if c == '"':
                in_double = False
            i += 1
            continue
        if c == "\\":
            if i + 1 >= n:
                raise OracleParseError("trailing escape")
            i += 2
            continue
        if c == "'":
            in_single = True
            i += 1
            continue
        if c == '"':
            in_double = True
            i += 1
            continue
        if command.startswith("&&", i) or command.startswith("||", i):
            return i, 2
        if c in "|;":
            return i, 1
        i += 1
    if in_single or in_double:
        raise OracleParseError("unbalanced quote")
    return None


def oracle_split(command: str) -> list[str]:
    hit = _first_operator(command)
    if hit is None:
        return [command.strip()]
    index, length = hit
    return [command[:index].strip()] + oracle_split(command[index + length :])


def oracle_allows(command: str, whitelist: Iterable[str]) -> bool:
    entries = [e.split() for e in whitelist]
    try:
        segments = oracle_split(command)
    except OracleParseError:
        return False
    for segment in segments:
        words = segment.split()
        if not words:
            return False
        words = [words[0].rsplit("/", 1)[-1]] + words[1:]
        if not any(words[: len(e)] == e for e in entries if len(words) >= len(e)):
            return False
    return True


PIPELINE_HEADS = [
    "git", "ls", "cat", "grep", "find", "echo", "npm", "node", "python3", "pip",
    "make", "cargo", "rustc", "go", "sed", "awk", "tar", "curl", "wget", "docker",
]
PIPELINE_WHITELIST = [
    "ls", "cat", "grep", "echo", "make", "tar", "sed", "find", "go",
    "git status", "git push", "npm test",
]
_SUBCOMMANDS = {
    "git": ["status", "push", "pull", "commit"],
    "npm": ["test", "install", "run"],
    "cargo": ["build", "test"],
}
_ARG_POOL = [
    "-a", "--long", "-v", "x.txt", "src/main.py", "*.md", "./build",
    "'a && b'", "'x | y'", "'semi;colon'", '"quoted | pipe"', '"and && and"',
    "--file=data.csv", "123",
]
_OPERATORS = [" | ", " && ", " ; ", "|", ";", " &&  "]


def random_pipeline(rng: random.Random) -> str:
    segments = []
    for _ in range(rng.randint(1, 4)):
        head = rng.choice(PIPELINE_HEADS)
        if rng.random() < 0.15:
            head = "/usr/bin/" + head
        words = [head]
        base = head.rsplit("/", 1)[-1]
        if base in _SUBCOMMANDS and rng.random() < 0.7:
            words.append(rng.choice(_SUBCOMMANDS[base]))
        for _ in range(rng.randint(0, 2)):
            words.append(rng.choice(_ARG_POOL))
        segments.append(" ".join(words))
    command = segments[0]
    for seg in segments[1:]:
        command += rng.choice(_OPERATORS) + seg
    if rng.random() < 0.02:
        command += " 'unbalanced"
    return command


# ------------------------------------------------------- scripted engines

def scripted_config(script: list, workspace: str, **overrides) -> EngineConfig:
    cfg = EngineConfig(adapter="mock", script=script, workspace=workspace, **overrides)
    cfg.validate()
    return cfg


def scripted_instance(script: list, workspace: str, **overrides) -> EngineInstance:
    return create_instance(scripted_config(script, workspace, **overrides))


async def drain_events(queue: asyncio.Queue) -> list[EngineEvent]:
    events = []
    while not queue.empty():
        events.append(queue.get_nowait())
    return events


async def run_one_query(instance: EngineInstance, prompt: str, timeout: float = 10.0):
    """Dispatch a prompt and wait for the engine to go idle; return events."""
    queue = instance.subscribe()
    instance.dispatch(prompt)
    await instance.wait_idle(timeout=timeout)
    events = await drain_events(queue)
    instance.bus.unsubscribe(queue)
    return events


def events_of(events: list[EngineEvent], *names: str) -> list[EngineEvent]:
    return [e for e in events if event_type(e) in names]


async def wait_for_event(queue: asyncio.Queue, *names: str, timeout: float = 5.0) -> EngineEvent:
    async def _take():
        while True:
            event = await queue.get()
            if event_type(event) in names:
                return event
    return await asyncio.wait_for(_take(), timeout=timeout)


def complete_statuses(events: list[EngineEvent]) -> list[str]:
    return [e.status for e in events if isinstance(e, SessionComplete)]
