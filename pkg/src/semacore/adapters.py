"""Streaming model adapters normalized to one emission protocol.

Every adapter exposes ``stream_turn(request, abort)`` yielding Emission
values: text and thinking deltas, tool calls, exactly one terminal usage
record, or a terminal error. The deterministic mock adapter replays a JSON
turn script and is the backbone of the whole test suite; the OpenAI
compatible adapter speaks server-sent events against any
``/v1/chat/completions`` endpoint.
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import AsyncIterator

import httpx

from .config import EngineConfig, InvalidConfigError
from .messages import (
    ASSISTANT,
    TEXT,
    THINKING,
    TOOL_CALL,
    TOOL_RESULT,
    ContentBlock,
    Message,
    UsageMetadata,
    text_block,
    thinking_block,
    tool_call_block,
)
from .tenancy import AbortSignal

EMIT_TEXT = "text"
EMIT_THINKING = "thinking"
EMIT_TOOL_CALL = "tool_call"
EMIT_USAGE = "usage"
EMIT_ERROR = "error"


@dataclass(frozen=True)
class Emission:
    kind: str
    text: str = ""
    call_id: str = ""
    tool_name: str = ""
    args: dict = field(default_factory=dict)
    usage: UsageMetadata | None = None
    message: str = ""


@dataclass
class ModelRequest:
    system_prompt: str
    history: list[Message]
    tool_schemas: list[dict] = field(default_factory=list)
    max_tokens: int = 4096


class ScriptError(ValueError):
    pass


_SCRIPT_KEYS = {"text", "thinking", "tool_call", "usage", "error", "delay_ms"}


def load_turn_script(source: list | dict) -> list[list[dict]]:
    """Validate a mock turn script.

    A script is a list of turns; a turn is a list of single-key emission
    dicts. Every turn must end with exactly one usage emission, unless it
    ends with an error emission instead (then no usage is allowed).
    """
    turns = source.get("turns") if isinstance(source, dict) else source
    if not isinstance(turns, list):
        raise ScriptError("script must be a list of turns")
    for ti, turn in enumerate(turns):
        if not isinstance(turn, list):
            raise ScriptError(f"turn {ti} is not a list")
        kinds = []
        for item in turn:
            if not isinstance(item, dict) or len(item) != 1:
                raise ScriptError(f"turn {ti}: each emission is a single-key object")
            key = next(iter(item))
            if key not in _SCRIPT_KEYS:
                raise ScriptError(f"turn {ti}: unknown emission {key!r}")
            if key != "delay_ms":
                kinds.append(key)
        if not kinds:
            raise ScriptError(f"turn {ti}: empty turn")
        if kinds[-1] == "error":
            if "usage" in kinds[:-1]:
                raise ScriptError(f"turn {ti}: usage before terminal error")
        elif kinds[-1] != "usage" or kinds.count("usage") != 1:
            raise ScriptError(f"turn {ti}: must end with exactly one usage emission")
    return [list(turn) for turn in turns]


def load_script_file(path: str | Path) -> list[list[dict]]:
    return load_turn_script(json.loads(Path(path).read_text()))


def _usage_from(value) -> UsageMetadata:
    if isinstance(value, int):
        return UsageMetadata(cumulative_input_tokens=value, output_tokens=0)
    return UsageMetadata(
        cumulative_input_tokens=int(value["cumulative_input_tokens"]),
        output_tokens=int(value.get("output_tokens", 0)),
    )


class MockAdapter:
    """Replays a validated turn script; one stream_turn consumes one turn.

    Identical scripts produce byte-identical emission sequences, which is
    what makes transcript-level determinism testable. Requests are recorded
    on ``self.requests`` so tests can inspect prompts the engine built.
    """

    name = "mock"

    def __init__(self, turns: list[list[dict]]):
        self._turns = load_turn_script(turns)
        self._cursor = 0
        self._auto_call = 0
        self.requests: list[ModelRequest] = []

    @property
    def turns_left(self) -> int:
        return len(self._turns) - self._cursor

    async def stream_turn(
        self, request: ModelRequest, abort: AbortSignal | None = None
    ) -> AsyncIterator[Emission]:
        self.requests.append(request)
        if self._cursor >= len(self._turns):
            yield Emission(kind=EMIT_ERROR, message="script exhausted")
            return
        turn = self._turns[self._cursor]
        self._cursor += 1
        for item in turn:
            key, value = next(iter(item.items()))
            if key == "delay_ms":
                await asyncio.sleep(value / 1000.0)
                continue
            if abort is not None and abort.tripped:
                return
            if key == "text":
                yield Emission(kind=EMIT_TEXT, text=str(value))
            elif key == "thinking":
                yield Emission(kind=EMIT_THINKING, text=str(value))
            elif key == "tool_call":
                call_id = value.get("id")
                if not call_id:
                    self._auto_call += 1
                    call_id = f"call-{self._auto_call}"
                yield Emission(
                    kind=EMIT_TOOL_CALL,
                    call_id=call_id,
                    tool_name=value["name"],
                    args=dict(value.get("args", {})),
                )
            elif key == "usage":
                yield Emission(kind=EMIT_USAGE, usage=_usage_from(value))
            elif key == "error":
                yield Emission(kind=EMIT_ERROR, message=str(value))
                return


class OpenAICompatAdapter:
    """Streaming client for OpenAI-compatible chat-completions endpoints.

    ``prompt_tokens`` maps onto cumulative input tokens (each request carries
    the whole conversation, so per-turn prompt size is the cumulative
    footprint); ``completion_tokens`` maps onto output tokens.
    """

    name = "openai-compat"

    def __init__(
        self,
        base_url: str,
        model: str = "",
        api_key: str = "",
        client: httpx.AsyncClient | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.AsyncClient(timeout=60.0)

    def _payload(self, request: ModelRequest) -> dict:
        messages: list[dict] = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        for msg in request.history:
            if msg.role == ASSISTANT:
                entry: dict = {"role": "assistant"}
                texts = [b.text for b in msg.blocks if b.kind == TEXT]
                if texts:
                    entry["content"] = "".join(texts)
                calls = [b for b in msg.blocks if b.kind == TOOL_CALL]
                if calls:
                    entry["tool_calls"] = [
                        {
                            "id": b.call_id,
                            "type": "function",
                            "function": {"name": b.tool_name, "arguments": json.dumps(b.args)},
                        }
                        for b in calls
                    ]
                messages.append(entry)
            else:
                texts = [b.text for b in msg.blocks if b.kind == TEXT]
                if texts:
                    messages.append({"role": "user", "content": "\n".join(texts)})
                for b in msg.blocks:
                    if b.kind == TOOL_RESULT:
                        messages.append(
                            {"role": "tool", "tool_call_id": b.call_id, "content": b.content}
                        )
        payload = {
            "model": self.model,
            "messages": messages,
            "stream": True,
            "stream_options": {"include_usage": True},
            "max_tokens": request.max_tokens,
        }
        if request.tool_schemas:
            payload["tools"] = [
                {
                    "type": "function",
                    "function": {
                        "name": s["name"],
                        "description": s.get("description", ""),
                        "parameters": s.get("parameters", {"type": "object"}),
                    },
                }
                for s in request.tool_schemas
            ]
        return payload

    async def stream_turn(
        self, request: ModelRequest, abort: AbortSignal | None = None
    ) -> AsyncIterator[Emission]:
        url = f"{self.base_url}/chat/completions"
        calls: dict[int, dict] = {}
        usage: UsageMetadata | None = None
        try:
            async with self._client.stream(
                "POST", url, json=self._payload(request), headers=self._headers
            ) as response:
                if response.status_code != 200:
                    body = (await response.aread()).decode("utf-8", "replace")
                    yield Emission(
                        kind=EMIT_ERROR,
                        message=f"HTTP {response.status_code}: {body[:200]}",
                    )
                    return
                async for line in response.aiter_lines():
                    if abort is not None and abort.tripped:
                        return
                    if not line.startswith("data:"):
                        continue
                    data = line[5:].strip()
                    if data == "[DONE]":
                        break
                    try:
                        chunk = json.loads(data)
                    except json.JSONDecodeError:
                        continue
                    if chunk.get("usage"):
                        u = chunk["usage"]
                        usage = UsageMetadata(
                            cumulative_input_tokens=int(u.get("prompt_tokens", 0)),
                            output_tokens=int(u.get("completion_tokens", 0)),
                        )
                    for choice in chunk.get("choices", []):
                        delta = choice.get("delta") or {}
                        if delta.get("reasoning_content"):
                            yield Emission(kind=EMIT_THINKING, text=delta["reasoning_content"])
                        if delta.get("content"):
                            yield Emission(kind=EMIT_TEXT, text=delta["content"])
                        for tc in delta.get("tool_calls") or []:
                            slot = calls.setdefault(
                                tc.get("index", 0), {"id": "", "name": "", "args": ""}
                            )
                            if tc.get("id"):
                                slot["id"] = tc["id"]
                            fn = tc.get("function") or {}
                            if fn.get("name"):
                                slot["name"] += fn["name"]
                            if fn.get("arguments"):
                                slot["args"] += fn["arguments"]
        except httpx.HTTPError as exc:
            yield Emission(kind=EMIT_ERROR, message=f"transport error: {exc}")
            return
        for index in sorted(calls):
            slot = calls[index]
            try:
                args = json.loads(slot["args"]) if slot["args"].strip() else {}
            except json.JSONDecodeError:
                yield Emission(
                    kind=EMIT_ERROR, message=f"unparseable tool arguments: {slot['args'][:100]}"
                )
                return
            yield Emission(
                kind=EMIT_TOOL_CALL,
                call_id=slot["id"] or f"call-{index}",
                tool_name=slot["name"],
                args=args if isinstance(args, dict) else {"value": args},
            )
        if usage is not None:
            yield Emission(kind=EMIT_USAGE, usage=usage)
        else:
            yield Emission(kind=EMIT_ERROR, message="stream ended without usage")

    async def aclose(self) -> None:
        await self._client.aclose()


def select_adapter(config: EngineConfig):
    """Build the adapter a config names; config errors raise InvalidConfigError."""
    if config.adapter == "mock":
        if config.script is not None:
            return MockAdapter(config.script)
        if config.script_path:
            return MockAdapter(load_script_file(config.script_path))
        raise InvalidConfigError("mock adapter requires script or script_path")
    if config.adapter == "openai-compat":
        if not config.base_url:
            raise InvalidConfigError("openai-compat adapter requires base_url")
        return OpenAICompatAdapter(config.base_url, config.model, config.api_key)
    raise InvalidConfigError(f"unknown adapter name: {config.adapter!r}")


@dataclass
class TurnResult:
    blocks: list[ContentBlock]
    usage: UsageMetadata | None
    error: str | None


async def collect_turn(adapter, request: ModelRequest, abort=None, on_emission=None) -> TurnResult:
    """Drain one stream into an assistant block list.

    Consecutive text deltas merge into one block, likewise thinking; tool
    calls keep their position in the stream order.
    """
    blocks: list[ContentBlock] = []
    usage: UsageMetadata | None = None
    error: str | None = None

    def _append_text(kind: str, text: str) -> None:
        if blocks and blocks[-1].kind == kind:
            prev = blocks.pop()
            merged = prev.text + text
            blocks.append(text_block(merged) if kind == TEXT else thinking_block(merged))
        else:
            blocks.append(text_block(text) if kind == TEXT else thinking_block(text))

    async for emission in adapter.stream_turn(request, abort):
        if on_emission is not None:
            on_emission(emission)
        if emission.kind == EMIT_TEXT:
            _append_text(TEXT, emission.text)
        elif emission.kind == EMIT_THINKING:
            _append_text(THINKING, emission.text)
        elif emission.kind == EMIT_TOOL_CALL:
            blocks.append(tool_call_block(emission.call_id, emission.tool_name, emission.args))
        elif emission.kind == EMIT_USAGE:
            usage = emission.usage
        elif emission.kind == EMIT_ERROR:
            error = emission.message
            break
    return TurnResult(blocks=blocks, usage=usage, error=error)
