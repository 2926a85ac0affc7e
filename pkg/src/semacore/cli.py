"""Command line entry points: ``semacore serve`` and ``semacore chat``."""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

from .config import EngineConfig, InvalidConfigError, load_config
from .events import (
    BackgroundNotification,
    ErrorEvent,
    PermissionRequested,
    SessionComplete,
    TextChunk,
    ThinkingChunk,
    TodoUpdated,
    TokenStats,
    ToolCallStarted,
    ToolResultEvent,
)
from .service import EngineServer, WsClient


def _load(path: str | None) -> EngineConfig:
    if path is None:
        return EngineConfig(script=[])
    return load_config(path)


async def _serve(config: EngineConfig, host: str | None, port: int | None) -> None:
    server = EngineServer(config)
    ws_server = await server.serve(host=host, port=port)
    actual = ws_server.sockets[0].getsockname()
    print(f"semacore serving on ws://{actual[0]}:{actual[1]}/v1/session", flush=True)
    try:
        await asyncio.Future()
    finally:
        ws_server.close()
        await server.close()


def _print_event(event) -> None:
    if isinstance(event, TextChunk):
        print(event.text, end="", flush=True)
    elif isinstance(event, ThinkingChunk):
        print(f"\x1b[2m{event.thinking}\x1b[0m", end="", flush=True)
    elif isinstance(event, ToolCallStarted):
        print(f"\n[tool {event.tool_name} {json.dumps(event.args)}]", flush=True)
    elif isinstance(event, ToolResultEvent):
        marker = "error" if event.is_error else "ok"
        preview = event.content[:200].replace("\n", " ")
        print(f"[result {event.call_id} {marker}] {preview}", flush=True)
    elif isinstance(event, PermissionRequested):
        note = f" risk: {event.risk_note}" if event.risk_note else ""
        print(
            f"\n[permission {event.request_id} {event.layer}] {event.summary}{note}\n"
            f"  reply: /approve {event.request_id} | /always {event.request_id} | "
            f"/deny {event.request_id} | /suggest {event.request_id} <text>",
            flush=True,
        )
    elif isinstance(event, TodoUpdated):
        items = ", ".join(f"[{t['state']}] {t['content']}" for t in event.todos)
        print(f"\n[todos {event.update_kind}] {items}", flush=True)
    elif isinstance(event, BackgroundNotification):
        print(f"\n{event.message}", flush=True)
    elif isinstance(event, TokenStats):
        print(f"\n[context {event.context_tokens}/{event.limit} {event.phase}]", flush=True)
    elif isinstance(event, SessionComplete):
        print(f"\n[turn {event.status}{' ' + event.reason if event.reason else ''}]", flush=True)
    elif isinstance(event, ErrorEvent):
        print(f"\n[error {event.code}] {event.message}", flush=True)


async def _pump_events(client: WsClient) -> None:
    from .events import deserialize_event

    while True:
        raw = await client.ws.recv()
        frame = json.loads(raw)
        if frame.get("type") in ("ack", "token"):
            continue
        try:
            _print_event(deserialize_event(raw))
        except Exception:
            # Control-plane error frames share the type name but not the shape.
            if frame.get("type") == "error":
                print(f"\n[server error] {frame.get('message')}", flush=True)
            else:
                print(f"\n[server] {raw}", flush=True)


_RESOLUTIONS = {
    "/approve": "transient_allow",
    "/always": "persistent_allow",
    "/deny": "reject",
    "/suggest": "guided_correction",
}


async def _chat(config: EngineConfig, url: str | None, workspace: str | None) -> None:
    target = url or f"ws://{config.host}:{config.port}/v1/session"
    client = await WsClient.connect(target)
    await client.hello(workspace=workspace)
    print(f"connected; session {client.session_id}. /quit to exit.", flush=True)
    pump = asyncio.create_task(_pump_events(client))
    loop = asyncio.get_running_loop()
    try:
        while True:
            line = await loop.run_in_executor(None, sys.stdin.readline)
            if not line:
                break
            line = line.strip()
            if not line:
                continue
            if line == "/quit":
                break
            parts = line.split(maxsplit=2)
            if parts[0] in _RESOLUTIONS:
                if len(parts) < 2:
                    print(f"usage: {parts[0]} <request_id> [feedback]", flush=True)
                    continue
                feedback = parts[2] if len(parts) > 2 else ""
                await client.send_resolution(parts[1], _RESOLUTIONS[parts[0]], feedback)
            elif parts[0] == "/new" and len(parts) > 1:
                await client.send_switch(parts[1])
            elif parts[0] == "/abort":
                await client.send_abort()
            else:
                await client.send_input(line)
    finally:
        pump.cancel()
        await client.close()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="semacore", description="Embeddable coding agent engine")
    sub = parser.add_subparsers(dest="command", required=True)

    serve_p = sub.add_parser("serve", help="run the WebSocket service")
    serve_p.add_argument("--config", help="TOML or JSON engine config")
    serve_p.add_argument("--host", default=None)
    serve_p.add_argument("--port", type=int, default=None)

    chat_p = sub.add_parser("chat", help="terminal client for a running service")
    chat_p.add_argument("--config", help="TOML or JSON engine config (for host/port)")
    chat_p.add_argument("--url", default=None, help="ws:// endpoint; overrides config")
    chat_p.add_argument("--workspace", default=None)

    args = parser.parse_args(argv)
    try:
        config = _load(args.config)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "serve":
            asyncio.run(_serve(config, args.host, args.port))
        else:
            asyncio.run(_chat(config, args.url, args.workspace))
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
