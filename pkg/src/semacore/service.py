"""WebSocket service layer: token-addressed sessions over ``/v1/session``.

Clients send line-shaped JSON frames. The first frame must be a hello, which
either boots a fresh engine instance (optionally overriding the base config)
or resumes an existing one by token. The server answers with a 128-bit hex
token; every subsequent frame must carry it. Engine events stream back as
wire-serialized lines interleaved with ack/error control frames.

Outbound flow control drops the oldest droppable frames (text and thinking
chunks) when a consumer lags; permission requests, session completions, and
the other control-plane events are never dropped.
"""

from __future__ import annotations

import asyncio
import json
import secrets
from dataclasses import replace as dc_replace

import websockets

from .config import EngineConfig, InvalidConfigError, config_from_mapping
from .engine import EngineInstance, SessionUnknownError, create_instance
from .events import EngineEvent, deserialize_event, event_type, serialize_event
from .permissions import RESOLUTION_KINDS, Resolution

SERVICE_PATH = "/v1/session"

DROPPABLE = {"text_chunk", "thinking_chunk"}


class DropBuffer:
    """Bounded outbound frame buffer with type-aware drop policy."""

    def __init__(self, capacity: int = 1024):
        self.capacity = capacity
        self._frames: list[tuple[str, str]] = []   # (event_type, line)
        self._ready = asyncio.Event()
        self.dropped = 0
        self.closed = False

    def push(self, type_name: str, line: str) -> None:
        if len(self._frames) >= self.capacity:
            for i, (t, _) in enumerate(self._frames):
                if t in DROPPABLE:
                    del self._frames[i]
                    self.dropped += 1
                    break
            # No droppable frame found: essential traffic may exceed capacity.
        self._frames.append((type_name, line))
        self._ready.set()

    async def pop(self) -> str | None:
        while not self._frames:
            if self.closed:
                return None
            self._ready.clear()
            await self._ready.wait()
        _, line = self._frames.pop(0)
        return line

    def close(self) -> None:
        self.closed = True
        self._ready.set()


def _merge_config(base: EngineConfig, overrides: dict | None, workspace: str | None) -> EngineConfig:
    if not overrides and not workspace:
        return dc_replace(base)
    data = {**(overrides or {})}
    if workspace:
        data["workspace"] = workspace
    merged = dc_replace(base, **{k: v for k, v in data.items()})
    merged.validate()
    return merged


class EngineServer:
    """Hosts one engine instance per hello; tokens survive reconnects."""

    def __init__(self, base_config: EngineConfig):
        self.base_config = base_config
        self.instances: dict[str, EngineInstance] = {}

    async def _boot(self, frame: dict) -> tuple[str, EngineInstance]:
        token = frame.get("token")
        if token:
            instance = self.instances.get(token)
            if instance is None:
                raise InvalidConfigError("unknown token")
            return token, instance
        config = _merge_config(
            self.base_config, frame.get("config"), frame.get("workspace")
        )
        instance = create_instance(config)
        instance.create_session(frame.get("session_id", "s1"))
        token = secrets.token_hex(16)
        self.instances[token] = instance
        return token, instance

    async def _forward(self, instance: EngineInstance, ws) -> None:
        queue = instance.subscribe()
        buffer = DropBuffer()

        async def _drain() -> None:
            while True:
                event: EngineEvent = await queue.get()
                buffer.push(event_type(event), serialize_event(event))

        drainer = asyncio.create_task(_drain())
        try:
            while True:
                line = await buffer.pop()
                if line is None:
                    return
                await ws.send(line)
        finally:
            drainer.cancel()
            instance.bus.unsubscribe(queue)

    async def handle(self, ws) -> None:
        path = getattr(getattr(ws, "request", None), "path", SERVICE_PATH)
        if path != SERVICE_PATH:
            await ws.close(code=1008, reason="unknown path")
            return
        token: str | None = None
        instance: EngineInstance | None = None
        forwarder: asyncio.Task | None = None
        try:
            async for raw in ws:
                try:
                    frame = json.loads(raw)
                    if not isinstance(frame, dict):
                        raise ValueError("frame is not an object")
                except (json.JSONDecodeError, ValueError) as exc:
                    await ws.send(_control("error", message=f"bad frame: {exc}"))
                    if instance is None:
                        await ws.close(code=1002, reason="protocol error")
                        return
                    continue

                if instance is None:
                    if frame.get("type") != "hello":
                        await ws.send(_control("error", message="first frame must be hello"))
                        await ws.close(code=1002, reason="protocol error")
                        return
                    try:
                        token, instance = await self._boot(frame)
                    except (InvalidConfigError, TypeError) as exc:
                        await ws.send(_control("error", message=str(exc)))
                        await ws.close(code=1002, reason="bad hello")
                        return
                    await ws.send(
                        _control(
                            "token",
                            token=token,
                            session_id=instance.active_session_id,
                        )
                    )
                    forwarder = asyncio.create_task(self._forward(instance, ws))
                    continue

                await self._route(ws, token, instance, frame)
        finally:
            if forwarder is not None:
                forwarder.cancel()

    async def _route(self, ws, token: str, instance: EngineInstance, frame: dict) -> None:
        if frame.get("token") != token:
            await ws.send(_control("error", message="missing or wrong token"))
            return
        ftype = frame.get("type")
        try:
            if ftype == "input":
                result = instance.dispatch(str(frame.get("text", "")))
                await ws.send(_control("ack", op="input", result=result))
            elif ftype == "resolution":
                kind = frame.get("kind", "")
                if kind not in RESOLUTION_KINDS:
                    await ws.send(_control("error", message=f"bad resolution kind: {kind}"))
                    return
                ok = instance.resolve(
                    str(frame.get("request_id", "")),
                    Resolution(kind=kind, feedback=str(frame.get("feedback", ""))),
                )
                if ok:
                    await ws.send(_control("ack", op="resolution", result="accepted"))
                else:
                    await ws.send(_control("error", message="unknown request_id"))
            elif ftype == "abort":
                instance.trip_abort()
                await ws.send(_control("ack", op="abort", result="tripped"))
            elif ftype == "switch_session":
                result = instance.request_session_switch(str(frame.get("session_id", "")))
                await ws.send(_control("ack", op="switch_session", result=result))
            else:
                await ws.send(_control("error", message=f"unknown frame type: {ftype}"))
        except SessionUnknownError as exc:
            await ws.send(_control("error", message=str(exc)))

    async def serve(self, host: str | None = None, port: int | None = None):
        """Returns the websockets server; use as async context manager."""
        host = host or self.base_config.host
        port = self.base_config.port if port is None else port
        return await websockets.serve(self.handle, host, port)

    async def close(self) -> None:
        for instance in self.instances.values():
            await instance.close()


def _control(type_name: str, **fields) -> str:
    return json.dumps({"v": 1, "type": type_name, **fields}, sort_keys=True, separators=(",", ":"))


class WsClient:
    """Minimal frame-level client used by the CLI and the tests."""

    def __init__(self, ws):
        self.ws = ws
        self.token: str | None = None
        self.session_id: str | None = None

    @classmethod
    async def connect(cls, url: str) -> "WsClient":
        ws = await websockets.connect(url)
        return cls(ws)

    async def hello(
        self,
        workspace: str | None = None,
        config: dict | None = None,
        session_id: str | None = None,
        token: str | None = None,
    ) -> dict:
        frame: dict = {"type": "hello"}
        if workspace:
            frame["workspace"] = workspace
        if config:
            frame["config"] = config
        if session_id:
            frame["session_id"] = session_id
        if token:
            frame["token"] = token
        await self.ws.send(json.dumps(frame))
        reply = await self.recv_control()
        if reply.get("type") != "token":
            raise RuntimeError(f"hello failed: {reply}")
        self.token = reply["token"]
        self.session_id = reply.get("session_id")
        return reply

    async def send_input(self, text: str) -> None:
        await self.ws.send(json.dumps({"type": "input", "token": self.token, "text": text}))

    async def send_resolution(self, request_id: str, kind: str, feedback: str = "") -> None:
        await self.ws.send(
            json.dumps(
                {
                    "type": "resolution",
                    "token": self.token,
                    "request_id": request_id,
                    "kind": kind,
                    "feedback": feedback,
                }
            )
        )

    async def send_abort(self) -> None:
        await self.ws.send(json.dumps({"type": "abort", "token": self.token}))

    async def send_switch(self, session_id: str) -> None:
        await self.ws.send(
            json.dumps({"type": "switch_session", "token": self.token, "session_id": session_id})
        )

    async def recv_raw(self) -> dict:
        return json.loads(await self.ws.recv())

    async def recv_control(self) -> dict:
        """Next non-event frame (ack / error / token)."""
        while True:
            frame = await self.recv_raw()
            if frame.get("type") not in ("ack", "error", "token"):
                continue
            return frame

    async def next_event(self, *types: str) -> EngineEvent:
        """Next engine event, optionally filtered by type name."""
        while True:
            raw = await self.ws.recv()
            frame = json.loads(raw)
            if frame.get("type") in ("ack", "error", "token"):
                continue
            event = deserialize_event(raw)
            if not types or event_type(event) in types:
                return event

    async def close(self) -> None:
        await self.ws.close()
