#!/usr/bin/env python3
"""Wire-protocol smoke test: one approval round trip over a live socket.

Starts the websocket service on an ephemeral port with a scripted mock
adapter, connects the bundled client, and walks a query through
permission suspension to completion, dumping every raw frame. Useful when
poking at the protocol with a new client implementation.
"""

from __future__ import annotations

import asyncio
import json
import tempfile
from pathlib import Path

from semacore.config import EngineConfig
from semacore.service import SERVICE_PATH, EngineServer, WsClient

SCRIPT = [
    [
        {"tool_call": {"name": "edit_file",
                       "args": {"path": "f.txt", "old": "red", "new": "green"}}},
        {"usage": {"cumulative_input_tokens": 90, "output_tokens": 3}},
    ],
    [
        {"text": "Swapped the color."},
        {"usage": {"cumulative_input_tokens": 140, "output_tokens": 4}},
    ],
]


async def main():
    with tempfile.TemporaryDirectory() as ws:
        (Path(ws) / "f.txt").write_text("red wire\n")
        server = EngineServer(EngineConfig(adapter="mock", script=SCRIPT, workspace=ws))
        ws_server = await server.serve(host="127.0.0.1", port=0)
        port = ws_server.sockets[0].getsockname()[1]
        url = f"ws://127.0.0.1:{port}{SERVICE_PATH}"
        print(f"serving {url}")

        client = await WsClient.connect(url)
        reply = await client.hello(session_id="smoke")
        print(f"<- {reply}")
        await client.send_input("make the wire green")

        while True:
            frame = json.loads(await client.ws.recv())
            print(f"<- {frame}")
            if frame.get("type") == "permission_request":
                await client.send_resolution(frame["request_id"], "transient_allow")
                print(f"-> resolution transient_allow for {frame['request_id']}")
            if frame.get("type") == "session_complete":
                break

        print(f"f.txt is now: {(Path(ws) / 'f.txt').read_text()!r}")
        await client.close()
        ws_server.close()
        await ws_server.wait_closed()
        await server.close()


if __name__ == "__main__":
    asyncio.run(main())
