#!/usr/bin/env python3
"""Scripted end-to-end tour of the engine API, no network involved.

Runs three queries against a mock-scripted instance in a throwaway
workspace: a read-only look around, a file edit that suspends on the
permission gate (auto-approved here), and a slow shell command that gets
taken over into the background pool. Every engine event is printed as it
streams.
"""

from __future__ import annotations

import asyncio
import tempfile
from pathlib import Path

from semacore.config import EngineConfig
from semacore.engine import EngineInstance
from semacore.events import PermissionRequested, event_type
from semacore.permissions import TRANSIENT_ALLOW, Resolution


def call(name, **args):
    return {"tool_call": {"name": name, "args": args}}


def usage(cum):
    return {"usage": {"cumulative_input_tokens": cum, "output_tokens": 4}}


SCRIPT = [
    [call("glob", pattern="**/*"), usage(120)],
    [{"text": "Two files here; header.txt starts with 'draft'."}, usage(180)],
    [call("edit_file", path="header.txt", old="draft", new="final"), usage(240)],
    [{"text": "Patched header.txt."}, usage(300)],
    [call("todo_write", todos=[
        {"id": "1", "content": "run the slow job", "state": "active"},
        {"id": "2", "content": "report back"},
    ]), usage(340)],
    [call("bash", command="sleep 1.2; echo done"), usage(400)],
    [{"text": "That one was slow, it is running in the background now."}, usage(460)],
    [{"text": "Background job finished, nothing else pending."}, usage(520)],
]


async def pump(instance, queue):
    while True:
        event = await queue.get()
        if event is None:
            return
        print(f"  [{event_type(event)}] {event}")
        if isinstance(event, PermissionRequested):
            print(f"  -> approving {event.request_id} ({event.summary})")
            instance.resolve(event.request_id, Resolution(TRANSIENT_ALLOW))


async def main():
    with tempfile.TemporaryDirectory() as ws:
        root = Path(ws)
        (root / "header.txt").write_text("draft notes\n")
        (root / "body.txt").write_text("hello\n")
        cfg = EngineConfig(
            adapter="mock",
            script=SCRIPT,
            workspace=ws,
            bash_whitelist=["echo", "sleep"],
            timeout_threshold=0.3,
        )
        instance = EngineInstance(cfg)
        instance.create_session("demo")
        queue = instance.subscribe()
        printer = asyncio.create_task(pump(instance, queue))

        for prompt in (
            "look around",
            "finalize the header",
            "track the work, then run the slow job",
        ):
            print(f"\n>>> {prompt}")
            instance.dispatch(prompt)
            await instance.wait_idle()

        print("\n... waiting for the background task to report in")
        await asyncio.sleep(1.8)
        await instance.wait_idle()

        print(f"\nheader.txt is now: {(root / 'header.txt').read_text()!r}")
        print(f"queue stats: {instance.stats}")
        await instance.close()
        queue.put_nowait(None)
        await printer


if __name__ == "__main__":
    asyncio.run(main())
