"""Engine instance behavior: dispatch, queue draining, switches, residue."""

from __future__ import annotations

import asyncio
import json

import pytest

from semacore import tenancy
from semacore.config import EngineConfig
from semacore.engine import EngineInstance, SessionUnknownError
from semacore.events import (
    BackgroundNotification,
    ErrorEvent,
    SessionComplete,
    TextChunk,
)
from semacore.messages import message_text


def make_instance(tmp_path, script, **overrides) -> EngineInstance:
    cfg = EngineConfig(adapter="mock", script=script, workspace=str(tmp_path), **overrides)
    return EngineInstance(cfg)


def text_turn(text, cum=10):
    return [{"text": text}, {"usage": {"cumulative_input_tokens": cum, "output_tokens": 1}}]


def slow_turn(text, delay_ms=150, cum=10):
    return [{"delay_ms": delay_ms}, {"text": text},
            {"usage": {"cumulative_input_tokens": cum, "output_tokens": 1}}]


def drain_events(queue):
    out = []
    while not queue.empty():
        out.append(queue.get_nowait())
    return out


class TestDispatch:
    async def test_idle_starts_busy_enqueues(self, tmp_path):
        inst = make_instance(tmp_path, [slow_turn("one"), text_turn("two")])
        session = inst.create_session()
        assert session.dispatch("first") == "started"
        assert session.busy
        assert session.dispatch("second") == "enqueued"
        await inst.wait_idle()
        assert inst.stats["dispatched"] == 2
        assert inst.stats["processed"] == 2
        assert inst.stats["purged"] == 0

    async def test_queued_texts_merge_into_one_batch(self, tmp_path):
        inst = make_instance(tmp_path, [slow_turn("one"), text_turn("two")])
        session = inst.create_session()
        session.dispatch("first")
        for extra in ("a", "b", "c"):
            session.dispatch(extra)
        await inst.wait_idle()
        # exactly two model turns: the live one and one merged batch
        assert len(inst.adapter.requests) == 2
        merged = message_text(inst.adapter.requests[1].history[-1])
        assert merged == "a\nb\nc"
        assert inst.stats["processed"] == 4

    async def test_command_batch_breaks_text_run(self, tmp_path):
        inst = make_instance(
            tmp_path, [slow_turn("one"), text_turn("two"), text_turn("three")]
        )
        session = inst.create_session()
        queue = inst.subscribe()
        session.dispatch("first")
        session.dispatch("a")
        session.dispatch("/status")
        session.dispatch("b")
        await inst.wait_idle()
        reasons = [e.reason for e in drain_events(queue) if isinstance(e, SessionComplete)]
        assert reasons == ["", "", "command", ""]

    async def test_unknown_session_rejected(self, tmp_path):
        inst = make_instance(tmp_path, [])
        with pytest.raises(SessionUnknownError):
            inst.dispatch("hi", session_id="ghost")
        with pytest.raises(SessionUnknownError):
            inst.require_session()

    async def test_duplicate_session_rejected(self, tmp_path):
        inst = make_instance(tmp_path, [])
        inst.create_session("s1")
        with pytest.raises(ValueError):
            inst.create_session("s1")


class TestCommands:
    async def test_status_reports_session_shape(self, tmp_path):
        inst = make_instance(tmp_path, [])
        session = inst.create_session("s7")
        queue = inst.subscribe()
        session.dispatch("/status")
        await inst.wait_idle()
        events = drain_events(queue)
        text = [e for e in events if isinstance(e, TextChunk)][0].text
        assert "session s7" in text
        assert "queued items: 0" in text
        reasons = [e.reason for e in events if isinstance(e, SessionComplete)]
        assert reasons == ["command"]

    async def test_new_without_argument(self, tmp_path):
        inst = make_instance(tmp_path, [])
        session = inst.create_session()
        queue = inst.subscribe()
        session.dispatch("/new")
        await inst.wait_idle()
        errors = [e for e in drain_events(queue) if isinstance(e, ErrorEvent)]
        assert errors[0].code == "bad-command"

    async def test_unknown_command(self, tmp_path):
        inst = make_instance(tmp_path, [])
        session = inst.create_session()
        queue = inst.subscribe()
        session.dispatch("/frobnicate now")
        await inst.wait_idle()
        errors = [e for e in drain_events(queue) if isinstance(e, ErrorEvent)]
        assert errors[0].code == "unknown-command"
        assert "frobnicate" in errors[0].message

    async def test_new_command_switches_session(self, tmp_path):
        inst = make_instance(tmp_path, [])
        inst.create_session("s1")
        inst.dispatch("/new s2")
        await inst.wait_idle()
        assert "s2" in inst.sessions
        assert "s1" not in inst.sessions
        assert inst.active_session_id == "s2"


class TestSessionSwitch:
    async def test_staged_switch_purges_and_reconstructs(self, tmp_path):
        inst = make_instance(tmp_path, [slow_turn("one", delay_ms=300)])
        session = inst.create_session("s1")
        session.dispatch("first")
        session.dispatch("queued-a")
        session.dispatch("queued-b")
        assert inst.request_session_switch("s2") == "staged"
        await inst.wait_idle()
        assert set(inst.sessions) == {"s2"}
        assert inst.stats["purged"] == 2
        assert inst.stats["dispatched"] == 3
        assert inst.stats["processed"] == 1
        assert inst.stats["dispatched"] == inst.stats["processed"] + inst.stats["purged"]

    async def test_idle_switch_applies_immediately(self, tmp_path):
        inst = make_instance(tmp_path, [])
        inst.create_session("s1")
        assert inst.request_session_switch("s2") == "applied"
        assert set(inst.sessions) == {"s2"}

    async def test_reconstructed_state_matches_fresh(self, tmp_path):
        script = [text_turn("one"), slow_turn("two", delay_ms=200)]
        inst = make_instance(tmp_path, script)
        session = inst.create_session("s1")
        session.dispatch("hello")
        await inst.wait_idle()
        assert session.local["main"].history  # residue to purge
        session.global_state.g_edit = True
        session.dispatch("busy again")
        inst.request_session_switch("s2")
        await inst.wait_idle()
        rebuilt = inst.sessions["s2"].state_dump()
        fresh = make_instance(tmp_path / "fresh", []).create_session("s2").state_dump()
        assert rebuilt == fresh

    async def test_switch_to_existing_name_is_fresh(self, tmp_path):
        inst = make_instance(tmp_path, [text_turn("one")])
        inst.create_session("s1")
        other = inst.create_session("s2")
        other.dispatch("hi")
        await inst.wait_idle()
        assert other.local["main"].history
        # switching s2 -> s2 still purges everything by that name
        rebuilt = inst.sessions["s2"].request_switch("s2")
        assert rebuilt == "applied"
        assert inst.sessions["s2"].local["main"].history == []

    async def test_last_staged_switch_wins(self, tmp_path):
        inst = make_instance(tmp_path, [slow_turn("one", delay_ms=300)])
        session = inst.create_session("s1")
        session.dispatch("first")
        session.request_switch("s2")
        session.request_switch("s3")
        await inst.wait_idle()
        assert set(inst.sessions) == {"s3"}


class TestBackgroundNotify:
    async def test_idle_notification_becomes_turn(self, tmp_path):
        inst = make_instance(tmp_path, [text_turn("looked at it")])
        session = inst.create_session()
        session.notify_background("[background task task-1 completed exit=0]")
        await inst.wait_idle()
        prompt = message_text(session.local["main"].history[0])
        assert prompt == "[background task task-1 completed exit=0]"

    async def test_busy_notification_rides_next_prompt(self, tmp_path):
        inst = make_instance(tmp_path, [slow_turn("one"), text_turn("two")])
        session = inst.create_session()
        session.dispatch("first")
        await asyncio.sleep(0.05)  # let the turn pass its note-drain point
        session.notify_background("[background task task-1 failed exit=2]")
        await inst.wait_idle()
        session.dispatch("next question")
        await inst.wait_idle()
        prompt = message_text(inst.adapter.requests[1].history[-1])
        assert prompt == "next question\n\n[background task task-1 failed exit=2]"

    async def test_terminal_background_task_round_trip(self, tmp_path):
        inst = make_instance(tmp_path, [text_turn("saw the task finish")])
        inst.create_session()
        queue = inst.subscribe()
        await inst.bg_manager.spawn("echo done")
        note = None
        for _ in range(500):
            events = drain_events(queue)
            note = next((e for e in events if isinstance(e, BackgroundNotification)), note)
            if note is not None:
                break
            await asyncio.sleep(0.01)
        assert note is not None
        assert note.task_id == "task-1"
        assert note.status == "completed"
        assert note.exit_code == 0
        assert note.message == "[background task task-1 completed exit=0]"
        await inst.wait_idle()
        await inst.close()


class TestBootWarnings:
    async def test_skill_warning_emitted_once(self, tmp_path):
        skills = tmp_path / ".sema" / "skills"
        skills.mkdir(parents=True)
        (skills / "broken.md").write_text("---\nname: [unclosed\n---\nbody\n")
        inst = make_instance(tmp_path, [text_turn("one"), text_turn("two")])
        session = inst.create_session()
        queue = inst.subscribe()
        session.dispatch("first")
        await inst.wait_idle()
        warnings = [
            e for e in drain_events(queue)
            if isinstance(e, ErrorEvent) and e.code == "skill-warning"
        ]
        assert len(warnings) == 1
        assert "broken.md" in warnings[0].message
        session.dispatch("second")
        await inst.wait_idle()
        assert not [
            e for e in drain_events(queue)
            if isinstance(e, ErrorEvent) and e.code == "skill-warning"
        ]


class TestTenancyBinding:
    async def test_spawn_binds_instance_bundle(self, tmp_path):
        inst_a = make_instance(tmp_path / "a", [])
        inst_b = make_instance(tmp_path / "b", [])
        seen = {}

        async def probe(tag):
            seen[tag] = tenancy.resolve_resources()

        await asyncio.gather(inst_a.spawn(probe("a")), inst_b.spawn(probe("b")))
        assert seen["a"] is inst_a.bundle
        assert seen["b"] is inst_b.bundle
        assert seen["a"] is not seen["b"]

    async def test_state_manager_view(self, tmp_path):
        inst = make_instance(tmp_path, [])
        session = inst.create_session("s1")
        state = inst.bundle.state_manager.get("s1")
        assert state.local is session.local
        assert inst.bundle.state_manager.active() is not None
        with pytest.raises(SessionUnknownError):
            inst.bundle.state_manager.get("nope")


class TestStateDump:
    async def test_dump_is_json_serializable(self, tmp_path):
        (tmp_path / "f.txt").write_text("x")
        script = [
            [{"tool_call": {"name": "read_file", "args": {"path": "f.txt"}}}, {"usage": 5}],
            text_turn("done"),
        ]
        inst = make_instance(tmp_path, script)
        session = inst.create_session()
        session.dispatch("read it")
        await inst.wait_idle()
        dump = session.state_dump()
        json.dumps(dump)  # deep-comparable and serializable
        assert dump["agents"]["main"]["file_reads"] == ["f.txt"]
        assert dump["g_edit"] is False
        assert dump["queue"] == []
        assert len(dump["agents"]["main"]["history"]) == 4


class TestClose:
    async def test_close_interrupts_running_turn(self, tmp_path):
        inst = make_instance(tmp_path, [slow_turn("one", delay_ms=2000)])
        session = inst.create_session()
        session.dispatch("first")
        await asyncio.sleep(0.02)
        await asyncio.wait_for(inst.close(), timeout=5.0)
        assert session._turn is None or session._turn.done()
