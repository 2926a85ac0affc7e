"""Background pool mechanics and the foreground slot with takeover."""

from __future__ import annotations

import asyncio

import pytest

from semacore.background import (
    COMPLETED,
    FAILED,
    RUNNING,
    STOPPED,
    BackgroundManager,
    CapacityError,
    ForegroundResult,
    OutputStore,
    PrimaryShell,
    UnknownTaskError,
)
from semacore.tenancy import AbortSignal


def fast_manager(tmp_path, **kw):
    kw.setdefault("poll_initial", 0.01)
    kw.setdefault("poll_cap", 0.05)
    kw.setdefault("reader_grace", 0.2)
    return BackgroundManager(tmp_path / "bg", **kw)


async def wait_retired(manager, task_id, timeout=10.0):
    loop = asyncio.get_running_loop()
    deadline = loop.time() + timeout
    while task_id not in manager.retired:
        if loop.time() > deadline:
            raise AssertionError(f"{task_id} never finished")
        await asyncio.sleep(0.01)
    return manager.retired[task_id]


class TestOutputStore:
    def test_disk_write_happens_before_tail(self, tmp_path):
        store = OutputStore(tmp_path / "x.log")
        store.append(b"hello ")
        store.append(b"world")
        # file readable mid-stream, not only after close
        assert (tmp_path / "x.log").read_bytes() == b"hello world"
        assert store.tail_text() == "hello world"
        store.close()

    def test_tail_is_bounded_suffix(self, tmp_path):
        store = OutputStore(tmp_path / "x.log", tail_limit=10)
        for i in range(20):
            store.append(f"{i:04d}".encode())
        disk = store.read_all()
        assert len(disk) == 80
        tail = store.tail_text().encode()
        assert len(tail) == 10
        assert disk.endswith(tail)
        assert store.bytes_total == 80
        store.close()

    def test_append_after_close_is_noop(self, tmp_path):
        store = OutputStore(tmp_path / "x.log")
        store.append(b"a")
        store.close()
        store.append(b"b")
        assert store.read_all() == b"a"


class TestBackgroundManager:
    async def test_spawn_and_complete(self, tmp_path):
        manager = fast_manager(tmp_path)
        task_id = await manager.spawn("echo bg-output")
        assert task_id == "task-1"
        snap = manager.poll(task_id)
        assert snap.status == RUNNING
        task = await wait_retired(manager, task_id)
        assert task.status == COMPLETED
        assert task.exit_code == 0
        assert "bg-output" in task.store.tail_text()
        assert manager.spool_path(task_id).read_bytes() == b"bg-output\n"

    async def test_failed_task(self, tmp_path):
        manager = fast_manager(tmp_path)
        task_id = await manager.spawn("exit 3")
        task = await wait_retired(manager, task_id)
        assert task.status == FAILED
        assert task.exit_code == 3

    async def test_stop_running_task(self, tmp_path):
        manager = fast_manager(tmp_path)
        task_id = await manager.spawn("sleep 30")
        status = await manager.stop(task_id)
        assert status == STOPPED
        snap = manager.poll(task_id)
        assert snap.status == STOPPED
        assert snap.exit_code is None

    async def test_stop_finished_task_is_noop(self, tmp_path):
        manager = fast_manager(tmp_path)
        task_id = await manager.spawn("echo done")
        await wait_retired(manager, task_id)
        assert await manager.stop(task_id) == COMPLETED

    async def test_capacity_bound(self, tmp_path):
        manager = fast_manager(tmp_path, max_concurrent=2)
        a = await manager.spawn("sleep 30")
        b = await manager.spawn("sleep 30")
        with pytest.raises(CapacityError):
            await manager.spawn("echo third")
        await manager.shutdown()
        assert manager.active == {}
        assert {a, b} <= set(manager.retired)

    async def test_retention_fifo_eviction(self, tmp_path):
        manager = fast_manager(tmp_path, retention=3)
        ids = []
        for i in range(5):
            task_id = await manager.spawn(f"echo {i}")
            await wait_retired(manager, task_id)
            ids.append(task_id)
        assert len(manager.retired) == 3
        assert list(manager.retired) == ids[2:]
        with pytest.raises(UnknownTaskError):
            manager.poll(ids[0])

    async def test_adopt_may_exceed_capacity(self, tmp_path):
        manager = fast_manager(tmp_path, max_concurrent=1)
        await manager.spawn("sleep 30")
        # a takeover hand-off must never kill the process for pool reasons
        task_id = manager.reserve_id()
        store = OutputStore(manager.spool_path(task_id))
        process = await asyncio.create_subprocess_shell(
            "sleep 30", stdout=asyncio.subprocess.PIPE,
            stderr=asyncio.subprocess.STDOUT,
        )
        from semacore.background import pump_stream

        reader = asyncio.create_task(pump_stream(process.stdout, store))
        manager.adopt(task_id, "sleep 30", process, store, reader)
        assert len(manager.active) == 2
        await manager.shutdown()

    async def test_on_terminal_callback(self, tmp_path):
        seen = []
        manager = fast_manager(tmp_path, on_terminal=lambda t: seen.append(t.task_id))
        task_id = await manager.spawn("echo x")
        await wait_retired(manager, task_id)
        assert seen == [task_id]

    async def test_unknown_task_rejected(self, tmp_path):
        manager = fast_manager(tmp_path)
        with pytest.raises(UnknownTaskError):
            manager.poll("task-99")

    async def test_orphaned_pipe_does_not_block_finalization(self, tmp_path):
        # a daemonized grandchild inherits the stdout pipe and holds it open;
        # the task must still finalize once the shell itself exits
        manager = fast_manager(tmp_path)
        task_id = await manager.spawn("sleep 30 & echo hi")
        task = await wait_retired(manager, task_id, timeout=5.0)
        assert task.status == COMPLETED
        assert "hi" in task.store.tail_text()

    async def test_stop_returns_promptly_despite_orphans(self, tmp_path):
        manager = fast_manager(tmp_path)
        task_id = await manager.spawn("sleep 30")
        loop = asyncio.get_running_loop()
        start = loop.time()
        status = await manager.stop(task_id)
        assert loop.time() - start < 3.0
        assert status == STOPPED

    async def test_snapshots_cover_active_and_retired(self, tmp_path):
        manager = fast_manager(tmp_path)
        done = await manager.spawn("echo a")
        await wait_retired(manager, done)
        live = await manager.spawn("sleep 30")
        snaps = {s.task_id: s for s in manager.snapshots()}
        assert snaps[done].status == COMPLETED
        assert snaps[live].status == RUNNING
        await manager.shutdown()


class TestPrimaryShell:
    async def test_fast_command_returns_inline(self, tmp_path):
        manager = fast_manager(tmp_path)
        shell = PrimaryShell(manager, threshold=30.0, cwd=tmp_path)
        result = await shell.run("echo fast")
        assert result == ForegroundResult(taken_over=False, output="fast\n",
                                          exit_code=0)
        # spool is an implementation detail of success; it must be gone
        assert list((tmp_path / "bg").glob("*.log")) == []

    async def test_nonzero_exit_reported(self, tmp_path):
        manager = fast_manager(tmp_path)
        shell = PrimaryShell(manager, threshold=30.0, cwd=tmp_path)
        result = await shell.run("echo oops; exit 2")
        assert result.exit_code == 2
        assert result.output == "oops\n"

    async def test_takeover_preserves_output_continuity(self, tmp_path):
        manager = fast_manager(tmp_path)
        shell = PrimaryShell(manager, threshold=0.2, cwd=tmp_path)
        loop = asyncio.get_running_loop()
        start = loop.time()
        result = await shell.run("echo before; sleep 1; echo after")
        elapsed = loop.time() - start
        assert result.taken_over
        assert elapsed < 0.9  # returned at threshold, not at completion
        assert "before" in result.output
        task = await wait_retired(manager, result.task_id)
        assert task.status == COMPLETED
        spooled = manager.spool_path(result.task_id).read_text()
        assert spooled == "before\nafter\n"

    async def test_abort_kills_foreground_command(self, tmp_path):
        manager = fast_manager(tmp_path)
        shell = PrimaryShell(manager, threshold=30.0, cwd=tmp_path)
        abort = AbortSignal()

        async def tripper():
            await asyncio.sleep(0.1)
            abort.trip()

        task = asyncio.ensure_future(tripper())
        loop = asyncio.get_running_loop()
        start = loop.time()
        result = await shell.run("echo started; sleep 30", abort=abort)
        elapsed = loop.time() - start
        await task
        assert result.aborted
        assert not result.taken_over
        assert elapsed < 5.0
        assert "started" in result.output

    async def test_slot_serializes_commands(self, tmp_path):
        manager = fast_manager(tmp_path)
        shell = PrimaryShell(manager, threshold=30.0, cwd=tmp_path)
        loop = asyncio.get_running_loop()
        start = loop.time()
        await asyncio.gather(shell.run("sleep 0.2"), shell.run("sleep 0.2"))
        assert loop.time() - start >= 0.4

    async def test_takeover_task_is_stoppable(self, tmp_path):
        manager = fast_manager(tmp_path)
        shell = PrimaryShell(manager, threshold=0.1, cwd=tmp_path)
        result = await shell.run("sleep 30")
        assert result.taken_over
        status = await manager.stop(result.task_id)
        assert status == STOPPED
