"""Supervised background execution.

Tasks run as real subprocesses with their output dual-written: every chunk
goes to a disk spool first (``<workdir>/.sema/bg/<task_id>.log``) and then
into a bounded in-memory tail, so the tail is always a suffix of the file
and no byte is ever only in memory. An adaptive observer polls for process
exit starting at 100ms and doubling up to a 5s ceiling. The pool is bounded:
at most ``max_concurrent`` active tasks, and a FIFO retention pool of
finished tasks capped at ``retention``.

The PrimaryShell owns the single foreground execution slot. A foreground
command that outlives the timeout threshold is not killed: its process,
spool, and reader are handed to the manager as a background task and the
foreground call returns immediately with the task id (reactive takeover).
"""

from __future__ import annotations

import asyncio
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

TAIL_LIMIT = 64 * 1024

RUNNING = "running"
COMPLETED = "completed"
FAILED = "failed"
STOPPED = "stopped"


class UnknownTaskError(KeyError):
    pass


class CapacityError(RuntimeError):
    pass


class SpawnError(RuntimeError):
    pass


class OutputStore:
    """Disk-first dual write with a bounded memory tail."""

    def __init__(self, disk_path: str | Path, tail_limit: int = TAIL_LIMIT):
        self.disk_path = Path(disk_path)
        self.disk_path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.disk_path, "wb")
        self._tail = bytearray()
        self._tail_limit = tail_limit
        self.bytes_total = 0
        self.closed = False

    def append(self, data: bytes) -> None:
        if self.closed or not data:
            return
        self._file.write(data)
        self._file.flush()
        self.bytes_total += len(data)
        self._tail.extend(data)
        if len(self._tail) > self._tail_limit:
            del self._tail[: len(self._tail) - self._tail_limit]

    def tail_text(self) -> str:
        return self._tail.decode("utf-8", errors="replace")

    def read_all(self) -> bytes:
        if not self.closed:
            self._file.flush()
        return self.disk_path.read_bytes()

    def close(self) -> None:
        if not self.closed:
            self._file.close()
            self.closed = True


@dataclass
class Snapshot:
    task_id: str
    status: str
    tail: str
    bytes_total: int
    exit_code: int | None


class BackgroundTask:
    def __init__(self, task_id: str, command: str, process, store: OutputStore):
        self.task_id = task_id
        self.command = command
        self.process = process
        self.store = store
        self.status = RUNNING
        self.exit_code: int | None = None
        self.started_at = time.monotonic()
        self.ended_at: float | None = None
        self.reader: asyncio.Task | None = None
        self.observer: asyncio.Task | None = None
        self._finalizing = False
        self.finalized = asyncio.Event()

    def snapshot(self) -> Snapshot:
        return Snapshot(
            task_id=self.task_id,
            status=self.status,
            tail=self.store.tail_text(),
            bytes_total=self.store.bytes_total,
            exit_code=self.exit_code,
        )


async def pump_stream(stream, store: OutputStore) -> None:
    while True:
        chunk = await stream.read(4096)
        if not chunk:
            return
        store.append(chunk)


async def drain_reader(reader: asyncio.Task | None, grace: float) -> None:
    """Wait for pipe EOF, bounded.

    A grandchild (e.g. a daemonized job) can inherit the write end of the
    stdout pipe and hold it open long after the spawned shell exited, so EOF
    is not guaranteed. Everything written before the deadline is already in
    the store; after it the reader is cancelled.
    """
    if reader is None:
        return
    try:
        await asyncio.wait_for(reader, timeout=grace)
    except asyncio.TimeoutError:
        reader.cancel()
        try:
            await reader
        except asyncio.CancelledError:
            pass
    except asyncio.CancelledError:
        if not reader.cancelled():
            raise


def _close_transport(process) -> None:
    # Pipe transports held open by orphaned writers would otherwise complain
    # at interpreter shutdown; closing after process exit is always safe.
    transport = getattr(process, "_transport", None)
    if transport is not None:
        try:
            transport.close()
        except Exception:
            pass


class BackgroundManager:
    """Bounded task pool with adaptive exit polling and FIFO retirement."""

    def __init__(
        self,
        log_dir: str | Path,
        max_concurrent: int = 10,
        retention: int = 50,
        on_terminal: Callable | None = None,
        poll_initial: float = 0.1,
        poll_cap: float = 5.0,
        reader_grace: float = 1.0,
        cwd: str | Path | None = None,
    ):
        self.log_dir = Path(log_dir)
        self.max_concurrent = max_concurrent
        self.retention = retention
        self.on_terminal = on_terminal
        self.poll_initial = poll_initial
        self.poll_cap = poll_cap
        self.reader_grace = reader_grace
        self.cwd = Path(cwd) if cwd else None
        self.active: dict[str, BackgroundTask] = {}
        self.retired: dict[str, BackgroundTask] = {}
        self._seq = 0

    def reserve_id(self) -> str:
        self._seq += 1
        return f"task-{self._seq}"

    def spool_path(self, task_id: str) -> Path:
        return self.log_dir / f"{task_id}.log"

    async def spawn(self, command: str) -> str:
        if len(self.active) >= self.max_concurrent:
            raise CapacityError(
                f"active background tasks at limit ({self.max_concurrent})"
            )
        task_id = self.reserve_id()
        store = OutputStore(self.spool_path(task_id))
        try:
            process = await asyncio.create_subprocess_shell(
                command,
                stdout=asyncio.subprocess.PIPE,
                stderr=asyncio.subprocess.STDOUT,
                cwd=self.cwd,
            )
        except OSError as exc:
            store.close()
            raise SpawnError(str(exc)) from exc
        task = BackgroundTask(task_id, command, process, store)
        task.reader = asyncio.create_task(pump_stream(process.stdout, store))
        self._register(task)
        return task_id

    def adopt(
        self, task_id: str, command: str, process, store: OutputStore, reader: asyncio.Task
    ) -> str:
        """Register a process taken over from the foreground slot.

        Never fails: killing a healthy process because the pool is full would
        defeat the point of a non-destructive takeover, so adoption may
        transiently exceed max_concurrent; spawn() enforces the bound.
        """
        task = BackgroundTask(task_id, command, process, store)
        task.reader = reader
        self._register(task)
        return task_id

    def _register(self, task: BackgroundTask) -> None:
        self.active[task.task_id] = task
        task.observer = asyncio.create_task(self._observe(task))

    async def _observe(self, task: BackgroundTask) -> None:
        interval = self.poll_initial
        while task.process.returncode is None:
            await asyncio.sleep(interval)
            interval = min(interval * 2, self.poll_cap)
        await self._finalize(task)

    async def _finalize(self, task: BackgroundTask, stopped: bool = False) -> None:
        if task._finalizing:
            # someone else is finalizing; wait so callers observe the result
            await task.finalized.wait()
            return
        task._finalizing = True
        await drain_reader(task.reader, self.reader_grace)
        rc = task.process.returncode
        if stopped or (rc is not None and rc < 0):
            task.status = STOPPED
            task.exit_code = None
        elif rc == 0:
            task.status = COMPLETED
            task.exit_code = 0
        else:
            task.status = FAILED
            task.exit_code = rc
        task.ended_at = time.monotonic()
        task.store.close()
        _close_transport(task.process)
        self.active.pop(task.task_id, None)
        self.retired[task.task_id] = task
        while len(self.retired) > self.retention:
            oldest = next(iter(self.retired))
            del self.retired[oldest]
        task.finalized.set()
        if self.on_terminal is not None:
            self.on_terminal(task)

    def _lookup(self, task_id: str) -> BackgroundTask:
        task = self.active.get(task_id) or self.retired.get(task_id)
        if task is None:
            raise UnknownTaskError(task_id)
        return task

    def poll(self, task_id: str) -> Snapshot:
        return self._lookup(task_id).snapshot()

    def snapshots(self) -> list[Snapshot]:
        tasks = list(self.active.values()) + list(self.retired.values())
        return [t.snapshot() for t in tasks]

    async def stop(self, task_id: str) -> str:
        """Terminate a running task; stopping a finished task is a no-op."""
        task = self._lookup(task_id)
        if task.status != RUNNING:
            return task.status
        try:
            task.process.terminate()
        except ProcessLookupError:
            pass
        try:
            await asyncio.wait_for(task.process.wait(), timeout=5.0)
        except asyncio.TimeoutError:
            task.process.kill()
            await task.process.wait()
        # finalize directly; cancelling the observer first could abandon a
        # finalization already in flight
        await self._finalize(task, stopped=True)
        if task.observer is not None:
            task.observer.cancel()
        return task.status

    async def shutdown(self) -> None:
        for task_id in list(self.active):
            try:
                await self.stop(task_id)
            except UnknownTaskError:
                pass


@dataclass
class ForegroundResult:
    taken_over: bool
    task_id: str = ""
    output: str = ""
    exit_code: int | None = None
    aborted: bool = False


class PrimaryShell:
    """The single foreground execution slot with reactive takeover."""

    def __init__(self, manager: BackgroundManager, threshold: float, cwd: str | Path):
        self.manager = manager
        self.threshold = threshold
        self.cwd = Path(cwd)
        self._slot = asyncio.Lock()

    async def run(self, command: str, abort=None, threshold: float | None = None) -> ForegroundResult:
        limit = self.threshold if threshold is None else threshold
        async with self._slot:
            task_id = self.manager.reserve_id()
            store = OutputStore(self.manager.spool_path(task_id))
            try:
                process = await asyncio.create_subprocess_shell(
                    command,
                    stdout=asyncio.subprocess.PIPE,
                    stderr=asyncio.subprocess.STDOUT,
                    cwd=self.cwd,
                )
            except OSError as exc:
                store.close()
                raise SpawnError(str(exc)) from exc
            reader = asyncio.create_task(pump_stream(process.stdout, store))
            waiter = asyncio.create_task(process.wait())
            abort_task = asyncio.create_task(abort.wait()) if abort is not None else None
            watchers = {waiter} if abort_task is None else {waiter, abort_task}
            try:
                done, _ = await asyncio.wait(
                    watchers, timeout=limit, return_when=asyncio.FIRST_COMPLETED
                )
            except asyncio.CancelledError:
                # Caller was cancelled mid-command: the process must not outlive it.
                process.kill()
                waiter.cancel()
                reader.cancel()
                if abort_task is not None:
                    abort_task.cancel()
                store.close()
                _close_transport(process)
                raise

            if waiter in done:
                if abort_task is not None:
                    abort_task.cancel()
                await drain_reader(reader, self.manager.reader_grace)
                store.close()
                _close_transport(process)
                output = store.read_all().decode("utf-8", errors="replace")
                store.disk_path.unlink(missing_ok=True)
                return ForegroundResult(
                    taken_over=False, output=output, exit_code=process.returncode
                )
            if abort_task is not None and abort_task in done:
                process.kill()
                await process.wait()
                waiter.cancel()
                await drain_reader(reader, self.manager.reader_grace)
                store.close()
                _close_transport(process)
                output = store.read_all().decode("utf-8", errors="replace")
                store.disk_path.unlink(missing_ok=True)
                return ForegroundResult(taken_over=False, output=output, aborted=True)
            # Threshold elapsed: non-destructive detach. The same pid, spool,
            # and reader continue under the manager; not one byte is dropped.
            if abort_task is not None:
                abort_task.cancel()
            waiter.cancel()
            self.manager.adopt(task_id, command, process, store, reader)
            return ForegroundResult(taken_over=True, task_id=task_id, output=store.tail_text())
