"""Built-in tool suite and the registry the scheduler works from.

Tools declare a kind (read_only tools may run in parallel; write tools
serialize their whole batch) and optionally a permission layer. Handlers
raise ToolError for expected failures; the runtime converts those into
is_error tool results instead of crashing the batch.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Awaitable, Callable

from .background import CapacityError, SpawnError, UnknownTaskError
from .events import TodoUpdated
from .permissions import L1_FILE_EDIT, L2_BASH, L3_SKILL
from .todos import RejectedTodoUpdate, TodoItem, apply_todo_update, todos_as_dicts

READ_ONLY = "read_only"
WRITE = "write"


class ToolError(Exception):
    """Expected tool failure; surfaces as an is_error tool result."""


@dataclass
class ToolContext:
    """Everything a handler may touch, resolved per call by the runtime."""

    session: Any
    agent: Any
    workspace: Path
    registry: "ToolRegistry"
    bg_manager: Any = None
    shell: Any = None
    skills: dict = field(default_factory=dict)
    runtime: Any = None
    abort: Any = None
    emit: Callable | None = None   # emit(EventClass, **fields)


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    kind: str
    handler: Callable[[dict, ToolContext], Awaitable[str]]
    permission_layer: str | None = None
    description: str = ""
    parameters: dict = field(default_factory=dict)


class ToolRegistry:
    def __init__(self) -> None:
        self._tools: dict[str, ToolDescriptor] = {}

    def register(self, descriptor: ToolDescriptor, replace: bool = False) -> None:
        if descriptor.name in self._tools and not replace:
            raise ValueError(f"tool already registered: {descriptor.name}")
        self._tools[descriptor.name] = descriptor

    def get(self, name: str) -> ToolDescriptor | None:
        return self._tools.get(name)

    def names(self) -> list[str]:
        return list(self._tools)

    def without(self, *names: str) -> "ToolRegistry":
        view = ToolRegistry()
        for name, desc in self._tools.items():
            if name not in names:
                view._tools[name] = desc
        return view

    def schemas(self) -> list[dict]:
        return [
            {"name": d.name, "description": d.description, "parameters": d.parameters}
            for d in self._tools.values()
        ]


# ------------------------------------------------------------- file tools

def _resolve_path(workspace: Path, raw: str) -> Path:
    if not raw:
        raise ToolError("path argument is required")
    candidate = (workspace / raw).resolve()
    root = workspace.resolve()
    if candidate != root and root not in candidate.parents:
        raise ToolError(f"path escapes the workspace: {raw}")
    return candidate


def _rel(workspace: Path, path: Path) -> str:
    return str(path.resolve().relative_to(workspace.resolve()))


async def _read_file(args: dict, ctx: ToolContext) -> str:
    path = _resolve_path(ctx.workspace, args.get("path", ""))
    if not path.is_file():
        raise ToolError(f"not-found: {args.get('path')}")
    text = path.read_text(errors="replace")
    ctx.agent.file_reads[_rel(ctx.workspace, path)] = time.time()
    return text


async def _edit_file(args: dict, ctx: ToolContext) -> str:
    path = _resolve_path(ctx.workspace, args.get("path", ""))
    old = args.get("old", "")
    new = args.get("new", "")
    if not path.is_file():
        raise ToolError(f"not-found: {args.get('path')}")
    if not old:
        raise ToolError("old text must be nonempty")
    text = path.read_text(errors="replace")
    count = text.count(old)
    if count == 0:
        raise ToolError("old text not found in file")
    if count > 1:
        raise ToolError(f"ambiguous-edit: old text occurs {count} times")
    path.write_text(text.replace(old, new, 1))
    return f"edited {_rel(ctx.workspace, path)}"


def _walk_files(workspace: Path) -> list[Path]:
    # Deterministic order; dot-directories (.git, .sema) are never scanned.
    out = []
    for path in sorted(workspace.rglob("*")):
        if any(part.startswith(".") for part in path.relative_to(workspace).parts):
            continue
        if path.is_file():
            out.append(path)
    return out


async def _glob(args: dict, ctx: ToolContext) -> str:
    pattern = args.get("pattern", "")
    if not pattern:
        raise ToolError("pattern argument is required")
    ws = ctx.workspace.resolve()
    matches = sorted(
        _rel(ws, p) for p in ws.glob(pattern)
        if p.is_file() and not any(part.startswith(".") for part in p.relative_to(ws).parts)
    )
    return "\n".join(matches) if matches else "(no matches)"


async def _grep(args: dict, ctx: ToolContext) -> str:
    pattern = args.get("pattern", "")
    if not pattern:
        raise ToolError("pattern argument is required")
    use_regex = bool(args.get("regex", False))
    if use_regex:
        try:
            rx = re.compile(pattern)
        except re.error as exc:
            raise ToolError(f"bad regex: {exc}") from None
    ws = ctx.workspace.resolve()
    base = _resolve_path(ws, args.get("path", ".")) if args.get("path") else ws
    lines: list[str] = []
    files = _walk_files(base) if base.is_dir() else [base]
    for path in files:
        try:
            content = path.read_text(errors="replace")
        except OSError:
            continue
        for lineno, line in enumerate(content.splitlines(), start=1):
            hit = rx.search(line) if use_regex else pattern in line
            if hit:
                lines.append(f"{_rel(ws, path)}:{lineno}:{line}")
            if len(lines) >= 1000:
                return "\n".join(lines)
    return "\n".join(lines) if lines else "(no matches)"


# ------------------------------------------------------------ shell tools

async def _bash(args: dict, ctx: ToolContext) -> str:
    command = args.get("command", "")
    if not command.strip():
        raise ToolError("command argument is required")
    if args.get("background"):
        try:
            task_id = await ctx.bg_manager.spawn(command)
        except CapacityError as exc:
            raise ToolError(f"capacity: {exc}") from None
        except SpawnError as exc:
            raise ToolError(f"spawn failed: {exc}") from None
        return f"started background task {task_id}"
    try:
        result = await ctx.shell.run(command, abort=ctx.abort)
    except SpawnError as exc:
        raise ToolError(f"spawn failed: {exc}") from None
    if result.taken_over:
        return (
            f"command still running after {ctx.shell.threshold:g}s; "
            f"moved to background task {result.task_id}"
        )
    if result.aborted:
        raise ToolError("command aborted")
    if result.exit_code != 0:
        raise ToolError(f"exit {result.exit_code}\n{result.output}")
    return result.output


async def _bg_status(args: dict, ctx: ToolContext) -> str:
    task_id = args.get("task_id", "")
    try:
        snaps = [ctx.bg_manager.poll(task_id)] if task_id else ctx.bg_manager.snapshots()
    except UnknownTaskError:
        raise ToolError(f"unknown-id: {task_id}") from None
    if not snaps:
        return "(no background tasks)"
    parts = []
    for s in snaps:
        line = f"{s.task_id}: {s.status}"
        if s.exit_code is not None:
            line += f" exit={s.exit_code}"
        line += f" bytes={s.bytes_total}"
        if task_id and s.tail:
            line += f"\n{s.tail}"
        parts.append(line)
    return "\n".join(parts)


async def _bg_stop(args: dict, ctx: ToolContext) -> str:
    task_id = args.get("task_id", "")
    if not task_id:
        raise ToolError("task_id argument is required")
    try:
        status = await ctx.bg_manager.stop(task_id)
    except UnknownTaskError:
        raise ToolError(f"unknown-id: {task_id}") from None
    return f"{task_id}: {status}"


# ------------------------------------------------------------ todo / meta

async def _todo_write(args: dict, ctx: ToolContext) -> str:
    raw = args.get("todos")
    if not isinstance(raw, list):
        raise ToolError("todos argument must be a list")
    try:
        incoming = [
            TodoItem(id=str(t["id"]), content=str(t.get("content", "")), state=str(t.get("state", "pending")))
            for t in raw
        ]
    except (KeyError, TypeError) as exc:
        raise ToolError(f"bad todo item: {exc}") from None
    try:
        merged, kind = apply_todo_update(ctx.agent.todos, incoming)
    except RejectedTodoUpdate as exc:
        raise ToolError(str(exc)) from None
    ctx.agent.todos = merged
    if ctx.emit is not None:
        ctx.emit(TodoUpdated, todos=todos_as_dicts(merged), update_kind=kind)
    return f"todos updated ({kind}, {len(merged)} items)"


async def _task(args: dict, ctx: ToolContext) -> str:
    prompt = args.get("prompt", "")
    if not prompt.strip():
        raise ToolError("prompt argument is required")
    report = await ctx.runtime.spawn_subagent(ctx.session, prompt)
    if report.status != "completed":
        raise ToolError(f"sub-agent {report.status}: {report.final_text or '(no output)'}")
    return report.final_text or "(sub-agent returned no text)"


async def _skill(args: dict, ctx: ToolContext) -> str:
    name = args.get("name", "")
    skill = ctx.skills.get(name)
    if skill is None:
        raise ToolError(f"not-found: skill {name!r}")
    ctx.agent.pending_skills.append(f"## Skill: {skill.name}\n\n{skill.body}")
    return f"skill '{skill.name}' loaded into context"


_STR = {"type": "string"}


def build_default_registry() -> ToolRegistry:
    registry = ToolRegistry()
    entries = [
        ToolDescriptor(
            "read_file", READ_ONLY, _read_file,
            description="Read a workspace file",
            parameters={"type": "object", "properties": {"path": _STR}, "required": ["path"]},
        ),
        ToolDescriptor(
            "edit_file", WRITE, _edit_file, permission_layer=L1_FILE_EDIT,
            description="Replace one exact occurrence of old with new in a file",
            parameters={
                "type": "object",
                "properties": {"path": _STR, "old": _STR, "new": _STR},
                "required": ["path", "old", "new"],
            },
        ),
        ToolDescriptor(
            "glob", READ_ONLY, _glob,
            description="List workspace files matching a glob pattern",
            parameters={"type": "object", "properties": {"pattern": _STR}, "required": ["pattern"]},
        ),
        ToolDescriptor(
            "grep", READ_ONLY, _grep,
            description="Search workspace files for a pattern",
            parameters={
                "type": "object",
                "properties": {"pattern": _STR, "path": _STR, "regex": {"type": "boolean"}},
                "required": ["pattern"],
            },
        ),
        ToolDescriptor(
            "bash", WRITE, _bash, permission_layer=L2_BASH,
            description="Run a shell command (background=true for a supervised task)",
            parameters={
                "type": "object",
                "properties": {"command": _STR, "background": {"type": "boolean"}},
                "required": ["command"],
            },
        ),
        ToolDescriptor(
            "todo_write", WRITE, _todo_write,
            description="Replace or subset-update the todo list",
            parameters={"type": "object", "properties": {"todos": {"type": "array"}}, "required": ["todos"]},
        ),
        ToolDescriptor(
            "task", WRITE, _task,
            description="Delegate a self-contained task to a sub-agent",
            parameters={"type": "object", "properties": {"prompt": _STR}, "required": ["prompt"]},
        ),
        ToolDescriptor(
            "skill", WRITE, _skill, permission_layer=L3_SKILL,
            description="Load a named skill's instructions into context",
            parameters={"type": "object", "properties": {"name": _STR}, "required": ["name"]},
        ),
        ToolDescriptor(
            "bg_status", READ_ONLY, _bg_status,
            description="Status and output tail of background tasks",
            parameters={"type": "object", "properties": {"task_id": _STR}},
        ),
        ToolDescriptor(
            "bg_stop", WRITE, _bg_stop,
            description="Stop a running background task",
            parameters={"type": "object", "properties": {"task_id": _STR}, "required": ["task_id"]},
        ),
    ]
    for desc in entries:
        registry.register(desc)
    return registry
