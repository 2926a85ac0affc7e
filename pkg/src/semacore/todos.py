"""Task tracking with id-matched subset updates and a single-active rule."""

from __future__ import annotations

from dataclasses import dataclass, replace

PENDING = "pending"
ACTIVE = "active"
COMPLETED = "completed"
TODO_STATES = (PENDING, ACTIVE, COMPLETED)


@dataclass(frozen=True)
class TodoItem:
    id: str
    content: str
    state: str = PENDING


@dataclass(frozen=True)
class TodoViolation:
    rule: str       # unique-id | bad-state | mutual-exclusion
    detail: str = ""


class RejectedTodoUpdate(Exception):
    def __init__(self, violation: TodoViolation):
        super().__init__(f"rejected-update: {violation.rule} ({violation.detail})")
        self.violation = violation


def validate_todos(items: list[TodoItem]) -> TodoViolation | None:
    seen: set[str] = set()
    active = 0
    for item in items:
        if item.id in seen:
            return TodoViolation("unique-id", item.id)
        seen.add(item.id)
        if item.state not in TODO_STATES:
            return TodoViolation("bad-state", item.state)
        if item.state == ACTIVE:
            active += 1
    if active > 1:
        return TodoViolation("mutual-exclusion", f"{active} active items")
    return None


def apply_todo_update(
    current: list[TodoItem], incoming: list[TodoItem]
) -> tuple[list[TodoItem], str]:
    """Apply an update and report its kind ("subset" or "replace").

    If every incoming id already exists, only the states of the matched items
    change; content bytes and unmatched items are preserved untouched. Any
    unknown id switches to full replacement. The merged result must itself
    validate (an incoming 'active' cannot coexist with an unmentioned one),
    otherwise RejectedTodoUpdate is raised and the current list stands.
    """
    violation = validate_todos(incoming)
    if violation is not None:
        raise RejectedTodoUpdate(violation)

    current_ids = {t.id for t in current}
    if incoming and all(t.id in current_ids for t in incoming):
        by_id = {t.id: t for t in incoming}
        merged = [
            replace(t, state=by_id[t.id].state) if t.id in by_id else t
            for t in current
        ]
        violation = validate_todos(merged)
        if violation is not None:
            raise RejectedTodoUpdate(violation)
        return merged, "subset"

    return list(incoming), "replace"


def todos_as_dicts(items: list[TodoItem]) -> list[dict]:
    return [{"id": t.id, "content": t.content, "state": t.state} for t in items]


def render_todos(items: list[TodoItem]) -> str:
    if not items:
        return "(no todos)"
    return "\n".join(f"- [{t.state}] {t.content}" for t in items)
