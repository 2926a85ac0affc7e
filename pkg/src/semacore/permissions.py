"""Four-layer permission control.

Layer L1 gates file edits on a session-wide flag, L2 gates shell commands on
a project whitelist evaluated over every pipeline segment, L3 gates skill
invocation and L4 external tools on project-scoped authorization sets.
Anything that is not conclusively allowed produces an approval request that
suspends only the requesting tool call; anything the injection screen marks
destructive-by-chaining is denied outright.

The pipeline scanner is deliberately small: quote-aware splitting on
``|``, ``||``, ``&&`` and ``;`` (recognizing ``||`` splits more, never less,
which is the safe direction), head-token extraction with quote resolution,
basename normalization, and multi-word prefix matching against whitelist
entries. Parse failures (unbalanced quoting) are never errors; they turn into
approval requests carrying a risk note.
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .tenancy import AbortSignal

L1_FILE_EDIT = "L1"
L2_BASH = "L2"
L3_SKILL = "L3"
L4_EXTERNAL = "L4"
LAYERS = (L1_FILE_EDIT, L2_BASH, L3_SKILL, L4_EXTERNAL)

ALLOW = "allow"
DENY = "deny"
REQUEST = "request"

TRANSIENT_ALLOW = "transient_allow"
PERSISTENT_ALLOW = "persistent_allow"
REJECT = "reject"
GUIDED_CORRECTION = "guided_correction"
RESOLUTION_KINDS = (TRANSIENT_ALLOW, PERSISTENT_ALLOW, REJECT, GUIDED_CORRECTION)


class PipelineParseError(ValueError):
    pass


class UnknownLayerError(ValueError):
    pass


# ---------------------------------------------------------------- scanning

_TWO_CHAR_OPS = ("&&", "||")
_ONE_CHAR_OPS = ("|", ";")


def split_pipeline(command: str) -> list[str]:
    """Split on unquoted pipeline operators; segments keep their raw text.

    Raises PipelineParseError on unbalanced quotes or a trailing escape.
    Empty segments (e.g. from a trailing operator) are preserved: a segment
    with no head can never match the whitelist, which fails safe.
    """
    segments: list[str] = []
    current: list[str] = []
    in_single = False
    in_double = False
    i = 0
    n = len(command)
    while i < n:
        c = command[i]
        if in_single:
            current.append(c)
            if c == "'":
                in_single = False
            i += 1
            continue
        if in_double:
            if c == "\\":
                if i + 1 >= n:
                    raise PipelineParseError("trailing escape")
                current.append(c)
                current.append(command[i + 1])
                i += 2
                continue
            current.append(c)
            if c == '"':
                in_double = False
            i += 1
            continue
        if c == "\\":
            if i + 1 >= n:
                raise PipelineParseError("trailing escape")
            current.append(c)
            current.append(command[i + 1])
            i += 2
            continue
        if c == "'":
            in_single = True
            current.append(c)
            i += 1
            continue
        if c == '"':
            in_double = True
            current.append(c)
            i += 1
            continue
        two = command[i : i + 2]
        if two in _TWO_CHAR_OPS:
            segments.append("".join(current).strip())
            current = []
            i += 2
            continue
        if c in _ONE_CHAR_OPS:
            segments.append("".join(current).strip())
            current = []
            i += 1
            continue
        current.append(c)
        i += 1
    if in_single or in_double:
        raise PipelineParseError("unbalanced quote")
    segments.append("".join(current).strip())
    return segments


def head_words(segment: str, limit: int) -> list[str]:
    """First ``limit`` whitespace-delimited words with quoting resolved.

    Only called on segments produced by split_pipeline, so quotes inside are
    balanced; a defensive parse error still just yields what was scanned.
    """
    words: list[str] = []
    current: list[str] = []
    started = False
    in_single = False
    in_double = False
    i = 0
    n = len(segment)
    while i < n and len(words) < limit:
        c = segment[i]
        if in_single:
            if c == "'":
                in_single = False
            else:
                current.append(c)
            i += 1
            continue
        if in_double:
            if c == "\\" and i + 1 < n:
                current.append(segment[i + 1])
                i += 2
                continue
            if c == '"':
                in_double = False
            else:
                current.append(c)
            i += 1
            continue
        if c == "\\" and i + 1 < n:
            current.append(segment[i + 1])
            started = True
            i += 2
            continue
        if c == "'":
            in_single = True
            started = True
            i += 1
            continue
        if c == '"':
            in_double = True
            started = True
            i += 1
            continue
        if c.isspace():
            if started:
                words.append("".join(current))
                current = []
                started = False
            i += 1
            continue
        current.append(c)
        started = True
        i += 1
    if started and len(words) < limit:
        words.append("".join(current))
    return words


def _basename(word: str) -> str:
    return word.rsplit("/", 1)[-1]


def segment_matches(segment: str, whitelist: list[str]) -> bool:
    if not whitelist:
        return False
    max_len = max(len(entry.split()) for entry in whitelist)
    words = head_words(segment, max(max_len, 1))
    if not words:
        return False
    words = [_basename(words[0])] + words[1:]
    for entry in whitelist:
        entry_words = entry.split()
        if len(words) >= len(entry_words) and words[: len(entry_words)] == entry_words:
            return True
    return False


def evaluate_bash(command: str, whitelist: list[str]) -> tuple[str, str]:
    """Whitelist fast-pass: ("allow"|"request", risk_note).

    Allow requires *every* segment head to match; one unknown head anywhere
    in the pipeline downgrades the whole command to an approval request.
    """
    try:
        segments = split_pipeline(command)
    except PipelineParseError as exc:
        return REQUEST, f"parse failure: {exc}"
    if all(segment_matches(seg, whitelist) for seg in segments):
        return ALLOW, ""
    return REQUEST, ""


# ------------------------------------------------------------- injection

@dataclass(frozen=True)
class ScreenResult:
    verdict: str                      # clean | warn | block
    reasons: tuple[str, ...] = ()


class InjectionClassifier(Protocol):
    def classify(self, command: str) -> ScreenResult: ...


def _search_outside_single_quotes(command: str, needle: str) -> bool:
    in_single = False
    i = 0
    n = len(command)
    while i < n:
        c = command[i]
        if in_single:
            if c == "'":
                in_single = False
            i += 1
            continue
        if c == "\\":
            i += 2
            continue
        if c == "'":
            in_single = True
            i += 1
            continue
        if command.startswith(needle, i):
            return True
        i += 1
    return False


def _destructive_segment(segment: str) -> bool:
    words = head_words(segment, 6)
    if not words:
        return False
    head = _basename(words[0])
    rest = words[1:]
    if head == "rm":
        flags = "".join(w.lstrip("-") for w in rest if w.startswith("-"))
        if "r" in flags.lower() and "f" in flags.lower():
            return True
    if head.startswith("mkfs"):
        return True
    if head == "dd" and any(w.startswith("of=") for w in rest):
        return True
    if head == "chmod" and any(w in ("-R", "-r") for w in rest) and "777" in rest:
        return True
    return False


def screen_injection(command: str) -> ScreenResult:
    """Static screen for commands that already failed the whitelist.

    Substitution syntax outside single quotes is suspicious (warn, surfaced
    as a risk note on the approval card); destructive commands chained after
    any operator, and fork-bomb shapes, are blocked outright.
    """
    reasons: list[str] = []
    block = False
    if _search_outside_single_quotes(command, "`"):
        reasons.append("backtick-substitution")
    if _search_outside_single_quotes(command, "$("):
        reasons.append("process-substitution")
    if ":(){" in command.replace(" ", ""):
        reasons.append("forkbomb")
        block = True
    try:
        segments = split_pipeline(command)
    except PipelineParseError:
        reasons.append("unparseable")
        segments = []
    for seg in segments[1:]:
        if _destructive_segment(seg):
            reasons.append("chained-destructive")
            block = True
            break
    if block:
        return ScreenResult(verdict="block", reasons=tuple(reasons))
    if reasons:
        return ScreenResult(verdict="warn", reasons=tuple(reasons))
    return ScreenResult(verdict="clean")


class RuleBasedClassifier:
    """Default deterministic screen; richer classifiers can replace it."""

    def classify(self, command: str) -> ScreenResult:
        return screen_injection(command)


# -------------------------------------------------------------- decisions

@dataclass(frozen=True)
class OperationRequest:
    """What a tool call wants to do, reduced to its permission-relevant core."""

    layer: str | None
    tool_name: str
    summary: str
    command: str = ""    # L2
    skill: str = ""      # L3
    external: str = ""   # L4


@dataclass(frozen=True)
class Decision:
    kind: str                       # allow | deny | request
    risk_note: str = ""
    reasons: tuple[str, ...] = ()


@dataclass(frozen=True)
class PolicyContext:
    edit_allowed: bool
    project: "ProjectPolicy"


def decide(
    op: OperationRequest,
    ctx: PolicyContext,
    classifier: InjectionClassifier | None = None,
) -> Decision:
    """Pure decision function; identical inputs give identical outputs."""
    if op.layer is None:
        return Decision(ALLOW)
    if op.layer == L1_FILE_EDIT:
        return Decision(ALLOW) if ctx.edit_allowed else Decision(REQUEST)
    if op.layer == L2_BASH:
        verdict, risk = evaluate_bash(op.command, ctx.project.bash_whitelist)
        if verdict == ALLOW:
            return Decision(ALLOW)
        screen = (classifier or _RULES).classify(op.command)
        if screen.verdict == "block":
            return Decision(DENY, reasons=screen.reasons)
        notes = [risk] if risk else []
        notes.extend(screen.reasons)
        return Decision(REQUEST, risk_note="; ".join(notes))
    if op.layer == L3_SKILL:
        if op.skill in ctx.project.authorized_skills:
            return Decision(ALLOW)
        return Decision(REQUEST)
    if op.layer == L4_EXTERNAL:
        if op.external in ctx.project.authorized_externals:
            return Decision(ALLOW)
        return Decision(REQUEST)
    raise UnknownLayerError(op.layer)


_RULES = RuleBasedClassifier()


# ----------------------------------------------------------- persistence

POLICY_VERSION = 1


@dataclass
class ProjectPolicy:
    bash_whitelist: list[str] = field(default_factory=list)
    authorized_skills: set[str] = field(default_factory=set)
    authorized_externals: set[str] = field(default_factory=set)


class PolicyStore:
    """Project policy with JSON persistence under ``<workdir>/.sema``.

    The session tier (edit flag) is deliberately *not* here: it lives in
    GlobalState and dies with the session.
    """

    def __init__(self, path: str | Path, seed_whitelist: list[str] | None = None):
        self.path = Path(path)
        self.project = ProjectPolicy()
        if self.path.is_file():
            self._load()
        for entry in seed_whitelist or []:
            if entry not in self.project.bash_whitelist:
                self.project.bash_whitelist.append(entry)

    def _load(self) -> None:
        data = json.loads(self.path.read_text())
        self.project = ProjectPolicy(
            bash_whitelist=list(data.get("bash_whitelist", [])),
            authorized_skills=set(data.get("authorized_skills", [])),
            authorized_externals=set(data.get("authorized_externals", [])),
        )

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        data = {
            "v": POLICY_VERSION,
            "bash_whitelist": list(self.project.bash_whitelist),
            "authorized_skills": sorted(self.project.authorized_skills),
            "authorized_externals": sorted(self.project.authorized_externals),
        }
        self.path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

    def grant(self, op: OperationRequest) -> None:
        """Apply a persistent_allow for a project-tier operation and save."""
        if op.layer == L2_BASH:
            for head in self._failing_heads(op.command):
                if head not in self.project.bash_whitelist:
                    self.project.bash_whitelist.append(head)
        elif op.layer == L3_SKILL and op.skill:
            self.project.authorized_skills.add(op.skill)
        elif op.layer == L4_EXTERNAL and op.external:
            self.project.authorized_externals.add(op.external)
        else:
            return
        self.save()

    def _failing_heads(self, command: str) -> list[str]:
        try:
            segments = split_pipeline(command)
        except PipelineParseError:
            return []
        heads = []
        for seg in segments:
            if segment_matches(seg, self.project.bash_whitelist):
                continue
            words = head_words(seg, 1)
            if words:
                head = _basename(words[0])
                if head not in heads:
                    heads.append(head)
        return heads


# ------------------------------------------------------------- approvals

@dataclass(frozen=True)
class Resolution:
    kind: str
    feedback: str = ""


class ApprovalBroker:
    """Suspends individual tool calls until a resolution or an abort.

    Duplicate resolutions are ignored; resolving an unknown request id
    returns False so the service layer can answer with an error frame.
    """

    def __init__(self) -> None:
        self._pending: dict[str, asyncio.Future] = {}

    def open(self, request_id: str) -> asyncio.Future:
        fut: asyncio.Future = asyncio.get_running_loop().create_future()
        self._pending[request_id] = fut
        return fut

    def resolve(self, request_id: str, resolution: Resolution) -> bool:
        if resolution.kind not in RESOLUTION_KINDS:
            return False
        fut = self._pending.get(request_id)
        if fut is None:
            return False
        if not fut.done():
            fut.set_result(resolution)
        return True

    @property
    def pending_ids(self) -> list[str]:
        return [rid for rid, fut in self._pending.items() if not fut.done()]

    async def wait(self, request_id: str, abort: AbortSignal) -> Resolution | None:
        """Resolution if one arrives, None if the session aborts first."""
        fut = self._pending[request_id]
        abort_task = asyncio.ensure_future(abort.wait())
        try:
            await asyncio.wait({fut, abort_task}, return_when=asyncio.FIRST_COMPLETED)
        finally:
            abort_task.cancel()
            self._pending.pop(request_id, None)
        if fut.done():
            return fut.result()
        fut.cancel()
        return None
