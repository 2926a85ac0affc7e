"""Markdown skill loading with project > user > builtin priority."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

BUILTIN_SKILLS_DIR = Path(__file__).parent / "assets" / "skills"


class SkillParseError(ValueError):
    pass


@dataclass(frozen=True)
class Skill:
    name: str
    body: str
    origin: str                       # builtin | user | project
    scenarios: tuple[str, ...] = ()
    constraints: tuple[str, ...] = ()
    model_preference: str = ""


@dataclass
class SkillLoadReport:
    registry: dict[str, Skill] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def parse_skill(path: Path, origin: str) -> Skill:
    text = path.read_text()
    if not text.startswith("---\n"):
        raise SkillParseError(f"{path.name}: missing frontmatter")
    end = text.find("\n---", 4)
    if end < 0:
        raise SkillParseError(f"{path.name}: unterminated frontmatter")
    try:
        meta = yaml.safe_load(text[4:end])
    except yaml.YAMLError as exc:
        raise SkillParseError(f"{path.name}: bad frontmatter: {exc}") from None
    if not isinstance(meta, dict):
        raise SkillParseError(f"{path.name}: frontmatter is not a mapping")
    body = text[end + 4 :].lstrip("-").lstrip("\n")
    if not body.strip():
        raise SkillParseError(f"{path.name}: empty body")

    def _tuple(key: str) -> tuple[str, ...]:
        value = meta.get(key) or []
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, list):
            raise SkillParseError(f"{path.name}: {key} must be a list")
        return tuple(str(v) for v in value)

    return Skill(
        name=str(meta.get("name") or path.stem),
        body=body,
        origin=origin,
        scenarios=_tuple("scenarios"),
        constraints=_tuple("constraints"),
        model_preference=str(meta.get("model_preference") or ""),
    )


def load_skills(
    project_dir: str | Path | None = None,
    user_dir: str | Path | None = None,
    builtin_dir: str | Path | None = BUILTIN_SKILLS_DIR,
) -> SkillLoadReport:
    """Scan the three tiers; on a name collision the higher tier wins
    (later iteration order: builtin, then user, then project). Files that
    fail to parse are skipped and reported as warnings; one bad file never
    blocks the rest."""
    report = SkillLoadReport()
    for origin, directory in (("builtin", builtin_dir), ("user", user_dir), ("project", project_dir)):
        if not directory:
            continue
        d = Path(directory)
        if not d.is_dir():
            continue
        for path in sorted(d.glob("*.md")):
            try:
                skill = parse_skill(path, origin)
            except (SkillParseError, OSError) as exc:
                report.warnings.append(str(exc))
                continue
            report.registry[skill.name] = skill
    return report
