"""Skill file parsing and three-tier loading."""

from __future__ import annotations

import pytest

from semacore.skills import (
    BUILTIN_SKILLS_DIR,
    SkillParseError,
    load_skills,
    parse_skill,
)

GOOD = """---
name: review
scenarios:
  - after large diffs
constraints:
  - never auto-fix
model_preference: large
---

Review the change in three passes.
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestParse:
    def test_full_frontmatter(self, tmp_path):
        skill = parse_skill(write(tmp_path, "review.md", GOOD), "project")
        assert skill.name == "review"
        assert skill.origin == "project"
        assert skill.scenarios == ("after large diffs",)
        assert skill.constraints == ("never auto-fix",)
        assert skill.model_preference == "large"
        assert skill.body.startswith("Review the change")

    def test_name_defaults_to_stem(self, tmp_path):
        text = "---\nscenarios: []\n---\nbody here\n"
        skill = parse_skill(write(tmp_path, "fallback.md", text), "user")
        assert skill.name == "fallback"

    def test_scalar_scenario_coerced(self, tmp_path):
        text = "---\nname: x\nscenarios: single case\n---\nbody\n"
        skill = parse_skill(write(tmp_path, "x.md", text), "user")
        assert skill.scenarios == ("single case",)

    def test_missing_frontmatter_rejected(self, tmp_path):
        with pytest.raises(SkillParseError):
            parse_skill(write(tmp_path, "x.md", "no frontmatter\n"), "user")

    def test_unterminated_frontmatter_rejected(self, tmp_path):
        with pytest.raises(SkillParseError):
            parse_skill(write(tmp_path, "x.md", "---\nname: x\n"), "user")

    def test_empty_body_rejected(self, tmp_path):
        with pytest.raises(SkillParseError):
            parse_skill(write(tmp_path, "x.md", "---\nname: x\n---\n\n"), "user")

    def test_bad_yaml_rejected(self, tmp_path):
        with pytest.raises(SkillParseError):
            parse_skill(write(tmp_path, "x.md", "---\n{unclosed\n---\nbody\n"), "user")

    def test_non_mapping_frontmatter_rejected(self, tmp_path):
        with pytest.raises(SkillParseError):
            parse_skill(write(tmp_path, "x.md", "---\n- a list\n---\nbody\n"), "user")


class TestLoad:
    def test_builtin_skills_present(self):
        report = load_skills()
        assert "code-review" in report.registry
        assert report.registry["code-review"].origin == "builtin"
        assert report.warnings == []

    def test_project_overrides_user_overrides_builtin(self, tmp_path):
        user = tmp_path / "user"
        project = tmp_path / "project"
        user.mkdir()
        project.mkdir()
        write(user, "code-review.md", "---\nname: code-review\n---\nuser version\n")
        write(project, "code-review.md",
              "---\nname: code-review\n---\nproject version\n")

        report = load_skills(project_dir=project, user_dir=user)
        skill = report.registry["code-review"]
        assert skill.origin == "project"
        assert "project version" in skill.body

    def test_user_beats_builtin(self, tmp_path):
        user = tmp_path / "user"
        user.mkdir()
        write(user, "code-review.md", "---\nname: code-review\n---\nmine\n")
        report = load_skills(user_dir=user)
        assert report.registry["code-review"].origin == "user"

    def test_bad_file_warns_but_never_blocks(self, tmp_path):
        project = tmp_path / "p"
        project.mkdir()
        write(project, "broken.md", "not a skill")
        write(project, "good.md", "---\nname: good\n---\nworks\n")
        report = load_skills(project_dir=project, builtin_dir=None)
        assert "good" in report.registry
        assert len(report.warnings) == 1
        assert "broken.md" in report.warnings[0]

    def test_missing_dirs_are_fine(self, tmp_path):
        report = load_skills(project_dir=tmp_path / "absent",
                             user_dir=None, builtin_dir=None)
        assert report.registry == {}
        assert report.warnings == []

    def test_builtin_dir_contains_only_valid_skills(self):
        names = sorted(p.name for p in BUILTIN_SKILLS_DIR.glob("*.md"))
        assert names  # the package ships at least one
        report = load_skills()
        assert report.warnings == []
