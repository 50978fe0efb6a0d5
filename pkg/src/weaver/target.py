"""Per-language target configuration.

Everything language-flavoured lives in data files: prompt templates, how
constraints become assertions, which executor runs candidates, and whether
constraints are implicit in the definitions (proof-style targets). Code in
the rest of the package only reads these fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


@dataclass(frozen=True)
class RoleParams:
    """Decoding parameters for one kind of request."""

    temperature: float = 0.6
    max_tokens: int = 500
    presence_penalty: float = 0.0
    logit_bias_tags: tuple[str, ...] = ()


@dataclass
class TargetConfig:
    name: str
    assert_mode: str = "direct"  # "direct" or "normalized"
    implicit_constraints: bool = False
    executor: str | list[str] | None = "local"
    admission: str = "ast"  # "ast" checks candidates parse as Python; "none" skips
    stop: tuple[str, ...] = ()
    templates: dict[str, str] = field(default_factory=dict)
    roles: dict[str, RoleParams] = field(default_factory=dict)

    def role(self, name: str) -> RoleParams:
        return self.roles.get(name, RoleParams())

    def template(self, name: str) -> str:
        return self.templates[name]


def _from_dict(data: dict) -> TargetConfig:
    roles = {
        key: RoleParams(
            temperature=val.get("temperature", 0.6),
            max_tokens=val.get("max_tokens", 500),
            presence_penalty=val.get("presence_penalty", 0.0),
            logit_bias_tags=tuple(val.get("logit_bias_tags", ())),
        )
        for key, val in data.get("roles", {}).items()
    }
    return TargetConfig(
        name=data["name"],
        assert_mode=data.get("assert_mode", "direct"),
        implicit_constraints=data.get("implicit_constraints", False),
        executor=data.get("executor", "local"),
        admission=data.get("admission", "ast"),
        stop=tuple(data.get("stop", ())),
        templates=dict(data.get("templates", {})),
        roles=roles,
    )


def load_target(name_or_path: str) -> TargetConfig:
    """Load a target config by shipped name (``python``) or by file path."""

    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return _from_dict(json.loads(path.read_text()))
    ref = resources.files("weaver") / "targets" / f"{name_or_path}.json"
    try:
        text = ref.read_text()
    except FileNotFoundError:
        raise ValueError(f"unknown target {name_or_path!r}") from None
    return _from_dict(json.loads(text))
