"""Loading and filling the editable prompt templates."""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

_NAME_RE = re.compile(r"\{([a-z_]+)\}")


class PromptError(ValueError):
    pass


def load_prompt(name: str, directory: str | Path | None = None) -> str:
    """Return the template ``name`` from ``directory``, else the bundled default."""
    if directory is not None:
        path = Path(directory) / name
        if path.exists():
            return path.read_text(encoding="utf-8")
    return resources.files("kgreason").joinpath("templates", name).read_text(encoding="utf-8")


def render_prompt(template: str, required: tuple[str, ...] = (), **values: object) -> str:
    """Replace ``{name}`` for every supplied value; literal JSON braces survive."""
    present = set(_NAME_RE.findall(template))
    missing = [n for n in required if n not in present]
    if missing:
        raise PromptError(f"template lacks placeholder(s): {', '.join(missing)}")
    unbound = [n for n in present if n not in values]
    if unbound:
        raise PromptError(f"no value for placeholder(s): {', '.join(sorted(unbound))}")
    return _NAME_RE.sub(lambda m: str(values[m.group(1)]), template)
