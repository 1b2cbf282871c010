"""Run configuration from one TOML file, with environment and flag overrides.

Every setting has a dotted name such as ``expansion.relation_width``. Its
value comes from the first source that sets it, in this order: command-line
flag, environment variable, config file, built-in default. The environment
variable for ``section.key`` is ``KGREASON_SECTION_KEY`` (a few settings keep
shorter historical names, listed in :data:`ENV_ALIASES`).

Credentials never come from the file: API keys and bearer tokens are read
from environment variables named by ``llm.api_key_env`` and
``backend.sparql.token_env``.
"""

from __future__ import annotations

import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .retrieval import ExpansionConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_str(v: Any) -> str | None:
    if v is None:
        return None
    s = str(v)
    return s or None


def _opt_int(v: Any) -> int | None:
    if v is None or v == "":
        return None
    return int(v)


@dataclass(frozen=True)
class Setting:
    default: Any
    parse: Callable[[Any], Any]
    path: bool = False
    choices: tuple[str, ...] = ()


SETTINGS: dict[str, Setting] = {
    "backend.kind": Setting("memory", str, choices=("memory", "sparql")),
    "backend.graph": Setting(None, _opt_str, path=True),
    "backend.labels": Setting(None, _opt_str, path=True),
    "backend.sparql.url": Setting(None, _opt_str),
    "backend.sparql.preset": Setting("generic", str, choices=("generic", "wikidata")),
    "backend.sparql.templates": Setting(None, _opt_str, path=True),
    "backend.sparql.entity_namespace": Setting("", str),
    "backend.sparql.relation_namespace": Setting("", str),
    "backend.sparql.relation_label_namespace": Setting(None, _opt_str),
    "backend.sparql.timeout": Setting(30.0, float),
    "backend.sparql.max_retries": Setting(3, int),
    "backend.sparql.max_candidates": Setting(200, int),
    "backend.sparql.max_in_flight": Setting(4, int),
    "backend.sparql.method": Setting("GET", lambda v: str(v).upper(), choices=("GET", "POST")),
    "backend.sparql.label_dump": Setting(None, _opt_str, path=True),
    "backend.sparql.token_env": Setting("KGREASON_SPARQL_TOKEN", str),
    "selector.kind": Setting("lexical", str, choices=("lexical", "oracle", "llm")),
    "selector.plans": Setting(None, _opt_str, path=True),
    "selector.prompt_budget": Setting(60, int),
    "llm.base_url": Setting(None, _opt_str),
    "llm.model": Setting("gpt-3.5-turbo", str),
    "llm.timeout": Setting(120.0, float),
    "llm.max_retries": Setting(3, int),
    "llm.max_in_flight": Setting(4, int),
    "llm.api_key_env": Setting("KGREASON_LLM_API_KEY", str),
    "llm.fixture": Setting(None, _opt_str, path=True),
    "llm.reasoning_temperature": Setting(0.0, float),
    "expansion.relation_width": Setting(3, int),
    "expansion.entity_width": Setting(10, int),
    "expansion.iterations": Setting(2, int),
    "expansion.temperature": Setting(0.4, float),
    "expansion.max_frontier": Setting(64, int),
    "expansion.mass": Setting("sum", str, choices=("sum", "max")),
    "linking.method": Setting("exact", str, choices=("exact", "embedding")),
    "linking.threshold": Setting(0.6, float),
    "linking.top_m": Setting(1, int),
    "linking.embed_url": Setting(None, _opt_str),
    "linking.embed_model": Setting("text-embedding-3-small", str),
    "run.templates": Setting(None, _opt_str, path=True),
    "run.output_dir": Setting("runs/latest", str),
    "run.cache_dir": Setting(".kgreason-cache", str),
    "run.parallelism": Setting(1, int),
    "run.seed": Setting(None, _opt_int),
    "run.verbose": Setting(False, _bool),
}

ENV_ALIASES = {
    "backend.sparql.url": "KGREASON_SPARQL_URL",
    "llm.base_url": "KGREASON_LLM_URL",
}

# paths that must exist when set; output and cache directories are created on demand
_MUST_EXIST = {k for k, s in SETTINGS.items() if s.path}


def env_name(key: str) -> str:
    return ENV_ALIASES.get(key) or "KGREASON_" + key.replace(".", "_").upper()


def _flatten(doc: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in doc.items():
        name = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, name + "."))
        else:
            out[name] = v
    return out


@dataclass
class RunConfig:
    values: dict[str, Any]
    sources: dict[str, str] = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def path(self, key: str) -> Path | None:
        v = self.values[key]
        return None if v is None else Path(v)

    @property
    def expansion(self) -> ExpansionConfig:
        return ExpansionConfig(
            relation_width=self["expansion.relation_width"],
            entity_width=self["expansion.entity_width"],
            iterations=self["expansion.iterations"],
            temperature=self["expansion.temperature"],
            max_frontier=self["expansion.max_frontier"],
            parallelism=self["run.parallelism"],
        )

    @property
    def output_dir(self) -> Path:
        return Path(self["run.output_dir"])

    @property
    def cache_dir(self) -> Path:
        return Path(self["run.cache_dir"])

    def validate(self) -> "RunConfig":
        for key, setting in SETTINGS.items():
            v = self.values[key]
            if setting.choices and v not in setting.choices:
                raise ConfigError(f"{key}: {v!r} is not one of {', '.join(setting.choices)}")
        for key in _MUST_EXIST:
            p = self.path(key)
            if p is not None and not p.exists():
                raise ConfigError(f"{key}: file not found: {p}")
        try:
            self.expansion
        except ValueError as exc:
            raise ConfigError(f"expansion: {exc}") from exc
        if self["run.parallelism"] < 1:
            raise ConfigError("run.parallelism must be >= 1")
        if self["backend.kind"] == "memory" and self["backend.graph"] is None:
            raise ConfigError("backend.graph is required for the memory backend")
        if self["backend.kind"] == "sparql" and not self["backend.sparql.url"]:
            raise ConfigError(f"backend.sparql.url is required for the sparql backend (or set {env_name('backend.sparql.url')})")
        if self["selector.kind"] == "oracle" and self["selector.plans"] is None:
            raise ConfigError("selector.plans is required for the oracle selector")
        if self["linking.method"] == "embedding" and not self["linking.embed_url"]:
            raise ConfigError("linking.embed_url is required for embedding linking")
        if not 0.0 <= self["linking.threshold"] <= 1.0 and self["linking.method"] == "embedding":
            raise ConfigError("linking.threshold must lie in [0, 1]")
        return self

    def needs_llm(self, for_reasoning: bool) -> bool:
        return for_reasoning or self["selector.kind"] == "llm"

    def snapshot(self) -> dict[str, Any]:
        return dict(sorted(self.values.items()))


def _coerce(key: str, raw: Any, origin: str) -> Any:
    try:
        return SETTINGS[key].parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} from {origin}: {exc}") from exc


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
    validate: bool = True,
) -> RunConfig:
    """Merge every configuration source by precedence.

    Relative paths in the file resolve against the file's directory;
    relative paths from flags and the environment resolve against the
    working directory.
    """
    environ = os.environ if environ is None else environ
    values = {k: s.default for k, s in SETTINGS.items()}
    sources = {k: "default" for k in SETTINGS}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base = path.resolve().parent
        for key, raw in _flatten(doc).items():
            if key not in SETTINGS:
                raise ConfigError(f"{path}: unknown setting {key!r}")
            v = _coerce(key, raw, str(path))
            if SETTINGS[key].path and v is not None:
                v = str(base / v)
            if key in ("run.output_dir", "run.cache_dir"):
                v = str(base / v)
            values[key], sources[key] = v, "file"
    for key in SETTINGS:
        name = env_name(key)
        if name in environ and environ[name] != "":
            values[key], sources[key] = _coerce(key, environ[name], name), "env"
    for key, raw in (overrides or {}).items():
        if key not in SETTINGS:
            raise ConfigError(f"unknown setting {key!r}")
        if raw is None:
            continue
        values[key], sources[key] = _coerce(key, raw, "command line"), "flag"
    cfg = RunConfig(values, sources, base)
    return cfg.validate() if validate else cfg


def parse_assignment(text: str) -> tuple[str, str]:
    """``key=value`` from a ``--set`` flag."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()
