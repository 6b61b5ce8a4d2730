"""Plain-text pipeline configuration: `[section]` headers and key=value
lines, '#' comments.  Flags override file values; the resolved config has a
canonical dump whose hash goes into the run manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_text(text):
    """Parse config text into {section: {key: value}} of strings."""
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if not current:
                raise ConfigError(f"line {lineno}: empty section name")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key=value before any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        sections[current][key.lower()] = value
    return sections


@dataclass
class PipelineConfig:
    """Resolved configuration: file values with flag overrides applied."""

    sections: dict = field(default_factory=dict)

    @classmethod
    def load(cls, text="", overrides=None):
        sections = parse_config_text(text) if text else {}
        for (section, key), value in (overrides or {}).items():
            if value is None:
                continue
            sections.setdefault(section, {})[key] = str(value)
        return cls(sections)

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def require(self, section, key):
        value = self.get(section, key)
        if value is None or value == "":
            raise ConfigError(f"missing required config value [{section}] {key}")
        return value

    def get_float(self, section, key, default=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}={raw!r} is not a number") from None

    def get_int(self, section, key, default=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}={raw!r} is not an integer") from None

    def get_bool(self, section, key, default=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        lowered = raw.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(f"[{section}] {key}={raw!r} is not a boolean")

    def canonical_dump(self):
        """Sorted section.key=value lines; the manifest hashes this."""
        lines = []
        for section in sorted(self.sections):
            for key in sorted(self.sections[section]):
                lines.append(f"{section}.{key}={self.sections[section][key]}")
        return "\n".join(lines) + "\n"

    def config_hash(self):
        return hashlib.sha256(self.canonical_dump().encode("utf-8")).hexdigest()
