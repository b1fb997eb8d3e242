"""Run configuration: training knobs plus paths, read from a flat ``key = value`` file.

Blank lines and ``#`` comments are ignored. Keys are the field names of
:class:`RunConfig` (dashes are accepted in place of underscores). Unknown keys
are an error. Values given on the command line win over the file.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import ConfigError
from .optim import TrainConfig


@dataclass
class RunConfig(TrainConfig):
    data: str = ""  # prepared dataset directory
    out: str = ""  # output directory
    split: str = "test"
    exclude_train: bool = True  # drop training items from retrieval candidates

    def train_config(self) -> TrainConfig:
        names = TrainConfig.field_names()
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names}).validate()

    def validate(self) -> "RunConfig":
        super().validate()
        if self.split not in ("validation", "test"):
            raise ConfigError(f"split must be 'validation' or 'test', got {self.split!r}")
        return self


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def field_types() -> dict[str, type]:
    # dataclass annotations are strings under postponed evaluation
    kinds = {"int": int, "float": float, "bool": bool, "str": str}
    return {f.name: kinds[f.type if isinstance(f.type, str) else f.type.__name__]
            for f in fields(RunConfig)}


def coerce(key: str, raw: str, kind: type):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    types = field_types()
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        values[key] = coerce(key, raw, types[key])
    return values


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def build_config(file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then flags (``None`` flags are unset)."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (flag_values or {}).items() if v is not None})
    unknown = set(merged) - set(field_types())
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return RunConfig(**merged).validate()


def dump_config(config: RunConfig) -> str:
    lines = []
    for key, value in asdict(config).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
