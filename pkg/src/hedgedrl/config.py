"""INI experiment configuration.

Sections map onto the dataclass configs of each module. Tuples are written
comma-separated and ``None`` as an empty value, so parse -> write -> parse is
a fixed point.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .baselines import BaselineConfig
from .errors import ConfigError, HedgeError
from .features import ObservationSpec
from .simulator import EpisodeConfig
from .trainer import TrainerConfig
from .walkforward import PlanConfig

MODEL_KINDS = ("DRL", "DRL no context", "risky", "winner", "loser", "markowitz")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"            # "synthetic" or "files"
    preset: str = "separable"
    n_days: int = 2000
    seed: int = 0
    prices: str | None = None
    context: str | None = None
    risky: str = "risky"
    strategies: tuple[str, ...] = ()
    context_columns: tuple[str, ...] = ()
    fill_limit: int = 5

    def __post_init__(self):
        if self.source not in ("synthetic", "files"):
            raise ConfigError("data.source must be 'synthetic' or 'files'")
        if self.source == "files" and not self.prices:
            raise ConfigError("data.prices is required when data.source = files")


@dataclass(frozen=True)
class NetworkSection:
    asset_filters: int = 8
    asset_kernel: int = 3
    asset_hidden: int = 32
    context_filters: int = 4
    context_kernel: int = 3
    context_hidden: int = 16
    merge_hidden: int = 32
    l2: float = 1e-8
    activation: str = "relu"

    def overrides(self) -> tuple:
        return tuple((f.name, getattr(self, f.name)) for f in fields(self))


@dataclass(frozen=True)
class RunConfig:
    models: tuple[str, ...] = ("DRL", "DRL no context", "risky", "winner", "loser", "markowitz")
    ablation: bool = False
    windows: tuple[int, ...] = (3, 5)
    workers: int = 1
    output: str = "results"

    def __post_init__(self):
        bad = [m for m in self.models if m not in MODEL_KINDS]
        if bad:
            raise ConfigError(f"unknown model(s) {bad}; choose from {list(MODEL_KINDS)}")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")


SECTIONS = {
    "data": DataConfig,
    "observation": ObservationSpec,
    "network": NetworkSection,
    "trainer": TrainerConfig,
    "episode": EpisodeConfig,
    "plan": PlanConfig,
    "baseline": BaselineConfig,
    "run": RunConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    observation: ObservationSpec = field(default_factory=ObservationSpec)
    network: NetworkSection = field(default_factory=NetworkSection)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    run: RunConfig = field(default_factory=RunConfig)


def _kind(default, annotation: str):
    if isinstance(default, bool) or annotation == "bool":
        return "bool"
    if isinstance(default, tuple) or annotation.startswith("tuple"):
        return "tuple_int" if "int" in annotation else "tuple_str"
    if isinstance(default, int) or annotation.startswith("int"):
        return "int"
    if isinstance(default, float) or annotation.startswith("float"):
        return "float"
    return "str"


def _parse_value(text: str, kind: str, optional: bool):
    text = text.strip()
    if optional and text == "":
        return None
    if kind == "bool":
        low = text.lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "tuple_int":
        return tuple(int(x) for x in text.split(",") if x.strip())
    if kind == "tuple_str":
        return tuple(x.strip() for x in text.split(",") if x.strip())
    return text


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return no
    return None


def _where(source: str, text: str, section: str, key: str | None = None) -> str:
    line = _line_of(text, section, key)
    loc = f"{source}:{line}" if line else source
    return f"{loc}: [{section}]" + (f" {key}" if key else "")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"{_where(source, text, unknown[0])}: unknown section")
    built = {}
    for name, cls in SECTIONS.items():
        base = cls()
        kwargs = {}
        names = {f.name: f for f in fields(cls)}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in names:
                    raise ConfigError(f"{_where(source, text, name, key)}: unknown key")
                f = names[key]
                annotation = str(f.type)
                try:
                    kwargs[key] = _parse_value(raw, _kind(getattr(base, key), annotation),
                                               "None" in annotation)
                except ValueError as exc:
                    raise ConfigError(f"{_where(source, text, name, key)}: {exc}") from exc
        try:
            built[name] = replace(base, **kwargs) if kwargs else base
        except (HedgeError, ValueError) as exc:
            raise ConfigError(f"{_where(source, text, name)}: {exc}") from exc
    return ExperimentConfig(**built)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in SECTIONS:
        section = getattr(cfg, name)
        parser[name] = {f.name: _format_value(getattr(section, f.name))
                        for f in dataclasses.fields(section)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def apply_overrides(cfg: ExperimentConfig, items) -> ExperimentConfig:
    """Apply ``section.key=value`` strings on top of a parsed config."""
    text = dump_config(cfg)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    for item in items:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"override {item!r}: unknown section {section!r}")
        parser[section][key] = value
    buf = io.StringIO()
    parser.write(buf)
    return parse_config(buf.getvalue(), "<overrides>")
