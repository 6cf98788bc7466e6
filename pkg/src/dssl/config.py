"""Sectioned INI run configuration with command-line overrides.

Every section maps onto a frozen dataclass; unknown sections or keys are
rejected. ``--override section.key=value`` beats the file and ``--seed``
beats both, for every section carrying a seed.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError, MissingInputError
from .training import JointOptConfig, Step1Config, Step2Config


@dataclass(frozen=True)
class DataConfig:
    n: int = 20000
    seed: int = 0
    variant: str = "plain"


@dataclass(frozen=True)
class EvalConfig:
    probe_reg: float = 1e-4
    probe_steps: int = 2000
    probe_lr: float = 0.5
    decoder_hidden: int = 256
    decoder_epochs: int = 40
    seed: int = 0


@dataclass(frozen=True)
class OracleConfig:
    betas: str = "0.01,0.1,1,10"
    beta: float = 1.0
    z_size: int = 0
    restarts: int = 20
    iters: int = 20000
    n_encoders: int = 100
    seed: int = 0


SECTIONS = {
    "data": DataConfig,
    "step1": Step1Config,
    "step2": Step2Config,
    "jointopt": JointOptConfig,
    "eval": EvalConfig,
    "oracle": OracleConfig,
}


@dataclass(frozen=True)
class RunConfig:
    sections: dict

    def __getitem__(self, name):
        return self.sections[name]

    def to_dict(self) -> dict:
        return {name: asdict(cfg) for name, cfg in self.sections.items()}

    def to_ini(self) -> str:
        lines = []
        for name, cfg in self.sections.items():
            lines.append(f"[{name}]")
            for k, v in asdict(cfg).items():
                lines.append(f"{k} = {_format(v)}")
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ini())
        return path


def _format(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(cls, key: str, raw: str):
    default = {f.name: f.default for f in fields(cls)}[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{cls.__name__}.{key}: cannot parse {raw!r}") from None
    return raw


def _build(cls, raw: dict):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{_section_of(cls)}]: {unknown}")
    return cls(**{k: _coerce(cls, k, v) for k, v in raw.items()})


def _section_of(cls) -> str:
    return next(name for name, c in SECTIONS.items() if c is cls)


def parse_override(text: str) -> tuple[str, str, str]:
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    lhs, value = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section, key, value


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    raw: dict[str, dict] = {name: {} for name in SECTIONS}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"missing config {path}")
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(path.read_text())
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            raw[section].update(cp[section])
    for text in overrides:
        section, key, value = parse_override(text)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section in override {text!r}")
        raw[section][key] = value
    sections = {name: _build(cls, raw[name]) for name, cls in SECTIONS.items()}
    if seed is not None:
        sections = {name: replace(cfg, seed=int(seed)) for name, cfg in sections.items()}
    return RunConfig(sections)


def parse_floats(text: str) -> list[float]:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None
