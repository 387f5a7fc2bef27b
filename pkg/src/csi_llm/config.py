"""Experiment configuration: defaults, key-value files, overrides, echo.

Config files are plain text, one `section.key = value` per line (top-level
keys `run_id` and `n_samples` have no section). Precedence is built-in
defaults < file < command-line overrides. The fully resolved configuration
renders back to the same format and re-parses to an equal config, so the
`config.resolved` echo in a run directory reproduces the run.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields

from .backbone import BackboneConfig
from .channel_data import ScenarioConfig
from .errors import ConfigError
from .training import HParams


@dataclass
class EvalConfig:
    lengths: list[int] = field(default_factory=lambda: [2, 4, 8, 16])
    horizon: int = 16
    anchor: int | None = None  # None -> hparams.l_m
    rollout_context: int = 4

    def __post_init__(self) -> None:
        if not self.lengths or min(self.lengths) < 1:
            raise ConfigError(f"eval.lengths must be positive integers, got {self.lengths}")
        if self.horizon < 1:
            raise ConfigError(f"eval.horizon must be >= 1, got {self.horizon}")
        if self.rollout_context < 1:
            raise ConfigError(f"eval.rollout_context must be >= 1, got {self.rollout_context}")


@dataclass
class PathsConfig:
    data: str | None = None
    checkpoint: str | None = None
    report: str | None = None


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    hparams: HParams = field(default_factory=HParams)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    run_id: str = "run"
    n_samples: int = 21000

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.hparams.l_m + 1 > self.scenario.n_steps:
            raise ConfigError(
                f"hparams.l_m={self.hparams.l_m} needs scenario.n_steps >= l_m+1, "
                f"got {self.scenario.n_steps}"
            )
        if self.backbone.max_positions < self.hparams.l_m:
            raise ConfigError(
                f"backbone.max_positions={self.backbone.max_positions} must be >= "
                f"hparams.l_m={self.hparams.l_m}"
            )
        anchor = self.eval.anchor
        if anchor is not None and not (1 <= anchor <= self.scenario.n_steps - 1):
            raise ConfigError(
                f"eval.anchor={anchor} outside [1, {self.scenario.n_steps - 1}]"
            )


_SECTIONS = {
    "scenario": ScenarioConfig,
    "backbone": BackboneConfig,
    "hparams": HParams,
    "eval": EvalConfig,
    "paths": PathsConfig,
}
_TOP_LEVEL = {"run_id": str, "n_samples": int}


def _coerce(key: str, raw: str, tp) -> object:
    raw = raw.strip()
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        members = [m for m in typing.get_args(tp) if m is not type(None)]
        if raw.lower() in ("none", "null") and type(None) in typing.get_args(tp):
            return None
        last_err = None
        for member in members:
            try:
                return _coerce(key, raw, member)
            except (ValueError, ConfigError) as e:
                last_err = e
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} ({last_err})")
    if origin is list:
        elem = typing.get_args(tp)[0]
        return [_coerce(key, part, elem) for part in raw.split(",") if part.strip()]
    try:
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if tp is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
    except ValueError as e:
        raise ConfigError(f"key {key!r}: expected {getattr(tp, '__name__', tp)}, got {raw!r} ({e})")
    raise ConfigError(f"key {key!r}: unsupported value type {tp}")


def _field_types(cls) -> dict[str, object]:
    return typing.get_type_hints(cls)


def _apply_entry(raw_values: dict[str, dict[str, object]], key: str, value: str) -> None:
    if key in _TOP_LEVEL:
        raw_values["_top"][key] = _coerce(key, value, _TOP_LEVEL[key])
        return
    if "." not in key:
        raise ConfigError(f"unknown config key {key!r}")
    section, _, name = key.partition(".")
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r} in key {key!r}")
    hints = _field_types(_SECTIONS[section])
    if name not in {f.name for f in fields(_SECTIONS[section])}:
        raise ConfigError(f"unknown config key {key!r}")
    raw_values[section][name] = _coerce(key, value, hints[name])


def _default_field_values(cls) -> dict[str, object]:
    out = {}
    for f in fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            out[f.name] = f.default_factory()  # type: ignore[misc]
    return out


def _parse_lines(lines, raw_values, origin: str) -> None:
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, _, value = stripped.partition("=")
        _apply_entry(raw_values, key.strip(), value.strip())


def parse_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Resolve defaults < file < overrides into a validated ExperimentConfig."""
    lines = None
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                lines = f.readlines()
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
    return _resolve(lines, str(path), overrides)


def parse_config_text(text: str, overrides: list[str] | None = None) -> ExperimentConfig:
    """parse_config for in-memory config text (e.g. a rendered echo)."""
    return _resolve(text.splitlines(), "<text>", overrides)


def _resolve(lines, origin: str, overrides: list[str] | None) -> ExperimentConfig:
    raw_values: dict[str, dict[str, object]] = {
        name: _default_field_values(cls) for name, cls in _SECTIONS.items()
    }
    raw_values["_top"] = {"run_id": "run", "n_samples": 21000}
    if lines is not None:
        _parse_lines(lines, raw_values, origin)
    for entry in overrides or []:
        if "=" not in entry:
            raise ConfigError(f"override {entry!r} must be key=value")
        key, _, value = entry.partition("=")
        _apply_entry(raw_values, key.strip(), value.strip())
    sections = {name: cls(**raw_values[name]) for name, cls in _SECTIONS.items()}
    return ExperimentConfig(**sections, **raw_values["_top"])


def _render_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_render_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: ExperimentConfig) -> str:
    """Echo a resolved config; parse_config_text(render_config(cfg)) == cfg."""
    lines = [f"run_id = {cfg.run_id}", f"n_samples = {cfg.n_samples}"]
    for section, cls in _SECTIONS.items():
        obj = getattr(cfg, section)
        for f in fields(cls):
            lines.append(f"{section}.{f.name} = {_render_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def default_config() -> ExperimentConfig:
    """Full-scale defaults: 32x4 antennas, 8 PRBs, 12x768 backbone."""
    return ExperimentConfig()


def ci_config() -> ExperimentConfig:
    """Desk-scale profile used by the test suite.

    Reduced antennas/PRBs and a 2-layer backbone; tti_s=2.5 ms keeps all three
    speeds' lag-1 Doppler arguments inside the Bessel function's monotone
    range so the speed-ordering property is well-posed.
    """
    return parse_config(None, [
        "run_id=ci",
        "n_samples=200",
        "scenario.speed_kmh=30",
        "scenario.tti_s=0.0025",
        "scenario.n_tx=8",
        "scenario.n_rx=2",
        "scenario.n_prb=4",
        "scenario.seed=7",
        "backbone.n_layers=2",
        "backbone.model_dim=64",
        "backbone.n_heads=4",
        "backbone.max_positions=64",
        "backbone.proj_hidden=128",
        "hparams.batch_size=64",
        "hparams.max_epochs=30",
        "hparams.seed=7",
    ])
