"""Run configuration and its layered resolution (defaults < file < flags)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .types import ConfigError


class FallbackMode(str, Enum):
    NAIVE_FILL = "naive"
    PHYSICS_PLUGIN = "plugin"


@dataclass(frozen=True)
class Workers:
    pass1: int = 5
    pass2: int = 5
    typing: int = 10


@dataclass(frozen=True)
class RunConfig:
    """Every knob of the two-pass pipeline and of the metric.

    Defaults are the frozen values used for the benchmark submission.
    """

    window_delta: float = 3.0
    tau: float = 0.3
    margin: float = 10.0
    crop_factor: float = 2.5
    sigma_t: float = 1.0
    sigma_x: float = 0.127
    sigma_y: float = 0.119
    workers: Workers = Workers()
    max_retries: int = 3
    retry_base_delay: float = 1.0
    request_timeout: float = 120.0
    type_clip_fps: float = 5.0
    type_clip_long_edge: int = 720
    use_pass2_time: bool = True
    use_pass2_space: bool = True
    use_specialist_type: bool = True
    fallback_mode: FallbackMode = FallbackMode.NAIVE_FILL
    fallback_cmd: str | None = None
    extractor_cmd: str | None = None
    grounding_model: str = "qwen3-vl-plus"
    typing_model: str = "gemini-3.1-flash-lite-preview"

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        problems = []
        if not self.window_delta > 0:
            problems.append("window_delta must be > 0")
        if not self.tau > 0:
            problems.append("tau must be > 0")
        if not self.margin >= 0:
            problems.append("margin must be >= 0")
        if not self.crop_factor > 1:
            problems.append("crop_factor must be > 1")
        for name in ("sigma_t", "sigma_x", "sigma_y"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        for name in ("pass1", "pass2", "typing"):
            if getattr(self.workers, name) < 1:
                problems.append(f"workers.{name} must be >= 1")
        if self.max_retries < 0:
            problems.append("max_retries must be >= 0")
        if self.retry_base_delay < 0:
            problems.append("retry_base_delay must be >= 0")
        if not self.request_timeout > 0:
            problems.append("request_timeout must be > 0")
        if not self.type_clip_fps > 0:
            problems.append("type_clip_fps must be > 0")
        if problems:
            raise ConfigError("; ".join(problems))

    def with_overrides(self, **kw: Any) -> "RunConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["fallback_mode"] = self.fallback_mode.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        return resolve_config(d)


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def _coerce(layer: Mapping[str, Any], current: dict[str, Any]) -> None:
    for key, value in layer.items():
        if value is None and key not in ("fallback_cmd", "extractor_cmd"):
            continue
        if key == "workers":
            w = dict(current["workers"])
            if isinstance(value, Workers):
                value = asdict(value)
            if isinstance(value, (list, tuple)):
                value = dict(zip(("pass1", "pass2", "typing"), value))
            if not isinstance(value, Mapping):
                raise ConfigError(f"workers must be an object, got {value!r}")
            unknown = set(value) - {"pass1", "pass2", "typing"}
            if unknown:
                raise ConfigError(f"unknown workers keys: {sorted(unknown)}")
            w.update({k: int(v) for k, v in value.items() if v is not None})
            current["workers"] = w
        elif key.startswith("workers."):
            sub = key.split(".", 1)[1]
            if sub not in ("pass1", "pass2", "typing"):
                raise ConfigError(f"unknown config key: {key}")
            current["workers"] = {**current["workers"], sub: int(value)}
        elif key in _FIELD_NAMES:
            current[key] = value
        else:
            raise ConfigError(f"unknown config key: {key}")


def resolve_config(*layers: Mapping[str, Any] | None) -> RunConfig:
    """Merge layers left to right over the defaults; later layers win per key."""
    current = RunConfig().to_dict()
    for layer in layers:
        if layer:
            _coerce(layer, current)
    try:
        current["workers"] = Workers(**current["workers"])
        current["fallback_mode"] = FallbackMode(current["fallback_mode"])
        for name in ("window_delta", "tau", "margin", "crop_factor", "sigma_t", "sigma_x",
                     "sigma_y", "retry_base_delay", "request_timeout", "type_clip_fps"):
            current[name] = float(current[name])
        for name in ("max_retries", "type_clip_long_edge"):
            current[name] = int(current[name])
        for name in ("use_pass2_time", "use_pass2_space", "use_specialist_type"):
            if not isinstance(current[name], bool):
                raise ConfigError(f"{name} must be a boolean")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(**current)


def load_config_file(path: str | Path) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return data
