"""Shared domain types: collision classes, video records, predictions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any


class CrashGroundError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CrashGroundError, ValueError):
    pass


class ConfigError(CrashGroundError):
    pass


class ParseError(CrashGroundError, ValueError):
    pass


class ExtractionError(CrashGroundError):
    def __init__(self, video_id: str, message: str):
        super().__init__(f"{video_id}: {message}")
        self.video_id = video_id


class JoinError(CrashGroundError, KeyError):
    def __str__(self) -> str:  # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class TraceError(CrashGroundError):
    def __init__(self, video_id: str, message: str):
        super().__init__(f"{video_id}: {message}")
        self.video_id = video_id


class CollisionType(str, Enum):
    """The five collision classes, in the fixed confusion-matrix order."""

    HEAD_ON = "head-on"
    REAR_END = "rear-end"
    T_BONE = "t-bone"
    SIDESWIPE = "sideswipe"
    SINGLE = "single"

    @classmethod
    def ordered(cls) -> list["CollisionType"]:
        return list(cls)

    @property
    def index(self) -> int:
        return list(CollisionType).index(self)


class PassKind(str, Enum):
    COARSE = "coarse"
    FINE = "fine"
    TYPE = "type"


class Source(str, Enum):
    PASS1 = "pass1"
    PASS2 = "pass2"


class TypeSource(str, Enum):
    SPECIALIST = "specialist"
    PASS1_BACKUP = "pass1_backup"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    path: str
    duration: float
    width: int = 1280
    height: int = 720

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise InvalidInputError(f"{self.video_id}: duration must be > 0, got {self.duration}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError(f"{self.video_id}: frame dimensions must be positive")


@dataclass(frozen=True)
class Provenance:
    pass1_ok: bool
    pass2_ok: bool
    typing_ok: bool
    time_source: Source | None
    space_source: Source | None
    type_source: TypeSource

    @property
    def is_fallback(self) -> bool:
        return self.type_source is TypeSource.FALLBACK

    def to_dict(self) -> dict[str, Any]:
        return {
            "pass1_ok": self.pass1_ok,
            "pass2_ok": self.pass2_ok,
            "typing_ok": self.typing_ok,
            "time_source": self.time_source.value if self.time_source else None,
            "space_source": self.space_source.value if self.space_source else None,
            "type_source": self.type_source.value,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Provenance":
        return cls(
            pass1_ok=bool(d["pass1_ok"]),
            pass2_ok=bool(d["pass2_ok"]),
            typing_ok=bool(d["typing_ok"]),
            time_source=Source(d["time_source"]) if d.get("time_source") else None,
            space_source=Source(d["space_source"]) if d.get("space_source") else None,
            type_source=TypeSource(d["type_source"]),
        )


FALLBACK_PROVENANCE = Provenance(
    pass1_ok=False,
    pass2_ok=False,
    typing_ok=False,
    time_source=None,
    space_source=None,
    type_source=TypeSource.FALLBACK,
)


@dataclass(frozen=True)
class Prediction:
    video_id: str
    t_star: float
    x_star: float
    y_star: float
    c_star: CollisionType
    provenance: Provenance = field(default=FALLBACK_PROVENANCE)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["c_star"] = self.c_star.value
        d["provenance"] = self.provenance.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Prediction":
        return cls(
            video_id=d["video_id"],
            t_star=float(d["t_star"]),
            x_star=float(d["x_star"]),
            y_star=float(d["y_star"]),
            c_star=CollisionType(d["c_star"]),
            provenance=Provenance.from_dict(d["provenance"]),
        )


@dataclass(frozen=True)
class GroundTruth:
    video_id: str
    t_gt: float
    x_gt: float
    y_gt: float
    c_gt: CollisionType
