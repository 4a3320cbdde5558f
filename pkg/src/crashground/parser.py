"""Pull the JSON answers out of free-form model text and validate them.

Pass-1 values are clamped so the coarse answer is always usable as an anchor.
Pass-2 values are passed through untouched: the spatial gate has to see an
out-of-range coordinate to be able to reject it.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Any

from .types import CollisionType, ParseError

GRID_MAX = 1000.0

_CANONICAL = {
    "head_on": CollisionType.HEAD_ON,
    "rear_end": CollisionType.REAR_END,
    "t_bone": CollisionType.T_BONE,
    "sideswipe": CollisionType.SIDESWIPE,
    "single": CollisionType.SINGLE,
}
_SEPARATORS = re.compile(r"[-_\s]+")


@dataclass(frozen=True)
class Pass1Result:
    t1: float
    raw_x1: float
    raw_y1: float
    c1: CollisionType


@dataclass(frozen=True)
class Pass2Result:
    t2: float
    raw_x2: float
    raw_y2: float

    @property
    def is_sentinel(self) -> bool:
        return self.t2 < 0


PASS2_SENTINEL = Pass2Result(-1.0, 0.0, 0.0)


def _balanced_objects(text: str):
    """Yield every top-level ``{...}`` span, honouring JSON string escapes."""
    depth = 0
    start = -1
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"' and depth > 0:
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                yield text[start : i + 1]


def extract_json_block(text: str) -> str:
    """Return the first balanced JSON object embedded in ``text``.

    Prose, markdown fences and trailing chatter are ignored. Brace spans that
    are balanced but are not valid JSON (e.g. a template echo such as
    ``{"time": <seconds>}``) are skipped.
    """
    if not isinstance(text, str):
        raise ParseError(f"expected text, got {type(text).__name__}")
    for candidate in _balanced_objects(text):
        try:
            value = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict):
            return candidate
    raise ParseError("no JSON object found in model output")


def _load(text: str) -> dict[str, Any]:
    return json.loads(extract_json_block(text))


def _number(obj: dict[str, Any], key: str) -> float:
    if key not in obj:
        raise ParseError(f"missing key {key!r}")
    value = obj[key]
    if isinstance(value, bool):
        raise ParseError(f"{key!r} is boolean, expected a number")
    if isinstance(value, (int, float)):
        number = float(value)
    elif isinstance(value, str):
        try:
            number = float(value.strip().rstrip("s"))
        except ValueError:
            raise ParseError(f"{key!r} is not numeric: {value!r}") from None
    else:
        raise ParseError(f"{key!r} has unsupported type {type(value).__name__}")
    if not math.isfinite(number):
        raise ParseError(f"{key!r} is not finite")
    return number


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def normalize_type(text: str) -> CollisionType:
    """Map ``"T-Bone"``, ``"rear end"``, ``"HEAD_ON"``... onto a class."""
    if not isinstance(text, str):
        raise ParseError(f"collision type must be text, got {type(text).__name__}")
    key = _SEPARATORS.sub("_", text.strip().lower()).strip("_")
    try:
        return _CANONICAL[key]
    except KeyError:
        raise ParseError(f"unknown collision type {text!r}") from None


def parse_pass1(text: str, duration: float) -> Pass1Result:
    obj = _load(text)
    t = _number(obj, "time")
    x = _number(obj, "x")
    y = _number(obj, "y")
    if "type" not in obj:
        raise ParseError("missing key 'type'")
    c = normalize_type(obj["type"])
    return Pass1Result(
        t1=_clamp(t, 0.0, float(duration)),
        raw_x1=_clamp(x, 0.0, GRID_MAX),
        raw_y1=_clamp(y, 0.0, GRID_MAX),
        c1=c,
    )


def parse_pass2(text: str) -> Pass2Result:
    obj = _load(text)
    return Pass2Result(t2=_number(obj, "time"), raw_x2=_number(obj, "x"), raw_y2=_number(obj, "y"))


_TYPE_MENTION = re.compile(r"\b(head[-_ ]?on|rear[-_ ]?end|t[-_ ]?bone|sideswipe|single)\b", re.I)


def parse_type(text: str) -> CollisionType:
    """Read the typing model's answer.

    The typing prompt does not ask for JSON, so in order: a JSON ``type``
    field, the whole reply as a bare class name, then a reply that mentions
    exactly one distinct class. Anything ambiguous is a parse failure.
    """
    try:
        obj = _load(text)
    except ParseError:
        obj = None
    if obj is not None and "type" in obj:
        return normalize_type(obj["type"])

    bare = text.strip().strip("`*\"'.:!").strip()
    try:
        return normalize_type(bare)
    except ParseError:
        pass

    found = {normalize_type(m.group(1)) for m in _TYPE_MENTION.finditer(text)}
    if len(found) == 1:
        return found.pop()
    if not found:
        raise ParseError("no collision type in typing reply")
    raise ParseError(f"ambiguous typing reply mentions {sorted(c.value for c in found)}")
