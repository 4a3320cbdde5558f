"""The three prompt templates, kept byte-for-byte with their published form."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .types import InvalidInputError, PassKind, VideoRecord

COARSE_TEMPLATE = """\
This is a traffic surveillance video sampled at
1 frame per second. Frame numbers correspond to
seconds in the video (frame 0 = 0s, frame 1 = 1s,
...). The video duration is {duration} seconds.

A traffic accident occurs in this video. Please
analyze carefully and answer:

1. Time: At what second does the collision or
   accident impact occur?
2. Location: Point to the exact location in the
   frame where the impact happens. Return
   coordinates as values between 0 and 1000,
   where (0,0) is top-left and (1000,1000) is
   bottom-right of the frame.
3. Type: head-on, rear-end, t-bone, sideswipe,
   or single.

Return ONLY a JSON object:
{"time": <seconds>, "x": <0-1000>,
 "y": <0-1000>, "type": "<type>"}"""

FINE_TEMPLATE = """\
These frames are extracted at 5 frames per second
from a traffic surveillance video. Each frame is
labeled with its precise timestamp. The time
window shown is from {start}s to {end}s.

A traffic accident occurs somewhere in this video.
If the collision happens within this time window,
identify:
1. Exact time: The precise moment (to 0.1 second)
   of collision or impact.
2. Exact location: The impact point, as
   coordinates between 0 and 1000.

If you cannot see a collision in these frames,
return time as -1.

Return ONLY a JSON object:
{"time": <seconds with 1 decimal or -1>,
 "x": <0-1000>, "y": <0-1000>}"""

TYPE_TEMPLATE = """\
A traffic collision HAS occurred in this
surveillance clip. You MUST classify its type.
This clip shows ~6 seconds leading up to and
including the collision moment.

Collision types - pick exactly ONE:
- head_on: Two vehicles approach from OPPOSITE
  directions, collide front-to-front.
- rear_end: Two vehicles travel SAME direction;
  trailing one hits leading one from behind.
- t_bone: One vehicle strikes the SIDE of another
  at roughly 90 degrees.
- sideswipe: Two vehicles in parallel lanes make
  lateral/glancing contact.
- single: Only ONE vehicle involved.

Watch vehicle MOTION carefully across the clip.
You MUST pick the most likely type."""

_PLACEHOLDER = re.compile(r"\{(duration|start|end)\}")


@dataclass(frozen=True)
class PromptTemplate:
    kind: PassKind
    body: str


TEMPLATES = {
    PassKind.COARSE: PromptTemplate(PassKind.COARSE, COARSE_TEMPLATE),
    PassKind.FINE: PromptTemplate(PassKind.FINE, FINE_TEMPLATE),
    PassKind.TYPE: PromptTemplate(PassKind.TYPE, TYPE_TEMPLATE),
}


def render_prompt(
    template: PromptTemplate | PassKind,
    video: VideoRecord,
    window: tuple[float, float] | None = None,
) -> str:
    """Substitute ``{duration}``, ``{start}``, ``{end}``; nothing else changes.

    ``str.format`` is not usable here because the JSON examples contain braces.
    """
    if isinstance(template, PassKind):
        template = TEMPLATES[template]
    if template.kind is PassKind.FINE and window is None:
        raise InvalidInputError("the fine prompt needs the refinement window")
    values = {"duration": f"{video.duration:.1f}"}
    if window is not None:
        values["start"] = f"{window[0]:.1f}"
        values["end"] = f"{window[1]:.1f}"
    body = _PLACEHOLDER.sub(lambda m: values[m.group(1)], template.body)
    if _PLACEHOLDER.search(body):
        raise InvalidInputError("unresolved placeholder in rendered prompt")
    return body
