"""The two deterministic confidence gates that merge Pass 1 and Pass 2."""

from __future__ import annotations

from dataclasses import dataclass

from .parser import GRID_MAX, Pass2Result
from .types import Source

# Absorbs binary rounding in differences such as 7.3 - 7.0; far below the
# 0.1 s precision models are asked for.
EPS = 1e-9


@dataclass(frozen=True)
class GateDecision:
    t_star: float
    point_star: tuple[float, float]
    time_source: Source
    space_source: Source


def gate1_temporal(
    t1: float, p2: Pass2Result, window: tuple[float, float], tau: float
) -> tuple[float, Source]:
    """Keep ``t1`` when Pass 2 abstained or hedged at a window edge.

    A hedge is a time strictly closer than ``tau`` to either edge; a time at
    exactly ``tau`` from the edge is accepted.
    """
    if not tau > 0:
        raise ValueError("tau must be > 0")
    t2 = p2.t2
    w_min, w_max = window
    if t2 < 0 or abs(t2 - w_min) < tau - EPS or abs(t2 - w_max) < tau - EPS:
        return t1, Source.PASS1
    return t2, Source.PASS2


def gate2_spatial(
    raw1: tuple[float, float], raw2: tuple[float, float], m: float
) -> tuple[tuple[float, float], Source]:
    """Accept the Pass-2 point only if both axes lie in ``[m, 1000 - m]``.

    ``m == 0`` disables the check entirely, so even a ``(-1, -1)`` answer is
    taken (normalized to ``-0.001``).
    """
    if m < 0:
        raise ValueError("margin must be >= 0")
    x2, y2 = raw2
    if m == 0:
        return (x2 / GRID_MAX, y2 / GRID_MAX), Source.PASS2
    lo, hi = m - EPS, GRID_MAX - m + EPS
    if lo <= x2 <= hi and lo <= y2 <= hi:
        return (x2 / GRID_MAX, y2 / GRID_MAX), Source.PASS2
    x1, y1 = raw1
    return (x1 / GRID_MAX, y1 / GRID_MAX), Source.PASS1


def apply_gates(
    t1: float,
    raw1: tuple[float, float],
    p2: Pass2Result,
    window: tuple[float, float],
    tau: float,
    m: float,
    use_pass2_time: bool = True,
    use_pass2_space: bool = True,
) -> GateDecision:
    if use_pass2_time:
        t_star, t_src = gate1_temporal(t1, p2, window, tau)
    else:
        t_star, t_src = t1, Source.PASS1
    if use_pass2_space:
        point, s_src = gate2_spatial(raw1, (p2.raw_x2, p2.raw_y2), m)
    else:
        point, s_src = (raw1[0] / GRID_MAX, raw1[1] / GRID_MAX), Source.PASS1
    return GateDecision(t_star, point, t_src, s_src)
