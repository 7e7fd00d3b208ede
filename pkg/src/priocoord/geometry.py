"""Paths, disc footprints and pairwise collision sections in coordination space.

Each robot moves along a straight path and is described by one curvilinear
coordinate.  For a pair of paths the set of coordinate pairs ``(x_i, x_j)``
at which two discs of diameter ``D`` overlap is a *section*.  Three kinds
exist:

``crossing``
    Non-parallel paths.  With ``a = x_i - c_i`` and ``b = x_j - c_j``
    measured from the crossing point, the squared centre distance is
    ``a**2 + b**2 - 2*cos*a*b`` and the section is the open ellipse where
    it is below ``D**2``.
``same-path``
    Two robots on one path; the section is the strip ``|x_i - x_j| < D``.
``disjoint``
    Parallel paths at least ``D`` apart; the section is empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Conservative inflation applied to obstacle thresholds in safety checks.
EPS_GEOM = 1e-9

CROSSING = "crossing"
SAME_PATH = "same-path"
DISJOINT = "disjoint"


class GeometryError(ValueError):
    """Raised for path pairs that cannot be represented (overlapping parallels)."""


@dataclass(frozen=True)
class PathSpec:
    id: str
    origin: tuple[float, float]
    direction: tuple[float, float]
    length: float
    x_entry: float
    x_exit: float

    def __post_init__(self):
        norm = math.hypot(*self.direction)
        if abs(norm - 1.0) > 1e-12:
            raise GeometryError(f"path {self.id}: direction must be a unit vector (norm {norm})")
        if not (0.0 <= self.x_entry < self.x_exit <= self.length):
            raise GeometryError(
                f"path {self.id}: need 0 <= x_entry < x_exit <= length, got "
                f"{self.x_entry}, {self.x_exit}, {self.length}"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "origin": list(self.origin),
            "direction": list(self.direction),
            "length": self.length,
            "x_entry": self.x_entry,
            "x_exit": self.x_exit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PathSpec":
        return cls(
            id=str(d["id"]),
            origin=(float(d["origin"][0]), float(d["origin"][1])),
            direction=(float(d["direction"][0]), float(d["direction"][1])),
            length=float(d["length"]),
            x_entry=float(d["x_entry"]),
            x_exit=float(d["x_exit"]),
        )


@dataclass(frozen=True)
class Footprint:
    diameter: float

    def __post_init__(self):
        if not self.diameter > 0:
            raise GeometryError("footprint diameter must be positive")


@dataclass(frozen=True)
class PairSection:
    """Cross-section of one collision cylinder in the ``(x_i, x_j)`` plane.

    For ``crossing`` sections ``c_i, c_j`` are the coordinates of the path
    crossing point and ``cos`` the cosine of the angle between directions.
    ``box`` is ``(lo_i, hi_i, lo_j, hi_j)``; it is infinite for same-path
    sections and ``None`` for disjoint ones.
    """

    kind: str
    diameter: float
    c_i: float = 0.0
    c_j: float = 0.0
    cos: float = 0.0
    box: tuple[float, float, float, float] | None = None

    @property
    def empty(self) -> bool:
        return self.kind == DISJOINT

    def quadratic(self) -> tuple[float, float, float]:
        """Coefficients ``(A, B, C)`` of ``Q = A a**2 + B b**2 + 2 C a b``."""
        return 1.0, 1.0, -self.cos

    def swapped(self) -> "PairSection":
        """The same set with the two axes exchanged."""
        box = None if self.box is None else (self.box[2], self.box[3], self.box[0], self.box[1])
        return PairSection(self.kind, self.diameter, self.c_j, self.c_i, self.cos, box)


def point_at(path: PathSpec, x: float) -> tuple[float, float]:
    return (path.origin[0] + x * path.direction[0], path.origin[1] + x * path.direction[1])


def _half_width(diameter: float, cos: float) -> float:
    # extent of {a^2 + b^2 - 2 cos a b < D^2} along either axis
    return diameter / math.sqrt(1.0 - cos * cos)


def pair_section(path_i: PathSpec, path_j: PathSpec, footprint: Footprint) -> PairSection:
    D = footprint.diameter
    if path_i.id == path_j.id:
        inf = math.inf
        return PairSection(SAME_PATH, D, box=(-inf, inf, -inf, inf))

    di = np.asarray(path_i.direction, dtype=float)
    dj = np.asarray(path_j.direction, dtype=float)
    oi = np.asarray(path_i.origin, dtype=float)
    oj = np.asarray(path_j.origin, dtype=float)
    cross = di[0] * dj[1] - di[1] * dj[0]

    if abs(cross) < 1e-12:
        # parallel lines: distance between them is constant
        w = oj - oi
        dist = abs(di[0] * w[1] - di[1] * w[0])
        if dist < D:
            raise GeometryError(
                f"paths {path_i.id} and {path_j.id} are parallel and closer than D "
                f"({dist:.6g} < {D}); unbounded sections are not supported"
            )
        return PairSection(DISJOINT, D)

    # o_i + c_i d_i = o_j + c_j d_j
    A = np.column_stack([di, -dj])
    c_i, c_j = np.linalg.solve(A, oj - oi)
    cos = float(di @ dj)
    h = _half_width(D, cos)
    box = (float(c_i) - h, float(c_i) + h, float(c_j) - h, float(c_j) + h)
    if box[0] > path_i.x_exit or box[2] > path_j.x_exit:
        # robots are removed at their exit before they could reach the crossing
        return PairSection(DISJOINT, D)
    return PairSection(CROSSING, D, float(c_i), float(c_j), cos, box)


def center_distance_sq(sec: PairSection, x_i: float, x_j: float) -> float:
    """Squared centre distance for a crossing section."""
    a = x_i - sec.c_i
    b = x_j - sec.c_j
    return a * a + b * b - 2.0 * sec.cos * a * b


def in_obstacle(sec: PairSection, x_i: float, x_j: float, eps: float = 0.0) -> bool:
    """Strict membership in the open section; ``eps`` inflates the threshold."""
    if sec.kind == DISJOINT:
        return False
    D = sec.diameter
    if sec.kind == SAME_PATH:
        return abs(x_i - x_j) < D + eps
    return center_distance_sq(sec, x_i, x_j) < D * D + eps


def quadrant_min(a_w: float, b_l: float, cos: float) -> float:
    """Minimum of ``a**2 + b**2 - 2*cos*a*b`` over ``{a >= a_w, b <= b_l}``.

    KKT cases: the unconstrained minimiser (origin) when feasible, otherwise
    the better of the two boundary half-lines, each minimised in closed form
    and clipped to its end point (the shared corner).
    """
    if a_w <= 0.0 <= b_l:
        return 0.0
    # edge a = a_w, b <= b_l
    b = min(cos * a_w, b_l)
    q1 = a_w * a_w + b * b - 2.0 * cos * a_w * b
    # edge b = b_l, a >= a_w
    a = max(cos * b_l, a_w)
    q2 = a * a + b_l * b_l - 2.0 * cos * a * b_l
    return min(q1, q2)


def in_shifted_obstacle(
    sec: PairSection, winner: int, loser: int, x_winner: float, x_loser: float, eps: float = 0.0
) -> bool:
    """Membership in the section extruded towards a lower winner and a higher loser.

    ``winner`` and ``loser`` are 0 or 1 and say which axis of ``sec`` each
    robot occupies (``sec`` is oriented as ``(x_i, x_j)``).  True iff some
    point ``p`` of the section has ``p_winner >= x_winner`` and
    ``p_loser <= x_loser``.
    """
    if winner == loser or {winner, loser} != {0, 1}:
        raise ValueError("winner and loser must be the two distinct axes 0 and 1")
    if sec.kind == DISJOINT:
        return False
    D = sec.diameter
    if sec.kind == SAME_PATH:
        return x_loser - x_winner > -(D + eps)
    c_w, c_l = (sec.c_i, sec.c_j) if winner == 0 else (sec.c_j, sec.c_i)
    return quadrant_min(x_winner - c_w, x_loser - c_l, sec.cos) < D * D + eps
