"""Exact pose arithmetic for the fixed egocentric action space.

Conventions (fixed, the wire formats depend on them):

* heading 0 degrees points along +x, angles grow counter-clockwise;
* a positive relative bearing means "to the left of the current heading";
* one turn step is 9 degrees, one forward step is 0.25 meters.

Headings are kept on a half-degree grid.  9 and 0.5 are exact in IEEE
doubles and every wrap subtracts or adds exactly 360, so repeated turns
compose exactly: ``turn_left`` then ``turn_right`` is the identity, and
ten left turns from heading 0 give exactly 90 degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import (
    ActionTypeError,
    ActionValueError,
    GeometryError,
    PlanValidationError,
    SchemaFieldError,
)

FORWARD_STEP = 0.25
TURN_STEP = 9.0
MAX_PLAN_ENTRIES = 6
MAX_ENTRY_VALUE = 20

_HALF_DEG = 0.5


def normalize_heading(degrees: float) -> float:
    """Map an angle to [0, 360). Exact for multiples of 0.5 degrees."""
    d = math.fmod(degrees, 360.0)
    if d < 0.0:
        d += 360.0
    if d >= 360.0:
        d = 0.0
    return d


def signed_angle(degrees: float) -> float:
    """Map an angle difference to (-180, 180]."""
    d = math.fmod(degrees, 360.0)
    if d > 180.0:
        d -= 360.0
    elif d <= -180.0:
        d += 360.0
    return d


def _cos_deg(heading: float) -> float:
    # Exact at the cardinals so axis-aligned motion stays exact.
    if heading == 0.0:
        return 1.0
    if heading == 90.0 or heading == 270.0:
        return 0.0
    if heading == 180.0:
        return -1.0
    return math.cos(math.radians(heading))


def _sin_deg(heading: float) -> float:
    if heading == 0.0 or heading == 180.0:
        return 0.0
    if heading == 90.0:
        return 1.0
    if heading == 270.0:
        return -1.0
    return math.sin(math.radians(heading))


@dataclass(frozen=True)
class Pose:
    """Agent position in meters plus heading in degrees on [0, 360).

    The heading is quantized to the half-degree grid at construction;
    all turn increments are multiples of the grid, which is what makes
    turn composition exact.
    """

    x: float
    y: float
    heading: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise GeometryError(f"non-finite pose ({self.x}, {self.y}, {self.heading})")
        h = normalize_heading(self.heading)
        snapped = round(h / _HALF_DEG) * _HALF_DEG
        object.__setattr__(self, "heading", normalize_heading(snapped))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


class ActionKind(str, Enum):
    """Closed egocentric action alphabet. Values are the wire names."""

    MOVE_FORWARD = "move-forward"
    TURN_LEFT = "turn-left"
    TURN_RIGHT = "turn-right"


_OPPOSING = {
    ActionKind.TURN_LEFT: ActionKind.TURN_RIGHT,
    ActionKind.TURN_RIGHT: ActionKind.TURN_LEFT,
}


@dataclass(frozen=True)
class ActionEntry:
    """One plan entry: an action kind repeated ``value`` times."""

    kind: ActionKind
    value: int

    def __post_init__(self) -> None:
        if not isinstance(self.value, int) or isinstance(self.value, bool):
            raise PlanValidationError(f"entry value must be an integer, got {self.value!r}")
        if self.value < 1:
            raise PlanValidationError(f"entry value must be >= 1, got {self.value}")
        if self.value > MAX_ENTRY_VALUE:
            raise PlanValidationError(
                f"entry value {self.value} exceeds the cap of {MAX_ENTRY_VALUE}"
            )


@dataclass(frozen=True)
class ActionPlan:
    """An ordered, bounded sequence of action entries.

    At most ``MAX_PLAN_ENTRIES`` entries, and no two consecutive entries
    with opposing turn kinds (no cancelling/oscillating turns).
    """

    entries: tuple[ActionEntry, ...] = ()

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if len(entries) > MAX_PLAN_ENTRIES:
            raise PlanValidationError(
                f"plan has {len(entries)} entries, cap is {MAX_PLAN_ENTRIES}"
            )
        for prev, cur in zip(entries, entries[1:]):
            if _OPPOSING.get(prev.kind) is cur.kind:
                raise PlanValidationError(
                    f"consecutive opposing turns: {prev.kind.value} then {cur.kind.value}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def unit_count(self) -> int:
        """Total number of unit actions across all entries."""
        return sum(e.value for e in self.entries)


def apply_unit(pose: Pose, kind: ActionKind) -> Pose:
    """Apply one unit action: a 9-degree turn or a 0.25 m forward step."""
    if kind is ActionKind.TURN_LEFT:
        return Pose(pose.x, pose.y, pose.heading + TURN_STEP)
    if kind is ActionKind.TURN_RIGHT:
        return Pose(pose.x, pose.y, pose.heading - TURN_STEP)
    return Pose(
        pose.x + FORWARD_STEP * _cos_deg(pose.heading),
        pose.y + FORWARD_STEP * _sin_deg(pose.heading),
        pose.heading,
    )


def apply_entry(pose: Pose, entry: ActionEntry) -> Pose:
    """Apply all unit repetitions of one plan entry."""
    for _ in range(entry.value):
        pose = apply_unit(pose, entry.kind)
    return pose


def simulate_plan(start: Pose, plan: ActionPlan) -> list[Pose]:
    """Pose after each plan entry (one pose per entry, not per unit)."""
    poses: list[Pose] = []
    pose = start
    for entry in plan.entries:
        pose = apply_entry(pose, entry)
        poses.append(pose)
    return poses


def final_pose(start: Pose, plan: ActionPlan) -> Pose:
    """Pose after executing the whole plan (start pose if empty)."""
    poses = simulate_plan(start, plan)
    return poses[-1] if poses else start


def bearing_to(pose: Pose, point: tuple[float, float]) -> float:
    """Signed relative bearing from a pose to a point, in (-180, 180].

    Positive bearings are to the left of the heading, negative to the
    right.  Raises :class:`GeometryError` for a coincident point.
    """
    dx = point[0] - pose.x
    dy = point[1] - pose.y
    if math.hypot(dx, dy) < 1e-12:
        raise GeometryError("bearing undefined for a coincident point")
    absolute = math.degrees(math.atan2(dy, dx))
    return signed_angle(absolute - pose.heading)


def distance_to(pose: Pose, point: tuple[float, float]) -> float:
    return math.hypot(point[0] - pose.x, point[1] - pose.y)


# --- wire form -------------------------------------------------------------
#
# Plans serialize to the schema used by the policy wire protocol:
# [{"type": "move-forward" | "turn-left" | "turn-right", "value": <int>}]

_KIND_BY_WIRE = {k.value: k for k in ActionKind}


def plan_to_jsonable(plan: ActionPlan) -> list[dict]:
    return [{"type": e.kind.value, "value": e.value} for e in plan.entries]


def entry_from_jsonable(item: object) -> ActionEntry:
    if not isinstance(item, dict):
        raise SchemaFieldError(f"action entry must be an object, got {type(item).__name__}")
    extra = set(item) - {"type", "value"}
    if extra:
        raise SchemaFieldError(f"unknown action entry fields: {sorted(extra)}")
    if "type" not in item or "value" not in item:
        raise SchemaFieldError("action entry requires 'type' and 'value'")
    kind = _KIND_BY_WIRE.get(item["type"])
    if kind is None:
        raise ActionTypeError(f"unknown action type {item['type']!r}")
    value = item["value"]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ActionValueError(f"action value must be an integer, got {value!r}")
    try:
        return ActionEntry(kind, value)
    except PlanValidationError as exc:
        raise ActionValueError(str(exc)) from exc


def plan_from_jsonable(items: object) -> ActionPlan:
    if not isinstance(items, list):
        raise SchemaFieldError(f"actions must be a list, got {type(items).__name__}")
    return ActionPlan(tuple(entry_from_jsonable(item) for item in items))
