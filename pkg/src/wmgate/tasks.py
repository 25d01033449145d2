"""Procedural spatial-reasoning episodes with exact answer oracles.

Five question families over the synthetic world, each tagged at
construction time with the reasoning skill it stresses:

* ``EgoM``  — how did the camera move between two views (tag VD or DU);
* ``ObjM``  — which way did an object move between two views (tag DU);
* ``EgoAct`` — where will a target be after executing a stated plan
  (tag AC; answering requires the post-plan viewpoint);
* ``Goal``  — which of four plans centers the target in view (tag AC,
  or LO when the target starts outside the field of view);
* ``Pers``  — where is one object from another object's perspective,
  the perspective being defined by a named facing anchor (tag VD).

Every episode carries an :class:`EvidenceSpec` stating which labels and
viewpoints are required to answer, which makes "is the available visual
evidence sufficient?" a decidable predicate.  The same geometric
predicates power both the ground-truth oracle (on scene geometry) and
the percept-bounded evaluation used by synthetic answerers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from random import Random

from .errors import GenerationError, MalformedEpisodeError
from .geometry import (
    ActionEntry,
    ActionKind,
    ActionPlan,
    Pose,
    bearing_to,
    distance_to,
    final_pose,
    plan_from_jsonable,
    plan_to_jsonable,
    signed_angle,
)
from .seeds import derive_rng
from .world import (
    Observation,
    Scene,
    SceneObject,
    Sensor,
    render,
    scene_from_jsonable,
    scene_to_jsonable,
)


class QuestionCategory(str, Enum):
    EGO_MOVEMENT = "EgoM"
    OBJ_MOVEMENT = "ObjM"
    ACTION_CONSEQUENCE = "EgoAct"
    GOAL_AIMING = "Goal"
    PERSPECTIVE = "Pers"


class ErrorTag(str, Enum):
    LIMITED_OBSERVABILITY = "LO"
    VIEWPOINT_DEPENDENCE = "VD"
    ACTION_CONDITIONED = "AC"
    DYNAMICS = "DU"


N_CHOICES = 4

# Sector split of the relative bearing circle, used by EgoAct/Goal/Pers.
SECTOR_FRONT, SECTOR_LEFT, SECTOR_RIGHT, SECTOR_BEHIND = 0, 1, 2, 3

EGOACT_LABELS = ("Directly in front of you", "To your left", "To your right", "Behind you")
PERS_LABELS = ("In front of it", "On its left", "On its right", "Behind it")
EGOM_LABELS = (
    "The camera moved forward",
    "The camera moved backward",
    "The camera turned left",
    "The camera turned right",
)
OBJM_LABELS = ("It moved left", "It moved right", "It moved closer", "It moved farther away")

# Geometry margins used both at generation (rejection) and evaluation.
TIE_MARGIN_DEG = 5.0
VIEW_MARGIN_DEG = 8.0
RANGE_MARGIN = 0.5
EGOM_DIST_THRESHOLD = 0.1
OBJM_BEARING_THRESHOLD = 8.0
VIEWPOINT_POS_TOL = 0.05
VIEWPOINT_HEADING_TOL = 4.6


def sector_of(bearing: float) -> int:
    """Quadrant of a relative bearing: front, left, right, or behind."""
    if abs(bearing) <= 45.0:
        return SECTOR_FRONT
    if abs(bearing) >= 135.0:
        return SECTOR_BEHIND
    return SECTOR_LEFT if bearing > 0 else SECTOR_RIGHT


def sector_margin(bearing: float) -> float:
    """Angular distance to the nearest sector boundary."""
    return min(abs(abs(bearing) - 45.0), abs(abs(bearing) - 135.0))


@dataclass(frozen=True)
class ViewpointSpec:
    """A pose some frame must (approximately) be taken from."""

    pose: Pose
    pos_tol: float = VIEWPOINT_POS_TOL
    heading_tol: float = VIEWPOINT_HEADING_TOL

    def satisfied_by(self, viewpoint: Pose) -> bool:
        if math.hypot(viewpoint.x - self.pose.x, viewpoint.y - self.pose.y) > self.pos_tol:
            return False
        return abs(signed_angle(viewpoint.heading - self.pose.heading)) <= self.heading_tol


@dataclass(frozen=True)
class EvidenceSpec:
    """What answering requires: object labels plus (optionally) viewpoints."""

    required_labels: frozenset[str]
    required_viewpoints: tuple[ViewpointSpec, ...] = ()
    reference_plan: ActionPlan | None = None

    def __post_init__(self) -> None:
        if not self.required_labels:
            raise ValueError("EvidenceSpec needs at least one required label")


@dataclass(frozen=True)
class Episode:
    id: str
    scene: Scene
    start_pose: Pose
    category: QuestionCategory
    error_tag: ErrorTag
    question_text: str
    choices: tuple[str, ...]
    truth_index: int
    evidence: EvidenceSpec
    seed: int
    second_pose: Pose | None = None
    scene_after: Scene | None = None
    candidate_plans: tuple[ActionPlan, ...] | None = None
    goal_tol_deg: float | None = None
    target_label: str | None = None
    anchor_label: str | None = None
    ref_label: str | None = None

    def __post_init__(self) -> None:
        if not (0 <= self.truth_index < len(self.choices)):
            raise MalformedEpisodeError(
                f"truth_index {self.truth_index} outside choices of length {len(self.choices)}"
            )
        if len(set(self.choices)) != len(self.choices):
            raise MalformedEpisodeError("choices must be distinct")
        if oracle_answer(self) != self.truth_index:
            raise MalformedEpisodeError(
                f"episode {self.id}: truth_index {self.truth_index} disagrees with the oracle"
            )


def start_observations(episode: Episode, sensor: Sensor) -> list[Observation]:
    """The real (never corrupted) frames the question is asked about."""
    frames = [render(episode.scene, episode.start_pose, sensor)]
    if episode.scene_after is not None:
        frames.append(render(episode.scene_after, episode.start_pose, sensor))
    elif episode.second_pose is not None:
        frames.append(render(episode.scene, episode.second_pose, sensor))
    return frames


def sufficient(episode: Episode, frames: list[Observation]) -> bool:
    """Label-presence plus viewpoint-coverage test, ignoring corruption."""
    if not frames:
        raise ValueError("sufficiency is undefined for an empty frame list")
    seen: set[str] = set()
    for frame in frames:
        seen.update(frame.labels())
    if not set(episode.evidence.required_labels) <= seen:
        return False
    for spec in episode.evidence.required_viewpoints:
        if not any(spec.satisfied_by(f.viewpoint) for f in frames):
            return False
    return True


# --- shared geometric predicates -------------------------------------------


def _egom_rule(b0: float, d0: float, b1: float, d1: float) -> str:
    """Camera-motion call from one anchor seen in two frames."""
    if abs(d1 - d0) >= EGOM_DIST_THRESHOLD:
        return EGOM_LABELS[0] if d1 < d0 else EGOM_LABELS[1]
    # A left turn rotates the view left, so the anchor's bearing drops.
    return EGOM_LABELS[2] if b1 < b0 else EGOM_LABELS[3]


def _objm_rule(b0: float, d0: float, b1: float, d1: float) -> str:
    """Object-motion call from the same viewpoint across two frames."""
    if abs(b1 - b0) >= OBJM_BEARING_THRESHOLD:
        return OBJM_LABELS[0] if b1 > b0 else OBJM_LABELS[1]
    return OBJM_LABELS[2] if d1 < d0 else OBJM_LABELS[3]


def _pers_bearing(x_pos: tuple[float, float], facing_pos: tuple[float, float],
                  y_pos: tuple[float, float]) -> float:
    facing = math.degrees(math.atan2(facing_pos[1] - x_pos[1], facing_pos[0] - x_pos[0]))
    toward = math.degrees(math.atan2(y_pos[1] - x_pos[1], y_pos[0] - x_pos[0]))
    return signed_angle(toward - facing)


def _goal_hits(start: Pose, plans: tuple[ActionPlan, ...], target_pos: tuple[float, float],
               tol_deg: float) -> list[int]:
    hits = []
    for i, plan in enumerate(plans):
        fp = final_pose(start, plan)
        if abs(bearing_to(fp, target_pos)) <= tol_deg:
            hits.append(i)
    return hits


def oracle_answer(episode: Episode) -> int:
    """Ground-truth choice index, recomputed from uncorrupted geometry."""
    cat = episode.category
    if cat is QuestionCategory.EGO_MOVEMENT:
        if episode.second_pose is None:
            raise MalformedEpisodeError("EgoM episode lacks a second pose")
        p0, p1 = episode.start_pose, episode.second_pose
        turn = signed_angle(p1.heading - p0.heading)
        if turn != 0.0:
            label = EGOM_LABELS[2] if turn > 0 else EGOM_LABELS[3]
        else:
            dx, dy = p1.x - p0.x, p1.y - p0.y
            along = dx * math.cos(math.radians(p0.heading)) + dy * math.sin(
                math.radians(p0.heading)
            )
            label = EGOM_LABELS[0] if along > 0 else EGOM_LABELS[1]
        return episode.choices.index(label)

    if cat is QuestionCategory.OBJ_MOVEMENT:
        if episode.scene_after is None or episode.target_label is None:
            raise MalformedEpisodeError("ObjM episode lacks a second frame or target")
        before = episode.scene.by_label(episode.target_label).position
        after = episode.scene_after.by_label(episode.target_label).position
        pose = episode.start_pose
        label = _objm_rule(
            bearing_to(pose, before), distance_to(pose, before),
            bearing_to(pose, after), distance_to(pose, after),
        )
        return episode.choices.index(label)

    if cat is QuestionCategory.ACTION_CONSEQUENCE:
        if episode.evidence.reference_plan is None or episode.target_label is None:
            raise MalformedEpisodeError("EgoAct episode lacks a reference plan or target")
        post = final_pose(episode.start_pose, episode.evidence.reference_plan)
        target = episode.scene.by_label(episode.target_label).position
        label = EGOACT_LABELS[sector_of(bearing_to(post, target))]
        return episode.choices.index(label)

    if cat is QuestionCategory.GOAL_AIMING:
        if episode.candidate_plans is None or episode.goal_tol_deg is None:
            raise MalformedEpisodeError("Goal episode lacks candidate plans")
        target = episode.scene.by_label(episode.target_label).position
        hits = _goal_hits(episode.start_pose, episode.candidate_plans, target,
                          episode.goal_tol_deg)
        if len(hits) != 1:
            raise MalformedEpisodeError(f"Goal episode has {len(hits)} centering plans, want 1")
        return hits[0]

    if cat is QuestionCategory.PERSPECTIVE:
        x = episode.scene.by_label(episode.anchor_label).position
        z = episode.scene.by_label(episode.ref_label).position
        y = episode.scene.by_label(episode.target_label).position
        label = PERS_LABELS[sector_of(_pers_bearing(x, z, y))]
        return episode.choices.index(label)

    raise MalformedEpisodeError(f"unknown category {cat!r}")


# --- percept-bounded evaluation ---------------------------------------------


def percept_world_position(frame: Observation, label: str) -> tuple[float, float] | None:
    """Reconstruct a label's world position from one frame's percept."""
    p = frame.find(label)
    if p is None:
        return None
    ang = math.radians(frame.viewpoint.heading + p.relative_bearing)
    return (
        frame.viewpoint.x + p.distance * math.cos(ang),
        frame.viewpoint.y + p.distance * math.sin(ang),
    )


def most_recent_position(frames: list[Observation], label: str) -> tuple[float, float] | None:
    """World position of the label's most recent percept, if any."""
    est = None
    for frame in frames:
        pos = percept_world_position(frame, label)
        if pos is not None:
            est = pos
    return est


def evaluate_from_percepts(episode: Episode, frames: list[Observation]) -> int | None:
    """Answer using only percepts (possibly corrupted) from the frames.

    Returns the chosen index, or None when the available evidence does
    not resolve — the caller falls back to a uniform answer.  Imagined
    frames contribute whatever their (possibly corrupted) percepts say;
    with a zero noise model this function agrees with the oracle on
    every generated episode.
    """
    if not frames or not sufficient(episode, frames):
        return None
    cat = episode.category

    if cat in (QuestionCategory.EGO_MOVEMENT, QuestionCategory.OBJ_MOVEMENT):
        real = [f for f in frames if not f.imagined]
        key = episode.anchor_label if cat is QuestionCategory.EGO_MOVEMENT else episode.target_label
        if len(real) < 2:
            return None
        first, second = real[0].find(key), real[1].find(key)
        if first is None or second is None:
            return None
        rule = _egom_rule if cat is QuestionCategory.EGO_MOVEMENT else _objm_rule
        label = rule(first.relative_bearing, first.distance,
                     second.relative_bearing, second.distance)
        return episode.choices.index(label)

    if cat is QuestionCategory.ACTION_CONSEQUENCE:
        spec = episode.evidence.required_viewpoints[0]
        post_frame = next((f for f in frames if spec.satisfied_by(f.viewpoint)), None)
        target = most_recent_position(frames, episode.target_label)
        if post_frame is None or target is None:
            return None
        label = EGOACT_LABELS[sector_of(bearing_to(post_frame.viewpoint, target))]
        return episode.choices.index(label)

    if cat is QuestionCategory.GOAL_AIMING:
        target = most_recent_position(frames, episode.target_label)
        if target is None:
            return None
        start = frames[0].viewpoint
        hits = _goal_hits(start, episode.candidate_plans, target, episode.goal_tol_deg)
        if len(hits) == 1:
            return hits[0]
        # Corrupted geometry may center zero or several plans; commit to
        # the plan that points closest at the believed position.
        bearings = [
            abs(bearing_to(final_pose(start, plan), target))
            for plan in episode.candidate_plans
        ]
        return min(range(len(bearings)), key=lambda i: bearings[i])

    if cat is QuestionCategory.PERSPECTIVE:
        x = most_recent_position(frames, episode.anchor_label)
        z = most_recent_position(frames, episode.ref_label)
        y = most_recent_position(frames, episode.target_label)
        if x is None or z is None or y is None:
            return None
        if math.hypot(z[0] - x[0], z[1] - x[1]) < 1e-9 or math.hypot(y[0] - x[0], y[1] - x[1]) < 1e-9:
            return None
        label = PERS_LABELS[sector_of(_pers_bearing(x, z, y))]
        return episode.choices.index(label)

    return None


# --- generation --------------------------------------------------------------


def _shuffled(labels: tuple[str, ...], truth_label: str, rng: Random) -> tuple[tuple[str, ...], int]:
    order = list(labels)
    rng.shuffle(order)
    return tuple(order), order.index(truth_label)


def _sample_pose(rng: Random, scene: Scene, clearance: float = 0.4) -> Pose:
    xmin, ymin, xmax, ymax = scene.bounds
    for _ in range(60):
        x = rng.uniform(xmin + 0.5, xmax - 0.5)
        y = rng.uniform(ymin + 0.5, ymax - 0.5)
        if all(math.hypot(x - o.position[0], y - o.position[1]) >= clearance
               for o in scene.objects):
            return Pose(x, y, rng.randrange(0, 720) / 2.0)
    raise GenerationError("no free pose found in scene")


def _clearly_visible(scene: Scene, pose: Pose, sensor: Sensor, label: str,
                     min_dist: float = 0.8) -> bool:
    obs = render(scene, pose, sensor)
    p = obs.find(label)
    if p is None:
        return False
    return (
        abs(p.relative_bearing) <= sensor.fov / 2.0 - VIEW_MARGIN_DEG
        and min_dist <= p.distance <= sensor.range - RANGE_MARGIN
    )


def _turn_entry(turn_deg: float) -> ActionEntry:
    kind = ActionKind.TURN_LEFT if turn_deg > 0 else ActionKind.TURN_RIGHT
    return ActionEntry(kind, max(1, round(abs(turn_deg) / 9.0)))


def _describe_plan(plan: ActionPlan) -> str:
    parts = []
    for e in plan.entries:
        if e.kind is ActionKind.MOVE_FORWARD:
            parts.append(f"move forward {e.value * 0.25:g} m")
        else:
            side = "left" if e.kind is ActionKind.TURN_LEFT else "right"
            parts.append(f"turn {side} {e.value * 9:g}°")
    return ", then ".join(parts) if parts else "stay in place"


def _gen_egom(scene: Scene, rng: Random, sensor: Sensor, seed: int, episode_id: str) -> Episode:
    if not scene.objects:
        raise GenerationError("EgoM needs at least one object")
    for _ in range(120):
        anchor = rng.choice(scene.objects)
        pose0 = _sample_pose(rng, scene)
        d0 = distance_to(pose0, anchor.position)
        if not (1.2 <= d0 <= sensor.range - RANGE_MARGIN):
            continue
        # Face the anchor (within the half-degree grid) so both frames keep it.
        abs_dir = pose0.heading + bearing_to(pose0, anchor.position)
        pose0 = Pose(pose0.x, pose0.y, abs_dir)
        motion = rng.choice(("forward", "backward", "turn_left", "turn_right"))
        if motion in ("turn_left", "turn_right"):
            theta = 9.0 * rng.randint(2, 4)
            theta = theta if motion == "turn_left" else -theta
            pose1 = Pose(pose0.x, pose0.y, pose0.heading + theta)
            truth = EGOM_LABELS[2] if theta > 0 else EGOM_LABELS[3]
            tag = ErrorTag.VIEWPOINT_DEPENDENCE
        else:
            steps = rng.randint(2, 4)
            sign = 1.0 if motion == "forward" else -1.0
            if motion == "forward" and d0 - 0.25 * steps < 0.8:
                continue
            dx = sign * 0.25 * steps * math.cos(math.radians(pose0.heading))
            dy = sign * 0.25 * steps * math.sin(math.radians(pose0.heading))
            pose1 = Pose(pose0.x + dx, pose0.y + dy, pose0.heading)
            truth = EGOM_LABELS[0] if motion == "forward" else EGOM_LABELS[1]
            tag = ErrorTag.DYNAMICS
        if not (_clearly_visible(scene, pose0, sensor, anchor.label, min_dist=0.6)
                and _clearly_visible(scene, pose1, sensor, anchor.label, min_dist=0.6)):
            continue
        choices, truth_index = _shuffled(EGOM_LABELS, truth, rng)
        return Episode(
            id=episode_id,
            scene=scene,
            start_pose=pose0,
            second_pose=pose1,
            category=QuestionCategory.EGO_MOVEMENT,
            error_tag=tag,
            question_text=(
                "You see two consecutive views of the same scene. Relative to the "
                f"first view, how did the camera move? Use the {anchor.color} "
                f"{anchor.label} as a reference."
            ),
            choices=choices,
            truth_index=truth_index,
            evidence=EvidenceSpec(required_labels=frozenset({anchor.label})),
            seed=seed,
            anchor_label=anchor.label,
        )
    raise GenerationError(f"EgoM template infeasible for scene {scene.seed}")


def _rotate_about(center: tuple[float, float], point: tuple[float, float],
                  deg: float) -> tuple[float, float]:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    dx, dy = point[0] - center[0], point[1] - center[1]
    return (center[0] + c * dx - s * dy, center[1] + s * dx + c * dy)


def _gen_objm(scene: Scene, rng: Random, sensor: Sensor, seed: int, episode_id: str) -> Episode:
    if len(scene.objects) < 1:
        raise GenerationError("ObjM needs at least one object")
    xmin, ymin, xmax, ymax = scene.bounds
    for _ in range(120):
        target = rng.choice(scene.objects)
        pose = _sample_pose(rng, scene)
        if not _clearly_visible(scene, pose, sensor, target.label, min_dist=1.0):
            continue
        d0 = distance_to(pose, target.position)
        motion = rng.choice(("left", "right", "closer", "farther"))
        if motion in ("left", "right"):
            phi = rng.uniform(15.0, 25.0) * (1.0 if motion == "left" else -1.0)
            new_pos = _rotate_about(pose.position, target.position, phi)
            truth = OBJM_LABELS[0] if motion == "left" else OBJM_LABELS[1]
        else:
            delta = rng.uniform(0.4, 0.8) * (-1.0 if motion == "closer" else 1.0)
            new_d = d0 + delta
            if new_d < 0.5 or new_d > sensor.range - 0.3:
                continue
            scale = new_d / d0
            new_pos = (
                pose.x + (target.position[0] - pose.x) * scale,
                pose.y + (target.position[1] - pose.y) * scale,
            )
            truth = OBJM_LABELS[2] if motion == "closer" else OBJM_LABELS[3]
        if not (xmin + 0.1 <= new_pos[0] <= xmax - 0.1 and ymin + 0.1 <= new_pos[1] <= ymax - 0.1):
            continue
        if any(o.id != target.id
               and math.hypot(new_pos[0] - o.position[0], new_pos[1] - o.position[1]) < 0.8
               for o in scene.objects):
            continue
        moved = tuple(
            SceneObject(o.id, o.label, new_pos, o.radius, o.facing, o.color)
            if o.id == target.id else o
            for o in scene.objects
        )
        scene_after = Scene(objects=moved, bounds=scene.bounds, seed=scene.seed)
        if not _clearly_visible(scene_after, pose, sensor, target.label, min_dist=0.4):
            continue
        choices, truth_index = _shuffled(OBJM_LABELS, truth, rng)
        return Episode(
            id=episode_id,
            scene=scene,
            start_pose=pose,
            scene_after=scene_after,
            category=QuestionCategory.OBJ_MOVEMENT,
            error_tag=ErrorTag.DYNAMICS,
            question_text=(
                f"The {target.color} {target.label} moved between the two views. "
                "From your viewpoint, which way did it move?"
            ),
            choices=choices,
            truth_index=truth_index,
            evidence=EvidenceSpec(required_labels=frozenset({target.label})),
            seed=seed,
            target_label=target.label,
        )
    raise GenerationError(f"ObjM template infeasible for scene {scene.seed}")


def _gen_egoact(scene: Scene, rng: Random, sensor: Sensor, seed: int, episode_id: str) -> Episode:
    if not scene.objects:
        raise GenerationError("EgoAct needs at least one object")
    for _ in range(120):
        target = rng.choice(scene.objects)
        pose = _sample_pose(rng, scene)
        if not _clearly_visible(scene, pose, sensor, target.label):
            continue
        k = rng.randint(5, 15)
        left = rng.random() < 0.5
        plan = ActionPlan((ActionEntry(ActionKind.TURN_LEFT if left else ActionKind.TURN_RIGHT, k),))
        post = final_pose(pose, plan)
        b_post = bearing_to(post, target.position)
        if sector_margin(b_post) < TIE_MARGIN_DEG:
            continue
        truth = EGOACT_LABELS[sector_of(b_post)]
        choices, truth_index = _shuffled(EGOACT_LABELS, truth, rng)
        side = "left" if left else "right"
        return Episode(
            id=episode_id,
            scene=scene,
            start_pose=pose,
            category=QuestionCategory.ACTION_CONSEQUENCE,
            error_tag=ErrorTag.ACTION_CONDITIONED,
            question_text=(
                f"If you turn {side} by {9 * k}°, where will the {target.color} "
                f"{target.label} be relative to you?"
            ),
            choices=choices,
            truth_index=truth_index,
            evidence=EvidenceSpec(
                required_labels=frozenset({target.label}),
                required_viewpoints=(ViewpointSpec(pose=post),),
                reference_plan=plan,
            ),
            seed=seed,
            target_label=target.label,
        )
    raise GenerationError(f"EgoAct template infeasible for scene {scene.seed}")


def _candidate_turn_plans(correct_k: int, left: bool, rng: Random) -> list[ActionPlan]:
    """The correct single-turn plan plus three decoys."""

    def turn(k: int, to_left: bool) -> ActionPlan:
        kind = ActionKind.TURN_LEFT if to_left else ActionKind.TURN_RIGHT
        return ActionPlan((ActionEntry(kind, k),))

    plans = [turn(correct_k, left)]
    offsets = rng.sample([3, 4, 5, 6], 2)
    for off in offsets:
        k = correct_k + off if correct_k + off <= 20 else correct_k - off
        if k < 1:
            k = correct_k + off
        plans.append(turn(k, left))
    plans.append(turn(max(1, min(20, correct_k + rng.randint(-2, 2))), not left))
    return plans


def _gen_goal(scene: Scene, rng: Random, sensor: Sensor, seed: int, episode_id: str) -> Episode:
    if not scene.objects:
        raise GenerationError("Goal needs at least one object")
    tol = sensor.fov / 6.0
    wide = Sensor(fov=360.0, range=sensor.range, occlusion_enabled=sensor.occlusion_enabled)
    for _ in range(160):
        target = rng.choice(scene.objects)
        limited = rng.random() < 0.5
        pose = _sample_pose(rng, scene)
        if not _clearly_visible(scene, pose, wide, target.label, min_dist=1.0):
            continue  # needs line of sight from the position regardless of heading
        b_start = bearing_to(pose, target.position)
        if limited:
            if abs(b_start) < sensor.fov / 2.0 + VIEW_MARGIN_DEG or abs(b_start) > 172.0:
                continue
        else:
            if not _clearly_visible(scene, pose, sensor, target.label, min_dist=1.0):
                continue
        correct_k = round(abs(b_start) / 9.0)
        if correct_k < 1 or correct_k > 20:
            continue
        left = b_start > 0
        plans = _candidate_turn_plans(correct_k, left, rng)
        hits = _goal_hits(pose, tuple(plans), target.position, tol)
        if hits != [0]:
            continue
        # Reject decoys that land near the centering threshold.
        margins_ok = all(
            abs(abs(bearing_to(final_pose(pose, plan), target.position)) - tol) > TIE_MARGIN_DEG
            for plan in plans
        )
        if not margins_ok:
            continue
        order = list(range(len(plans)))
        rng.shuffle(order)
        shuffled_plans = tuple(plans[i] for i in order)
        truth_index = order.index(0)
        choices = tuple(_describe_plan(p) for p in shuffled_plans)
        if len(set(choices)) != len(choices):
            continue
        viewpoints: tuple[ViewpointSpec, ...] = ()
        if limited:
            reveal = Pose(pose.x, pose.y, pose.heading + b_start)
            viewpoints = (ViewpointSpec(pose=reveal),)
        return Episode(
            id=episode_id,
            scene=scene,
            start_pose=pose,
            category=QuestionCategory.GOAL_AIMING,
            error_tag=ErrorTag.LIMITED_OBSERVABILITY if limited else ErrorTag.ACTION_CONDITIONED,
            question_text=(
                f"Which action plan puts the {target.color} {target.label} in the "
                "center of your view?"
            ),
            choices=choices,
            truth_index=truth_index,
            evidence=EvidenceSpec(
                required_labels=frozenset({target.label}),
                required_viewpoints=viewpoints,
            ),
            seed=seed,
            candidate_plans=shuffled_plans,
            goal_tol_deg=tol,
            target_label=target.label,
        )
    raise GenerationError(f"Goal template infeasible for scene {scene.seed}")


def _pose_facing(scene: Scene, rng: Random, targets: tuple[SceneObject, ...],
                 sensor: Sensor) -> Pose | None:
    """A pose from which every target is clearly visible, if one exists."""
    cx = sum(o.position[0] for o in targets) / len(targets)
    cy = sum(o.position[1] for o in targets) / len(targets)
    xmin, ymin, xmax, ymax = scene.bounds
    for _ in range(20):
        ang = math.radians(rng.randrange(0, 360))
        dist = rng.uniform(1.5, min(3.2, sensor.range - RANGE_MARGIN - 0.3))
        x, y = cx + dist * math.cos(ang), cy + dist * math.sin(ang)
        if not (xmin + 0.3 <= x <= xmax - 0.3 and ymin + 0.3 <= y <= ymax - 0.3):
            continue
        if any(math.hypot(x - o.position[0], y - o.position[1]) < 0.4 for o in scene.objects):
            continue
        probe = Pose(x, y, 0.0)
        pose = Pose(x, y, probe.heading + bearing_to(probe, (cx, cy)))
        if all(_clearly_visible(scene, pose, sensor, o.label, min_dist=0.5) for o in targets):
            return pose
    return None


def _gen_pers(scene: Scene, rng: Random, sensor: Sensor, seed: int, episode_id: str) -> Episode:
    if len(scene.objects) < 3:
        raise GenerationError("Pers needs at least three objects")
    for _ in range(160):
        triple = rng.sample(list(scene.objects), 3)
        # Compact triples fit a single view cone; spread-out ones rarely do.
        span = max(
            math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])
            for a in triple for b in triple
        )
        if span > 3.0:
            continue
        x_obj, z_obj, y_obj = triple
        pose = _pose_facing(scene, rng, tuple(triple), sensor)
        if pose is None:
            continue
        bearing = _pers_bearing(x_obj.position, z_obj.position, y_obj.position)
        # Exclude targets on the facing ray and near sector boundaries.
        if abs(bearing) < TIE_MARGIN_DEG or sector_margin(bearing) < TIE_MARGIN_DEG:
            continue
        truth = PERS_LABELS[sector_of(bearing)]
        choices, truth_index = _shuffled(PERS_LABELS, truth, rng)
        return Episode(
            id=episode_id,
            scene=scene,
            start_pose=pose,
            category=QuestionCategory.PERSPECTIVE,
            error_tag=ErrorTag.VIEWPOINT_DEPENDENCE,
            question_text=(
                f"The {x_obj.color} {x_obj.label} is facing the {z_obj.color} "
                f"{z_obj.label}. From the {x_obj.label}'s perspective, where is "
                f"the {y_obj.color} {y_obj.label}?"
            ),
            choices=choices,
            truth_index=truth_index,
            evidence=EvidenceSpec(
                required_labels=frozenset({x_obj.label, z_obj.label, y_obj.label})
            ),
            seed=seed,
            target_label=y_obj.label,
            anchor_label=x_obj.label,
            ref_label=z_obj.label,
        )
    raise GenerationError(f"Pers template infeasible for scene {scene.seed}")


_GENERATORS = {
    QuestionCategory.EGO_MOVEMENT: _gen_egom,
    QuestionCategory.OBJ_MOVEMENT: _gen_objm,
    QuestionCategory.ACTION_CONSEQUENCE: _gen_egoact,
    QuestionCategory.GOAL_AIMING: _gen_goal,
    QuestionCategory.PERSPECTIVE: _gen_pers,
}


def generate_episode(
    scene: Scene,
    category: QuestionCategory,
    seed: int,
    sensor: Sensor | None = None,
    episode_id: str | None = None,
) -> Episode:
    """Deterministically instantiate one episode of the given category.

    Raises :class:`GenerationError` when the template cannot be satisfied
    for this scene; callers retry with a fresh seed or scene.
    """
    sensor = sensor or Sensor()
    rng = derive_rng("episode", category.value, seed)
    if episode_id is None:
        episode_id = f"{category.value}-{seed}"
    return _GENERATORS[category](scene, rng, sensor, seed, episode_id)


# --- serialization ----------------------------------------------------------


def _pose_to_jsonable(pose: Pose) -> dict:
    return {"x": pose.x, "y": pose.y, "heading": pose.heading}


def _pose_from_jsonable(d: dict) -> Pose:
    return Pose(d["x"], d["y"], d["heading"])


def episode_to_jsonable(episode: Episode) -> dict:
    ev = episode.evidence
    return {
        "schema_version": 1,
        "id": episode.id,
        "category": episode.category.value,
        "error_tag": episode.error_tag.value,
        "seed": episode.seed,
        "scene": scene_to_jsonable(episode.scene),
        "start_pose": _pose_to_jsonable(episode.start_pose),
        "second_pose": _pose_to_jsonable(episode.second_pose) if episode.second_pose else None,
        "scene_after": scene_to_jsonable(episode.scene_after) if episode.scene_after else None,
        "question_text": episode.question_text,
        "choices": list(episode.choices),
        "truth_index": episode.truth_index,
        "evidence": {
            "required_labels": sorted(ev.required_labels),
            "required_viewpoints": [
                {
                    "pose": _pose_to_jsonable(v.pose),
                    "pos_tol": v.pos_tol,
                    "heading_tol": v.heading_tol,
                }
                for v in ev.required_viewpoints
            ],
            "reference_plan": plan_to_jsonable(ev.reference_plan) if ev.reference_plan else None,
        },
        "candidate_plans": (
            [plan_to_jsonable(p) for p in episode.candidate_plans]
            if episode.candidate_plans is not None
            else None
        ),
        "goal_tol_deg": episode.goal_tol_deg,
        "target_label": episode.target_label,
        "anchor_label": episode.anchor_label,
        "ref_label": episode.ref_label,
    }


def episode_from_jsonable(data: dict) -> Episode:
    ev = data["evidence"]
    return Episode(
        id=data["id"],
        scene=scene_from_jsonable(data["scene"]),
        start_pose=_pose_from_jsonable(data["start_pose"]),
        second_pose=_pose_from_jsonable(data["second_pose"]) if data.get("second_pose") else None,
        scene_after=scene_from_jsonable(data["scene_after"]) if data.get("scene_after") else None,
        category=QuestionCategory(data["category"]),
        error_tag=ErrorTag(data["error_tag"]),
        question_text=data["question_text"],
        choices=tuple(data["choices"]),
        truth_index=data["truth_index"],
        evidence=EvidenceSpec(
            required_labels=frozenset(ev["required_labels"]),
            required_viewpoints=tuple(
                ViewpointSpec(
                    pose=_pose_from_jsonable(v["pose"]),
                    pos_tol=v["pos_tol"],
                    heading_tol=v["heading_tol"],
                )
                for v in ev["required_viewpoints"]
            ),
            reference_plan=(
                plan_from_jsonable(ev["reference_plan"]) if ev.get("reference_plan") else None
            ),
        ),
        seed=data["seed"],
        candidate_plans=(
            tuple(plan_from_jsonable(p) for p in data["candidate_plans"])
            if data.get("candidate_plans") is not None
            else None
        ),
        goal_tol_deg=data.get("goal_tol_deg"),
        target_label=data.get("target_label"),
        anchor_label=data.get("anchor_label"),
        ref_label=data.get("ref_label"),
    )
