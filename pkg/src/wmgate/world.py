"""Synthetic 2D scenes, the ground-truth egocentric renderer, and the
world model that executes action plans into imagined trajectories.

The renderer is percept-level: an observation is the set of objects
inside the sensor cone, each reduced to (label, color, bearing,
distance).  Occlusion is disc-based: a nearer object hides a farther one
when its angular half-width covers the farther object's center bearing.
The world model replays ``simulate_plan`` poses through the renderer and
optionally corrupts each object per frame (drop, label swap, or position
jitter — exclusive, in that order), with every corruption derived from
``(seed, frame, object)`` so trajectories are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import GenerationError
from .geometry import ActionPlan, Pose, bearing_to, distance_to, simulate_plan
from .seeds import derive_rng

DEFAULT_VOCABULARY = (
    "chair", "table", "lamp", "sofa", "plant", "tv", "shelf", "rug",
    "door", "window", "box", "bin", "desk", "stool", "mirror", "vase",
)
DEFAULT_COLORS = ("red", "green", "blue", "yellow", "white", "black", "orange", "purple")


@dataclass(frozen=True)
class SceneObject:
    id: int
    label: str
    position: tuple[float, float]
    radius: float
    facing: float
    color: str

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError(f"object radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Scene:
    """Immutable ground truth: objects inside an axis-aligned boundary."""

    objects: tuple[SceneObject, ...]
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        xmin, ymin, xmax, ymax = self.bounds
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique within a scene")
        for obj in self.objects:
            x, y = obj.position
            if not (xmin <= x <= xmax and ymin <= y <= ymax):
                raise ValueError(f"object {obj.id} at {obj.position} outside bounds {self.bounds}")

    def labels(self) -> list[str]:
        return sorted(o.label for o in self.objects)

    def by_label(self, label: str) -> SceneObject:
        for obj in self.objects:
            if obj.label == label:
                return obj
        raise KeyError(label)


@dataclass(frozen=True)
class Sensor:
    """Field-of-view cone: total angle in degrees plus a range in meters."""

    fov: float = 90.0
    range: float = 5.0
    occlusion_enabled: bool = True

    def __post_init__(self) -> None:
        if not (0 < self.fov <= 360):
            raise ValueError(f"fov must be in (0, 360], got {self.fov}")
        if self.range <= 0:
            raise ValueError(f"range must be positive, got {self.range}")


@dataclass(frozen=True)
class NoiseModel:
    """Per-object, per-frame corruption probabilities for imagined views."""

    p_drop: float = 0.0
    p_label: float = 0.0
    sigma_pos: float = 0.0

    def __post_init__(self) -> None:
        for name in ("p_drop", "p_label"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.sigma_pos < 0:
            raise ValueError(f"sigma_pos must be >= 0, got {self.sigma_pos}")

    @property
    def is_zero(self) -> bool:
        return self.p_drop == 0.0 and self.p_label == 0.0 and self.sigma_pos == 0.0


@dataclass(frozen=True)
class Percept:
    """One object as seen from a viewpoint.

    ``source_id`` and ``corrupted`` exist for oracles and analysis only;
    synthetic agents must match objects by label, never by id.
    """

    label: str
    color: str
    relative_bearing: float
    distance: float
    source_id: int
    corrupted: bool = False


@dataclass(frozen=True)
class Observation:
    viewpoint: Pose
    percepts: tuple[Percept, ...] = ()
    imagined: bool = False
    corrupted_ids: frozenset[int] = frozenset()

    def labels(self) -> set[str]:
        return {p.label for p in self.percepts}

    def find(self, label: str) -> Percept | None:
        """Last percept carrying the label, or None."""
        found = None
        for p in self.percepts:
            if p.label == label:
                found = p
        return found


@dataclass(frozen=True)
class ImaginedTrajectory:
    plan: ActionPlan
    frames: tuple[Observation, ...]
    corruption_log: tuple[tuple[int, int, str], ...] = ()  # (frame, object id, event)

    @property
    def n_frames(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class SceneGenConfig:
    n_objects: int = 8
    bounds: tuple[float, float, float, float] = (-5.0, -5.0, 5.0, 5.0)
    min_separation: float = 0.8
    vocabulary: tuple[str, ...] = DEFAULT_VOCABULARY
    colors: tuple[str, ...] = DEFAULT_COLORS
    max_tries: int = 200

    def __post_init__(self) -> None:
        if self.n_objects < 0:
            raise ValueError("n_objects must be >= 0")
        if self.min_separation <= 0:
            raise ValueError("min_separation must be positive")
        xmin, ymin, xmax, ymax = self.bounds
        if xmin >= xmax or ymin >= ymax:
            raise ValueError(f"degenerate bounds {self.bounds}")


def generate_scene(config: SceneGenConfig, seed: int) -> Scene:
    """Rejection-sample a scene satisfying the separation invariant.

    Deterministic in (config, seed).  Labels are unique; radii never
    exceed half the minimum separation, so discs cannot overlap.
    """
    if len(config.vocabulary) < config.n_objects:
        raise GenerationError(
            f"vocabulary of {len(config.vocabulary)} cannot label {config.n_objects} objects"
        )
    rng = derive_rng("scene", seed)
    labels = rng.sample(list(config.vocabulary), config.n_objects)
    xmin, ymin, xmax, ymax = config.bounds
    max_radius = min(0.4, config.min_separation / 2.0)
    placed: list[SceneObject] = []
    for idx in range(config.n_objects):
        radius = rng.uniform(0.08, max_radius)
        inset = radius + 0.05
        for attempt in range(config.max_tries):
            x = rng.uniform(xmin + inset, xmax - inset)
            y = rng.uniform(ymin + inset, ymax - inset)
            if all(
                math.hypot(x - o.position[0], y - o.position[1]) >= config.min_separation
                for o in placed
            ):
                break
        else:
            raise GenerationError(
                f"could not place object {idx} after {config.max_tries} tries (seed {seed})"
            )
        placed.append(
            SceneObject(
                id=idx,
                label=labels[idx],
                position=(x, y),
                radius=radius,
                facing=rng.randrange(0, 720) / 2.0,
                color=rng.choice(list(config.colors)),
            )
        )
    return Scene(objects=tuple(placed), bounds=config.bounds, seed=seed)


def _occluded(target: SceneObject, target_dist: float, target_bearing: float,
              others: list[tuple[SceneObject, float, float]]) -> bool:
    # Disc occlusion: a strictly nearer object whose angular half-width
    # covers the target's center bearing hides it.
    for obj, dist, bearing in others:
        if obj.id == target.id or dist >= target_dist:
            continue
        if dist <= 1e-12:
            return True
        half_width = math.degrees(math.asin(min(1.0, obj.radius / dist)))
        delta = abs(target_bearing - bearing)
        if delta > 180.0:
            delta = 360.0 - delta
        if delta <= half_width:
            return True
    return False


def render(scene: Scene, pose: Pose, sensor: Sensor) -> Observation:
    """Ground-truth egocentric observation from a pose."""
    measured: list[tuple[SceneObject, float, float]] = []
    for obj in scene.objects:
        dist = distance_to(pose, obj.position)
        if dist < 1e-12:
            continue  # standing on an object: it has no direction
        measured.append((obj, dist, bearing_to(pose, obj.position)))
    half_fov = sensor.fov / 2.0
    percepts = []
    for obj, dist, bearing in measured:
        if dist > sensor.range or abs(bearing) > half_fov:
            continue
        if sensor.occlusion_enabled and _occluded(obj, dist, bearing, measured):
            continue
        percepts.append(
            Percept(
                label=obj.label,
                color=obj.color,
                relative_bearing=bearing,
                distance=dist,
                source_id=obj.id,
            )
        )
    return Observation(viewpoint=pose, percepts=tuple(percepts))


def _corrupt_objects(
    scene: Scene, noise: NoiseModel, seed: int, frame_index: int
) -> tuple[list[SceneObject], set[int], list[tuple[int, int, str]]]:
    """Apply drop / label-swap / jitter per object, logging each event."""
    scene_labels = scene.labels()
    kept: list[SceneObject] = []
    corrupted: set[int] = set()
    log: list[tuple[int, int, str]] = []
    for obj in scene.objects:
        rng = derive_rng("corrupt", seed, frame_index, obj.id)
        if rng.random() < noise.p_drop:
            corrupted.add(obj.id)
            log.append((frame_index, obj.id, "drop"))
            continue
        if rng.random() < noise.p_label:
            alternatives = [lab for lab in scene_labels if lab != obj.label]
            if alternatives:
                kept.append(replace(obj, label=rng.choice(alternatives)))
                corrupted.add(obj.id)
                log.append((frame_index, obj.id, "label"))
                continue
        if noise.sigma_pos > 0.0:
            dx = rng.gauss(0.0, noise.sigma_pos)
            dy = rng.gauss(0.0, noise.sigma_pos)
            kept.append(replace(obj, position=(obj.position[0] + dx, obj.position[1] + dy)))
            corrupted.add(obj.id)
            log.append((frame_index, obj.id, "jitter"))
            continue
        kept.append(obj)
    return kept, corrupted, log


def _render_corrupted(scene: Scene, pose: Pose, sensor: Sensor, noise: NoiseModel,
                      seed: int, frame_index: int) -> tuple[Observation, list[tuple[int, int, str]]]:
    kept, corrupted, log = _corrupt_objects(scene, noise, seed, frame_index)
    # Jittered objects may leave the boundary; the shadow scene skips the
    # bounds check by widening it to the corrupted extent.
    if kept:
        xs = [o.position[0] for o in kept] + [scene.bounds[0], scene.bounds[2]]
        ys = [o.position[1] for o in kept] + [scene.bounds[1], scene.bounds[3]]
        bounds = (min(xs), min(ys), max(xs), max(ys))
    else:
        bounds = scene.bounds
    shadow = Scene(objects=tuple(kept), bounds=bounds, seed=scene.seed)
    clean = render(shadow, pose, sensor)
    percepts = tuple(
        replace(p, corrupted=True) if p.source_id in corrupted else p for p in clean.percepts
    )
    obs = Observation(
        viewpoint=pose,
        percepts=percepts,
        imagined=True,
        corrupted_ids=frozenset(corrupted),
    )
    return obs, log


def imagine(
    scene: Scene,
    start: Pose,
    plan: ActionPlan,
    noise: NoiseModel,
    seed: int,
    sensor: Sensor | None = None,
) -> ImaginedTrajectory:
    """Execute a plan through the world model.

    One imagined frame per plan entry, rendered at the corresponding
    ``simulate_plan`` pose after per-object corruption.  With a zero
    noise model the frames match the ground-truth renderer field for
    field (apart from the ``imagined`` flag).
    """
    sensor = sensor or Sensor()
    frames: list[Observation] = []
    log: list[tuple[int, int, str]] = []
    for k, pose in enumerate(simulate_plan(start, plan)):
        obs, frame_log = _render_corrupted(scene, pose, sensor, noise, seed, k)
        frames.append(obs)
        log.extend(frame_log)
    return ImaginedTrajectory(plan=plan, frames=tuple(frames), corruption_log=tuple(log))


@dataclass(frozen=True)
class WorldModel:
    """Bundles a sensor and a noise model behind the imagination calls."""

    sensor: Sensor = Sensor()
    noise: NoiseModel = NoiseModel()

    def observe(self, scene: Scene, pose: Pose) -> Observation:
        """Real (never corrupted) observation."""
        return render(scene, pose, self.sensor)

    def imagine(self, scene: Scene, start: Pose, plan: ActionPlan, seed: int) -> ImaginedTrajectory:
        return imagine(scene, start, plan, self.noise, seed, self.sensor)

    def imagine_frame(self, scene: Scene, pose: Pose, seed: int) -> ImaginedTrajectory:
        """Render a single imagined view at a pose (beam-search expansion)."""
        obs, log = _render_corrupted(scene, pose, self.sensor, self.noise, seed, 0)
        return ImaginedTrajectory(plan=ActionPlan(), frames=(obs,), corruption_log=tuple(log))


# --- serialization ----------------------------------------------------------

def scene_to_jsonable(scene: Scene) -> dict:
    return {
        "schema_version": 1,
        "seed": scene.seed,
        "bounds": list(scene.bounds),
        "objects": [
            {
                "id": o.id,
                "label": o.label,
                "position": list(o.position),
                "radius": o.radius,
                "facing": o.facing,
                "color": o.color,
            }
            for o in scene.objects
        ],
    }


def scene_from_jsonable(data: dict) -> Scene:
    return Scene(
        objects=tuple(
            SceneObject(
                id=o["id"],
                label=o["label"],
                position=tuple(o["position"]),
                radius=o["radius"],
                facing=o["facing"],
                color=o["color"],
            )
            for o in data["objects"]
        ),
        bounds=tuple(data["bounds"]),
        seed=data["seed"],
    )


def observation_to_jsonable(obs: Observation) -> dict:
    return {
        "schema_version": 1,
        "viewpoint": {"x": obs.viewpoint.x, "y": obs.viewpoint.y, "heading": obs.viewpoint.heading},
        "imagined": obs.imagined,
        "corrupted_ids": sorted(obs.corrupted_ids),
        "percepts": [
            {
                "label": p.label,
                "color": p.color,
                "relative_bearing": p.relative_bearing,
                "distance": p.distance,
                "source_id": p.source_id,
                "corrupted": p.corrupted,
            }
            for p in obs.percepts
        ],
    }


def observation_from_jsonable(data: dict) -> Observation:
    vp = data["viewpoint"]
    return Observation(
        viewpoint=Pose(vp["x"], vp["y"], vp["heading"]),
        percepts=tuple(
            Percept(
                label=p["label"],
                color=p["color"],
                relative_bearing=p["relative_bearing"],
                distance=p["distance"],
                source_id=p["source_id"],
                corrupted=p.get("corrupted", False),
            )
            for p in data["percepts"]
        ),
        imagined=data.get("imagined", False),
        corrupted_ids=frozenset(data.get("corrupted_ids", ())),
    )
