"""Graph navigation with optional imagination of candidate-node views.

The environment is an undirected geometric graph whose nodes carry
landmark objects.  An episode is an ordered landmark instruction ending
at the goal.  At each step the agent may invoke the world model to
render the view from each candidate node (facing along the connecting
edge) and moves toward the first candidate whose augmented view shows
the next unreached landmark; it stops when its current view contains
the final landmark.  Metrics follow the standard navigation suite:
navigation error, oracle success rate, success rate, and success
weighted by path length (against an exact shortest-path oracle).
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

from .errors import GenerationError
from .geometry import Pose
from .seeds import derive_rng, derive_seed
from .world import Scene, SceneObject, Sensor, WorldModel, render

log = logging.getLogger(__name__)

NAV_SENSOR = Sensor(fov=360.0, range=2.0, occlusion_enabled=False)


@dataclass(frozen=True)
class NavGraph:
    """Nodes with positions, undirected edges, per-node landmark objects."""

    positions: dict[int, tuple[float, float]]
    edges: tuple[tuple[int, int], ...]
    landmarks: dict[int, tuple[SceneObject, ...]]

    def __post_init__(self) -> None:
        norm = tuple(sorted((min(a, b), max(a, b)) for a, b in self.edges))
        object.__setattr__(self, "edges", norm)
        for a, b in norm:
            if a not in self.positions or b not in self.positions:
                raise ValueError(f"edge ({a}, {b}) references an unknown node")
            if a == b:
                raise ValueError("self-loops are not allowed")

    def neighbors(self, node: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == node:
                out.append(b)
            elif b == node:
                out.append(a)
        return sorted(out)

    def edge_length(self, a: int, b: int) -> float:
        pa, pb = self.positions[a], self.positions[b]
        return math.hypot(pa[0] - pb[0], pa[1] - pb[1])

    def is_connected(self) -> bool:
        if not self.positions:
            return True
        seen = {next(iter(self.positions))}
        stack = list(seen)
        while stack:
            node = stack.pop()
            for nb in self.neighbors(node):
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.positions)

    def scene(self) -> Scene:
        objects = tuple(obj for node in sorted(self.landmarks) for obj in self.landmarks[node])
        xs = [p[0] for p in self.positions.values()] + [o.position[0] for o in objects]
        ys = [p[1] for p in self.positions.values()] + [o.position[1] for o in objects]
        pad = 1.0
        bounds = (min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad)
        return Scene(objects=objects, bounds=bounds, seed=0)

    def shortest_path_length(self, start: int, goal: int) -> float | None:
        """Exact Dijkstra distance, or None when the goal is unreachable."""
        dist = {start: 0.0}
        heap = [(0.0, start)]
        while heap:
            d, node = heapq.heappop(heap)
            if node == goal:
                return d
            if d > dist.get(node, math.inf):
                continue
            for nb in self.neighbors(node):
                nd = d + self.edge_length(node, nb)
                if nd < dist.get(nb, math.inf):
                    dist[nb] = nd
                    heapq.heappush(heap, (nd, nb))
        return None


@dataclass(frozen=True)
class NavEpisode:
    id: str
    graph: NavGraph
    start_node: int
    goal_node: int
    instruction: tuple[str, ...]
    max_steps: int = 15
    success_threshold: float = 3.0

    def __post_init__(self) -> None:
        if self.graph.shortest_path_length(self.start_node, self.goal_node) is None:
            raise ValueError(f"goal node {self.goal_node} unreachable from {self.start_node}")
        known = {o.label for objs in self.graph.landmarks.values() for o in objs}
        for label in self.instruction:
            if label not in known:
                raise ValueError(f"instruction landmark {label!r} not present in graph")


@dataclass
class NavRecord:
    episode_id: str
    visited: list[int]
    stopped: bool
    final_ne: float
    step_wm_calls: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class NavConfig:
    sensor: Sensor = NAV_SENSOR
    imagination: str = "adaptive"  # "adaptive" | "off"
    gate_accuracy: float = 1.0

    def __post_init__(self) -> None:
        if self.imagination not in ("adaptive", "off"):
            raise ValueError(f"imagination mode must be adaptive|off, got {self.imagination!r}")
        if not (0.0 <= self.gate_accuracy <= 1.0):
            raise ValueError("gate_accuracy must be in [0, 1]")


def _node_pose(graph: NavGraph, node: int, toward: int | None = None) -> Pose:
    x, y = graph.positions[node]
    heading = 0.0
    if toward is not None:
        tx, ty = graph.positions[toward]
        if (tx, ty) != (x, y):
            heading = math.degrees(math.atan2(ty - y, tx - x))
    return Pose(x, y, heading)


def _view_labels(scene: Scene, pose: Pose, sensor: Sensor) -> set[str]:
    return render(scene, pose, sensor).labels()


@dataclass
class NavState:
    episode: NavEpisode
    current: int
    visited: list[int]
    progress: int
    scene: Scene


def nav_step(state: NavState, config: NavConfig, world: WorldModel, seed: int) -> tuple[int | None, int]:
    """Choose the next node (or None to stop) plus the step's WM calls.

    Candidates are the current node's neighbors (unvisited preferred).
    When imagination is gated on, the world model renders a view at each
    candidate's pose facing along the connecting edge; a candidate
    scores when the next unreached landmark appears in its augmented
    view.  Ties and evidence-free steps fall back to the lowest-id
    unvisited neighbor.
    """
    episode = state.episode
    graph = episode.graph
    sensor = config.sensor
    current_view = _view_labels(state.scene, _node_pose(graph, state.current), sensor)
    if episode.instruction[-1] in current_view:
        return None, 0
    candidates = graph.neighbors(state.current)
    if not candidates:
        return None, 0
    next_landmark = (
        episode.instruction[state.progress]
        if state.progress < len(episode.instruction)
        else episode.instruction[-1]
    )
    wm_calls = 0
    scores: dict[int, int] = {c: 0 for c in candidates}
    invoke = False
    if config.imagination == "adaptive":
        needed = next_landmark not in current_view
        rng = derive_rng("nav-gate", seed)
        invoke = needed if rng.random() < config.gate_accuracy else not needed
    if invoke:
        for cand in candidates:
            pose = _node_pose(graph, cand, toward=state.current)
            # Imagined view at the candidate node, facing back along the edge.
            pose = Pose(pose.x, pose.y, pose.heading + 180.0)
            traj = world.imagine_frame(state.scene, pose, derive_seed(seed, "nav-wm", cand))
            wm_calls += 1
            augmented = current_view | traj.frames[0].labels()
            if next_landmark in augmented:
                scores[cand] = 1
    unvisited = [c for c in candidates if c not in state.visited]
    pool = unvisited if unvisited else candidates
    best = max(pool, key=lambda c: (scores[c], -c))  # ties fall to the lowest id
    return best, wm_calls


def run_nav(episode: NavEpisode, config: NavConfig, world: WorldModel, seed: int) -> NavRecord:
    """Iterate nav steps until stop or the step budget runs out."""
    scene = episode.graph.scene()
    sensor = config.sensor
    state = NavState(
        episode=episode, current=episode.start_node,
        visited=[episode.start_node], progress=0, scene=scene,
    )
    step_calls: list[int] = []
    stopped = False

    def advance_progress() -> None:
        view = _view_labels(scene, _node_pose(episode.graph, state.current), sensor)
        while state.progress < len(episode.instruction) and \
                episode.instruction[state.progress] in view:
            state.progress += 1

    advance_progress()
    for step in range(episode.max_steps):
        action, calls = nav_step(state, config, world, derive_seed(seed, "nav-step", step))
        step_calls.append(calls)
        if action is None:
            stopped = True
            break
        state.current = action
        state.visited.append(action)
        advance_progress()
    goal_pos = episode.graph.positions[episode.goal_node]
    final_pos = episode.graph.positions[state.current]
    final_ne = math.hypot(final_pos[0] - goal_pos[0], final_pos[1] - goal_pos[1])
    return NavRecord(
        episode_id=episode.id,
        visited=state.visited,
        stopped=stopped,
        final_ne=final_ne,
        step_wm_calls=step_calls,
    )


@dataclass(frozen=True)
class NavMetrics:
    ne: float
    osr: float
    sr: float
    spl: float
    per_episode: tuple[dict, ...]
    excluded: int = 0


def nav_metrics(records: list[NavRecord], episodes: list[NavEpisode]) -> NavMetrics:
    """NE / OSR / SR / SPL over aligned records and episodes.

    SPL weights per-episode success by (shortest / max(traversed,
    shortest)); unreachable goals are excluded with a warning.  Rates
    are fractions in [0, 1].
    """
    by_id = {e.id: e for e in episodes}
    rows: list[dict] = []
    excluded = 0
    for record in records:
        episode = by_id[record.episode_id]
        graph = episode.graph
        goal = graph.positions[episode.goal_node]
        shortest = graph.shortest_path_length(episode.start_node, episode.goal_node)
        if shortest is None:
            log.warning("nav episode %s: goal unreachable, excluded", episode.id)
            excluded += 1
            continue
        traversed = sum(
            graph.edge_length(a, b) for a, b in zip(record.visited, record.visited[1:])
        )
        ne = record.final_ne
        success = ne <= episode.success_threshold
        ever_close = any(
            math.hypot(graph.positions[n][0] - goal[0], graph.positions[n][1] - goal[1])
            <= episode.success_threshold
            for n in record.visited
        )
        if shortest == 0.0:
            spl = 1.0 if success else 0.0
        else:
            spl = (shortest / max(traversed, shortest)) if success else 0.0
        rows.append(
            {
                "episode_id": episode.id,
                "ne": ne,
                "success": success,
                "oracle_success": ever_close,
                "spl": spl,
                "shortest": shortest,
                "traversed": traversed,
                "wm_calls": sum(record.step_wm_calls),
            }
        )
    n = len(rows)
    if n == 0:
        return NavMetrics(0.0, 0.0, 0.0, 0.0, (), excluded)
    return NavMetrics(
        ne=sum(r["ne"] for r in rows) / n,
        osr=sum(r["oracle_success"] for r in rows) / n,
        sr=sum(r["success"] for r in rows) / n,
        spl=sum(r["spl"] for r in rows) / n,
        per_episode=tuple(rows),
        excluded=excluded,
    )


# --- suite generation ---------------------------------------------------------


@dataclass(frozen=True)
class NavGenConfig:
    rows: int = 4
    cols: int = 4
    spacing: float = 3.0
    extra_edges: float = 0.3     # fraction of non-tree grid edges kept
    landmark_offset: float = 0.5
    min_path_edges: int = 2
    max_steps: int = 15
    success_threshold: float = 3.0


def generate_nav_episode(config: NavGenConfig, seed: int, episode_id: str | None = None) -> NavEpisode:
    """One random connected grid-graph episode with landmark instruction."""
    rng = derive_rng("nav-episode", seed)
    n = config.rows * config.cols

    def node_id(r: int, c: int) -> int:
        return r * config.cols + c

    positions = {
        node_id(r, c): (c * config.spacing, r * config.spacing)
        for r in range(config.rows)
        for c in range(config.cols)
    }
    grid_edges = []
    for r in range(config.rows):
        for c in range(config.cols):
            if c + 1 < config.cols:
                grid_edges.append((node_id(r, c), node_id(r, c + 1)))
            if r + 1 < config.rows:
                grid_edges.append((node_id(r, c), node_id(r + 1, c)))
    # Spanning tree first (random order union-find), then a sprinkle of extras.
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    shuffled = list(grid_edges)
    rng.shuffle(shuffled)
    edges = []
    for a, b in shuffled:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            edges.append((a, b))
    rest = [e for e in shuffled if e not in edges]
    extras = rng.sample(rest, k=min(len(rest), int(len(rest) * config.extra_edges)))
    edges.extend(extras)

    if n > len(DEFAULT_NAV_VOCAB):
        raise GenerationError("nav vocabulary too small for this grid")
    labels = rng.sample(DEFAULT_NAV_VOCAB, n)
    landmarks = {}
    for node in range(n):
        ang = math.radians(rng.randrange(0, 360))
        x, y = positions[node]
        landmarks[node] = (
            SceneObject(
                id=node,
                label=labels[node],
                position=(
                    x + config.landmark_offset * math.cos(ang),
                    y + config.landmark_offset * math.sin(ang),
                ),
                radius=0.1,
                facing=0.0,
                color="gray",
            ),
        )
    graph = NavGraph(positions=positions, edges=tuple(edges), landmarks=landmarks)
    for _ in range(50):
        start, goal = rng.sample(range(n), 2)
        path = _shortest_path_nodes(graph, start, goal)
        if path is not None and len(path) - 1 >= config.min_path_edges \
                and len(path) - 1 <= config.max_steps - 1:
            instruction = tuple(labels[node] for node in path[1:])
            return NavEpisode(
                id=episode_id or f"nav-{seed}",
                graph=graph,
                start_node=start,
                goal_node=goal,
                instruction=instruction,
                max_steps=config.max_steps,
                success_threshold=config.success_threshold,
            )
    raise GenerationError(f"no suitable start/goal pair found (seed {seed})")


def _shortest_path_nodes(graph: NavGraph, start: int, goal: int) -> list[int] | None:
    dist = {start: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, start)]
    while heap:
        d, node = heapq.heappop(heap)
        if node == goal:
            path = [goal]
            while path[-1] != start:
                path.append(prev[path[-1]])
            return list(reversed(path))
        if d > dist.get(node, math.inf):
            continue
        for nb in graph.neighbors(node):
            nd = d + graph.edge_length(node, nb)
            if nd < dist.get(nb, math.inf):
                dist[nb] = nd
                prev[nb] = node
                heapq.heappush(heap, (nd, nb))
    return None


DEFAULT_NAV_VOCAB = [
    "fern", "kettle", "easel", "piano", "anvil", "globe", "bench", "crate",
    "barrel", "ladder", "bust", "clock", "torch", "chest", "hammock", "stove",
    "wheel", "urn", "trunk", "harp",
]
