"""The adaptive imagination control loop and its comparison strategies.

``adaptive``: sample the policy M times, majority-vote the gate, render
one imagined trajectory per distinct proposed plan, keep only the
top-verified trajectory, answer.  ``always_on``: spatial beam search over
fixed branch actions, scoring single frames and answering from the top
keyframes — never consults the policy.  ``none``: answer from the start
frames.  ``gating_only``: adaptive with M=1 (no vote, no plan diversity,
no trajectory competition).

World-model call accounting: one call per rendered trajectory under the
adaptive path, one call per rendered frame under beam search (each beam
expansion is an independent render); total rendered frames are reported
separately in ``imagined_frames``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum

from .agents import AnswerDistribution, Decision, PolicySample
from .errors import BackendError
from .geometry import ActionEntry, ActionKind, ActionPlan, apply_entry, plan_to_jsonable, plan_from_jsonable
from .seeds import derive_seed
from .tasks import Episode, start_observations
from .world import ImaginedTrajectory, Observation, WorldModel


class StrategyKind(str, Enum):
    NONE = "none"
    ALWAYS_ON = "always_on"
    GATING_ONLY = "gating_only"
    ADAPTIVE = "adaptive"
    UPPER_BOUND = "upper_bound"


RUNNABLE_STRATEGIES = (
    StrategyKind.NONE,
    StrategyKind.ALWAYS_ON,
    StrategyKind.GATING_ONLY,
    StrategyKind.ADAPTIVE,
)

DEFAULT_BRANCH_ACTIONS = (
    ActionEntry(ActionKind.TURN_LEFT, 5),
    ActionEntry(ActionKind.TURN_RIGHT, 5),
    ActionEntry(ActionKind.MOVE_FORWARD, 4),
)


@dataclass(frozen=True)
class BeamConfig:
    """Spatial beam search shape for the always-on baseline."""

    branch_actions: tuple[ActionEntry, ...] = DEFAULT_BRANCH_ACTIONS
    width: int = 2
    depth: int = 3
    keyframe_top_k: int = 2

    def __post_init__(self) -> None:
        if self.width < 1 or self.depth < 1 or self.keyframe_top_k < 1:
            raise ValueError("beam width, depth and keyframe_top_k must be >= 1")
        if not self.branch_actions:
            raise ValueError("beam needs at least one branch action")

    @property
    def frames_per_episode(self) -> int:
        """Closed form: |A| * (1 + B * (D - 1))."""
        a = len(self.branch_actions)
        if self.depth == 1:
            return a
        return a * (1 + self.width * (self.depth - 1))


@dataclass(frozen=True)
class ControllerConfig:
    M: int = 5                  # policy samples per episode
    tie_rule: str = "skip"      # the only supported rule: ties gate to skip
    dedup_plans: bool = True
    beam: BeamConfig = BeamConfig()

    def __post_init__(self) -> None:
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if self.tie_rule != "skip":
            raise ValueError(f"unsupported tie rule {self.tie_rule!r}")


@dataclass(frozen=True)
class CostModel:
    """Deterministic pseudo-token proxy for model-call cost."""

    fixed_per_call: float = 50.0
    per_image: float = 256.0
    per_char: float = 0.25


@dataclass
class Budget:
    wm_calls: int = 0
    imagined_frames: int = 0
    pseudo_tokens: int = 0
    wall_time: float = 0.0


@dataclass(frozen=True)
class CallRecord:
    """One model invocation, reduced to what the cost model needs."""

    role: str
    n_images: int
    n_chars: int


@dataclass(frozen=True)
class TrajectoryRecord:
    plan: ActionPlan
    n_frames: int
    score: int
    wm_seed: int


@dataclass
class RunRecord:
    episode_id: str
    strategy: str
    samples: tuple[PolicySample, ...]
    vote: Decision
    trajectories: tuple[TrajectoryRecord, ...]
    selected_plan: ActionPlan | None
    answer: AnswerDistribution
    correct: bool
    budget: Budget
    seed: int
    calls: tuple[CallRecord, ...]
    fallback: bool = False
    controller_echo: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Backends:
    """Everything a strategy needs: the three model roles plus the world."""

    policy: object
    verifier: object
    answerer: object
    world: WorldModel


def gate(samples: list[PolicySample]) -> Decision:
    """Majority vote; only a strict call_wm majority invokes, ties skip."""
    if not samples:
        raise ValueError("gate needs at least one policy sample")
    calls = sum(1 for s in samples if s.decision is Decision.CALL_WM)
    return Decision.CALL_WM if calls * 2 > len(samples) else Decision.SKIP


def plan_pool(samples: list[PolicySample]) -> list[ActionPlan]:
    """Distinct nonempty plans from the call_wm samples, order-preserving."""
    callers = [s for s in samples if s.decision is Decision.CALL_WM]
    if not callers:
        raise ValueError("plan pool requested without any call_wm sample")
    pool: list[ActionPlan] = []
    for s in callers:
        if len(s.plan) == 0:
            continue
        if s.plan not in pool:
            pool.append(s.plan)
    return pool


def select_trajectory(scored: list[tuple[ImaginedTrajectory, int]]) -> int:
    """Argmax score; ties broken by fewer frames, then by lower index."""
    if not scored:
        raise ValueError("cannot select from an empty candidate list")
    return min(
        range(len(scored)),
        key=lambda i: (-scored[i][1], scored[i][0].n_frames, i),
    )


def account(record: RunRecord, cost_model: CostModel) -> Budget:
    """Recompute the pseudo-token budget from the record's call list."""
    tokens = 0.0
    for call in record.calls:
        tokens += (
            cost_model.fixed_per_call
            + cost_model.per_image * call.n_images
            + cost_model.per_char * call.n_chars
        )
    return Budget(
        wm_calls=record.budget.wm_calls,
        imagined_frames=record.budget.imagined_frames,
        pseudo_tokens=int(round(tokens)),
        wall_time=record.budget.wall_time,
    )


def _question_chars(episode: Episode) -> int:
    return len(episode.question_text) + sum(len(c) for c in episode.choices)


def _echo(config: ControllerConfig, strategy: StrategyKind) -> dict:
    return {
        "strategy": strategy.value,
        "M": config.M,
        "dedup_plans": config.dedup_plans,
        "beam": {
            "n_actions": len(config.beam.branch_actions),
            "width": config.beam.width,
            "depth": config.beam.depth,
            "keyframe_top_k": config.beam.keyframe_top_k,
        },
    }


def _finish(
    episode: Episode,
    strategy: StrategyKind,
    config: ControllerConfig,
    cost_model: CostModel,
    backends: Backends,
    seed: int,
    *,
    samples: tuple[PolicySample, ...],
    vote: Decision,
    trajectories: tuple[TrajectoryRecord, ...],
    selected_plan: ActionPlan | None,
    answer_frames: list[Observation],
    calls: list[CallRecord],
    budget: Budget,
    started: float,
) -> RunRecord:
    dist = backends.answerer.answer(episode, answer_frames, derive_seed(seed, "answer"))
    calls.append(CallRecord("answer", len(answer_frames), _question_chars(episode)))
    record = RunRecord(
        episode_id=episode.id,
        strategy=strategy.value,
        samples=samples,
        vote=vote,
        trajectories=trajectories,
        selected_plan=selected_plan,
        answer=dist,
        correct=dist.argmax == episode.truth_index,
        budget=budget,
        seed=seed,
        calls=tuple(calls),
        controller_echo=_echo(config, strategy),
    )
    record.budget = account(record, cost_model)
    record.budget.wall_time = time.perf_counter() - started
    return record


def _fallback_record(
    episode: Episode,
    strategy: StrategyKind,
    config: ControllerConfig,
    backends: Backends,
    seed: int,
    started: float,
) -> RunRecord:
    """Backend outage: fall back to the no-imagination path, flagged.

    Answering from the start frames is attempted first; if the answer
    backend is the broken one, a uniform answer is recorded instead.
    """
    calls: list[CallRecord] = []
    try:
        start = start_observations(episode, backends.world.sensor)
        dist = backends.answerer.answer(episode, start, derive_seed(seed, "answer"))
        calls.append(CallRecord("answer", len(start), _question_chars(episode)))
    except BackendError:
        dist = AnswerDistribution.uniform(len(episode.choices))
    return RunRecord(
        episode_id=episode.id,
        strategy=strategy.value,
        samples=(),
        vote=Decision.SKIP,
        trajectories=(),
        selected_plan=None,
        answer=dist,
        correct=dist.argmax == episode.truth_index,
        budget=Budget(wall_time=time.perf_counter() - started),
        seed=seed,
        calls=tuple(calls),
        fallback=True,
        controller_echo=_echo(config, strategy),
    )


def run_none(
    episode: Episode,
    config: ControllerConfig,
    backends: Backends,
    seed: int,
    cost_model: CostModel = CostModel(),
) -> RunRecord:
    """Answer directly from the start frames; zero world-model budget."""
    started = time.perf_counter()
    start = start_observations(episode, backends.world.sensor)
    try:
        return _finish(
            episode, StrategyKind.NONE, config, cost_model, backends, seed,
            samples=(), vote=Decision.SKIP, trajectories=(), selected_plan=None,
            answer_frames=start, calls=[], budget=Budget(), started=started,
        )
    except BackendError:
        return _fallback_record(episode, StrategyKind.NONE, config, backends, seed, started)


def _run_gated(
    episode: Episode,
    strategy: StrategyKind,
    config: ControllerConfig,
    backends: Backends,
    seed: int,
    cost_model: CostModel,
    m_samples: int,
) -> RunRecord:
    started = time.perf_counter()
    start = start_observations(episode, backends.world.sensor)
    calls: list[CallRecord] = []
    try:
        samples = tuple(
            backends.policy.sample(episode, start, derive_seed(seed, "policy", i))
            for i in range(m_samples)
        )
        calls.extend(
            CallRecord("policy", len(start), _question_chars(episode)) for _ in samples
        )
        vote = gate(list(samples))
        budget = Budget()
        if vote is Decision.SKIP:
            return _finish(
                episode, strategy, config, cost_model, backends, seed,
                samples=samples, vote=vote, trajectories=(), selected_plan=None,
                answer_frames=start, calls=calls, budget=budget, started=started,
            )
        if config.dedup_plans:
            pool = plan_pool(list(samples))
        else:
            pool = [s.plan for s in samples if s.decision is Decision.CALL_WM and len(s.plan)]
        if not pool:
            # A call_wm vote with no usable plan falls back to direct answering.
            return _finish(
                episode, strategy, config, cost_model, backends, seed,
                samples=samples, vote=vote, trajectories=(), selected_plan=None,
                answer_frames=start, calls=calls, budget=budget, started=started,
            )
        scored: list[tuple[ImaginedTrajectory, int]] = []
        records: list[TrajectoryRecord] = []
        for k, plan in enumerate(pool):
            wm_seed = derive_seed(seed, "wm", k)
            traj = backends.world.imagine(episode.scene, episode.start_pose, plan, wm_seed)
            budget.wm_calls += 1
            budget.imagined_frames += traj.n_frames
            score = backends.verifier.score(
                episode, start, traj, derive_seed(seed, "verify", k)
            )
            calls.append(
                CallRecord("verify", len(start) + traj.n_frames, len(episode.question_text))
            )
            scored.append((traj, score))
            records.append(TrajectoryRecord(plan, traj.n_frames, score, wm_seed))
        best = select_trajectory(scored)
        selected = scored[best][0]
        return _finish(
            episode, strategy, config, cost_model, backends, seed,
            samples=samples, vote=vote, trajectories=tuple(records),
            selected_plan=selected.plan,
            answer_frames=start + list(selected.frames),
            calls=calls, budget=budget, started=started,
        )
    except BackendError:
        return _fallback_record(episode, strategy, config, backends, seed, started)


def run_adaptive(
    episode: Episode,
    config: ControllerConfig,
    backends: Backends,
    seed: int,
    cost_model: CostModel = CostModel(),
) -> RunRecord:
    return _run_gated(
        episode, StrategyKind.ADAPTIVE, config, backends, seed, cost_model, config.M
    )


def run_gating_only(
    episode: Episode,
    config: ControllerConfig,
    backends: Backends,
    seed: int,
    cost_model: CostModel = CostModel(),
) -> RunRecord:
    """Adaptive with a single policy sample: gate without action scaling."""
    return _run_gated(
        episode, StrategyKind.GATING_ONLY, config, backends, seed, cost_model, 1
    )


def _beam_frames(
    episode: Episode,
    config: BeamConfig,
    backends: Backends,
    seed: int,
    start: list[Observation],
    calls: list[CallRecord],
    budget: Budget,
    max_frames: int | None = None,
) -> tuple[list[tuple[int, int, ImaginedTrajectory]], list[Observation]]:
    """Expand the spatial beam, scoring every rendered frame.

    Returns (scored expansions as (score, order, 1-frame trajectory),
    rendered frames in render order).  ``max_frames`` truncates the
    schedule after that many renders (used by the forced-view curve).
    """
    scored: list[tuple[int, int, ImaginedTrajectory]] = []
    rendered: list[Observation] = []
    frontier = [episode.start_pose]
    order = 0
    for depth in range(1, config.depth + 1):
        expansions: list[tuple[int, int, ImaginedTrajectory]] = []  # score, order, traj
        poses = []  # (order, pose) for beam continuation
        for b_idx, pose in enumerate(frontier):
            for a_idx, action in enumerate(config.branch_actions):
                if max_frames is not None and order >= max_frames:
                    break
                new_pose = apply_entry(pose, action)
                traj = backends.world.imagine_frame(
                    episode.scene, new_pose, derive_seed(seed, "beam", depth, b_idx, a_idx)
                )
                traj = replace(traj, plan=ActionPlan((action,)))
                budget.wm_calls += 1
                budget.imagined_frames += 1
                score = backends.verifier.score(
                    episode, start, traj,
                    derive_seed(seed, "beam-verify", depth, b_idx, a_idx),
                )
                calls.append(CallRecord("verify", len(start) + 1, len(episode.question_text)))
                expansions.append((score, order, traj))
                poses.append((order, new_pose))
                rendered.append(traj.frames[0])
                order += 1
        scored.extend(expansions)
        if max_frames is not None and order >= max_frames:
            break
        ranked = sorted(expansions, key=lambda t: (-t[0], t[1]))[: config.width]
        pose_by_order = dict(poses)
        frontier = [pose_by_order[o] for _, o, _ in ranked]
    return scored, rendered


def run_always_on(
    episode: Episode,
    config: ControllerConfig,
    backends: Backends,
    seed: int,
    cost_model: CostModel = CostModel(),
) -> RunRecord:
    """Beam-search imagination for every episode; never consults the policy."""
    started = time.perf_counter()
    start = start_observations(episode, backends.world.sensor)
    calls: list[CallRecord] = []
    budget = Budget()
    try:
        scored, _ = _beam_frames(episode, config.beam, backends, seed, start, calls, budget)
        top = sorted(scored, key=lambda t: (-t[0], t[1]))[: config.beam.keyframe_top_k]
        keyframes = [traj.frames[0] for _, _, traj in top]
        records = tuple(
            TrajectoryRecord(traj.plan, 1, score, 0) for score, _, traj in scored
        )
        return _finish(
            episode, StrategyKind.ALWAYS_ON, config, cost_model, backends, seed,
            samples=(), vote=Decision.CALL_WM, trajectories=records,
            selected_plan=None, answer_frames=start + keyframes,
            calls=calls, budget=budget, started=started,
        )
    except BackendError:
        return _fallback_record(episode, StrategyKind.ALWAYS_ON, config, backends, seed, started)


def run_forced(
    episode: Episode,
    n_frames: int,
    config: ControllerConfig,
    backends: Backends,
    seed: int,
    cost_model: CostModel = CostModel(),
) -> RunRecord:
    """Fixed-imagination baseline: render exactly ``n_frames`` frames
    (a prefix of the beam schedule) and answer from all of them."""
    started = time.perf_counter()
    start = start_observations(episode, backends.world.sensor)
    calls: list[CallRecord] = []
    budget = Budget()
    try:
        if n_frames == 0:
            return _finish(
                episode, StrategyKind.NONE, config, cost_model, backends, seed,
                samples=(), vote=Decision.SKIP, trajectories=(), selected_plan=None,
                answer_frames=start, calls=calls, budget=budget, started=started,
            )
        deep = replace(config.beam, depth=max(config.beam.depth, n_frames))
        scored, rendered = _beam_frames(
            episode, deep, backends, seed, start, calls, budget, max_frames=n_frames
        )
        records = tuple(TrajectoryRecord(t.plan, 1, s, 0) for s, _, t in scored)
        return _finish(
            episode, StrategyKind.ALWAYS_ON, config, cost_model, backends, seed,
            samples=(), vote=Decision.CALL_WM, trajectories=records,
            selected_plan=None, answer_frames=start + rendered,
            calls=calls, budget=budget, started=started,
        )
    except BackendError:
        return _fallback_record(episode, StrategyKind.ALWAYS_ON, config, backends, seed, started)


def run_strategy(
    strategy: StrategyKind,
    episode: Episode,
    config: ControllerConfig,
    backends: Backends,
    seed: int,
    cost_model: CostModel = CostModel(),
) -> RunRecord:
    if strategy is StrategyKind.NONE:
        return run_none(episode, config, backends, seed, cost_model)
    if strategy is StrategyKind.ALWAYS_ON:
        return run_always_on(episode, config, backends, seed, cost_model)
    if strategy is StrategyKind.GATING_ONLY:
        return run_gating_only(episode, config, backends, seed, cost_model)
    if strategy is StrategyKind.ADAPTIVE:
        return run_adaptive(episode, config, backends, seed, cost_model)
    raise ValueError(f"strategy {strategy} is not directly runnable")


def upper_bound(
    records_none: list[RunRecord], records_imagination: list[RunRecord]
) -> tuple[float, dict[str, bool]]:
    """Per-episode union of baseline and imagination correctness.

    The ceiling of any gating policy: an episode counts as solvable if
    either arm solved it.
    """
    by_id_none = {r.episode_id: r for r in records_none}
    by_id_imag = {r.episode_id: r for r in records_imagination}
    if set(by_id_none) != set(by_id_imag):
        raise ValueError("upper bound needs records aligned by episode_id")
    labels = {
        eid: by_id_none[eid].correct or by_id_imag[eid].correct for eid in sorted(by_id_none)
    }
    accuracy = sum(labels.values()) / len(labels) if labels else 0.0
    return accuracy, labels


# --- serialization ----------------------------------------------------------


def record_to_jsonable(record: RunRecord) -> dict:
    return {
        "schema_version": 1,
        "episode_id": record.episode_id,
        "strategy": record.strategy,
        "seed": record.seed,
        "vote": record.vote.value,
        "fallback": record.fallback,
        "samples": [
            {
                "decision": s.decision.value,
                "reason": s.reason,
                "actions": plan_to_jsonable(s.plan),
            }
            for s in record.samples
        ],
        "trajectories": [
            {
                "plan": plan_to_jsonable(t.plan),
                "n_frames": t.n_frames,
                "score": t.score,
                "wm_seed": t.wm_seed,
            }
            for t in record.trajectories
        ],
        "selected_plan": (
            plan_to_jsonable(record.selected_plan) if record.selected_plan is not None else None
        ),
        "answer": {"scores": list(record.answer.scores), "argmax": record.answer.argmax},
        "correct": record.correct,
        "budget": {
            "wm_calls": record.budget.wm_calls,
            "imagined_frames": record.budget.imagined_frames,
            "pseudo_tokens": record.budget.pseudo_tokens,
        },
        "calls": [
            {"role": c.role, "n_images": c.n_images, "n_chars": c.n_chars}
            for c in record.calls
        ],
        "controller": record.controller_echo,
    }


def record_from_jsonable(data: dict) -> RunRecord:
    return RunRecord(
        episode_id=data["episode_id"],
        strategy=data["strategy"],
        samples=tuple(
            PolicySample(Decision(s["decision"]), plan_from_jsonable(s["actions"]), s["reason"])
            for s in data["samples"]
        ),
        vote=Decision(data["vote"]),
        trajectories=tuple(
            TrajectoryRecord(
                plan_from_jsonable(t["plan"]), t["n_frames"], t["score"], t["wm_seed"]
            )
            for t in data["trajectories"]
        ),
        selected_plan=(
            plan_from_jsonable(data["selected_plan"])
            if data.get("selected_plan") is not None
            else None
        ),
        answer=AnswerDistribution(tuple(data["answer"]["scores"])),
        correct=data["correct"],
        budget=Budget(
            wm_calls=data["budget"]["wm_calls"],
            imagined_frames=data["budget"]["imagined_frames"],
            pseudo_tokens=data["budget"]["pseudo_tokens"],
        ),
        seed=data["seed"],
        calls=tuple(
            CallRecord(c["role"], c["n_images"], c["n_chars"]) for c in data["calls"]
        ),
        fallback=data.get("fallback", False),
        controller_echo=data.get("controller", {}),
    )
