"""The three model roles: gating policy, trajectory verifier, answerer.

Each role has a calibrated synthetic implementation (pure functions of a
seed, with knobs for how often the gate is right, how often plans are
clean, and how competent the answerer is) and a remote adapter speaking
a JSON-over-HTTP protocol.  The remote wire formats are pinned here:

* ``POST /policy``  -> ``{"decision": "skip"|"call_wm", "reason": <str>,
  "actions": [{"type": ..., "value": <int>}]}``
* ``POST /verify``  -> a bare integer in ``0..9`` as the response body
* ``POST /answer``  -> ``{"scores": [...]}``
"""

from __future__ import annotations

import json
import math
import re
import threading
from dataclasses import dataclass
from enum import Enum

from .errors import (
    AnswerParseError,
    BackendError,
    DecisionDomainError,
    JsonSyntaxError,
    ParseError,
    SchemaFieldError,
    SkipWithActionsError,
    VerifierParseError,
)
from .geometry import (
    ActionEntry,
    ActionKind,
    ActionPlan,
    MAX_ENTRY_VALUE,
    Pose,
    plan_from_jsonable,
    plan_to_jsonable,
    signed_angle,
)
from .seeds import derive_rng
from .tasks import Episode, evaluate_from_percepts, sufficient
from .world import ImaginedTrajectory, Observation, observation_to_jsonable


class Decision(str, Enum):
    SKIP = "skip"
    CALL_WM = "call_wm"


@dataclass(frozen=True)
class PolicySample:
    """One gating decision with its (possibly empty) action plan."""

    decision: Decision
    plan: ActionPlan
    reason: str = ""

    def __post_init__(self) -> None:
        if self.decision is Decision.SKIP and len(self.plan) != 0:
            raise SkipWithActionsError("skip decision must carry an empty plan")


@dataclass(frozen=True)
class AnswerDistribution:
    """Normalized scores over the answer choices."""

    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if not self.scores:
            raise ValueError("empty score vector")
        if any(s < 0 for s in self.scores):
            raise ValueError("scores must be non-negative")
        total = sum(self.scores)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"scores must sum to 1, got {total}")

    @property
    def argmax(self) -> int:
        """Highest-scoring index; ties go to the lowest index."""
        best = 0
        for i, s in enumerate(self.scores):
            if s > self.scores[best]:
                best = i
        return best

    @classmethod
    def uniform(cls, k: int) -> "AnswerDistribution":
        return cls(tuple(1.0 / k for _ in range(k)))

    @classmethod
    def one_hot(cls, index: int, k: int) -> "AnswerDistribution":
        return cls(tuple(1.0 if i == index else 0.0 for i in range(k)))


@dataclass(frozen=True)
class SyntheticPolicyConfig:
    q_gate: float = 0.9      # probability the sufficiency call is right
    q_plan: float = 0.9      # probability the plan is left unperturbed
    sample_jitter: float = 0.3  # chance a sample's plan is nudged by one unit

    def __post_init__(self) -> None:
        for name in ("q_gate", "q_plan", "sample_jitter"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class SyntheticAnswerConfig:
    competence: float = 0.8

    def __post_init__(self) -> None:
        if not (0.0 <= self.competence <= 1.0):
            raise ValueError(f"competence must be in [0, 1], got {self.competence}")


@dataclass(frozen=True)
class SyntheticVerifierConfig:
    noise_amplitude: int = 1

    def __post_init__(self) -> None:
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")


def _discretize_to_viewpoint(start: Pose, target: Pose) -> tuple[ActionEntry, ...]:
    """Greedy plan toward a viewpoint: turn, walk, turn — monotone turns.

    Headings land within half a turn step (4.5 degrees) of the target
    heading and travel within half a forward step of the distance.
    """
    entries: list[ActionEntry] = []
    dx, dy = target.x - start.x, target.y - start.y
    dist = math.hypot(dx, dy)
    heading_now = start.heading
    if dist > 0.125:
        face = math.degrees(math.atan2(dy, dx))
        turn1 = signed_angle(face - heading_now)
        k1 = round(abs(turn1) / 9.0)
        if k1 > 0:
            kind = ActionKind.TURN_LEFT if turn1 > 0 else ActionKind.TURN_RIGHT
            k1 = min(k1, MAX_ENTRY_VALUE)
            entries.append(ActionEntry(kind, k1))
            heading_now += 9.0 * k1 * (1 if turn1 > 0 else -1)
        steps = min(MAX_ENTRY_VALUE, max(1, round(dist / 0.25)))
        entries.append(ActionEntry(ActionKind.MOVE_FORWARD, steps))
    turn2 = signed_angle(target.heading - heading_now)
    k2 = round(abs(turn2) / 9.0)
    if k2 > 0:
        kind = ActionKind.TURN_LEFT if turn2 > 0 else ActionKind.TURN_RIGHT
        entries.append(ActionEntry(kind, min(k2, MAX_ENTRY_VALUE)))
    return tuple(entries)


def _goal_directed_plan(episode: Episode, rng) -> ActionPlan:
    ev = episode.evidence
    if ev.reference_plan is not None:
        return ev.reference_plan
    if ev.required_viewpoints:
        return ActionPlan(_discretize_to_viewpoint(episode.start_pose,
                                                   ev.required_viewpoints[0].pose))
    # Nothing is actually missing (a wrongly-flipped gate): look around.
    kind = ActionKind.TURN_LEFT if rng.random() < 0.5 else ActionKind.TURN_RIGHT
    return ActionPlan((ActionEntry(kind, 10),))


def _flip_turns(plan: ActionPlan) -> ActionPlan:
    flip = {ActionKind.TURN_LEFT: ActionKind.TURN_RIGHT,
            ActionKind.TURN_RIGHT: ActionKind.TURN_LEFT}
    return ActionPlan(tuple(
        ActionEntry(flip.get(e.kind, e.kind), e.value) for e in plan.entries
    ))


def _truncate(plan: ActionPlan) -> ActionPlan:
    if len(plan.entries) > 1:
        return ActionPlan(plan.entries[:-1])
    if plan.entries:
        e = plan.entries[0]
        return ActionPlan((ActionEntry(e.kind, max(1, e.value // 2)),))
    return plan


def _jitter(plan: ActionPlan, rng) -> ActionPlan:
    if not plan.entries:
        return plan
    idx = rng.randrange(len(plan.entries))
    e = plan.entries[idx]
    value = min(MAX_ENTRY_VALUE, max(1, e.value + rng.choice((-1, 1))))
    entries = list(plan.entries)
    entries[idx] = ActionEntry(e.kind, value)
    return ActionPlan(tuple(entries))


def policy_sample(
    episode: Episode,
    start_frames: list[Observation],
    config: SyntheticPolicyConfig,
    seed: int,
) -> PolicySample:
    """One synthetic gating sample.

    Judges evidence sufficiency correctly with probability ``q_gate``;
    when it calls the world model it derives a goal-directed plan from
    the episode's missing evidence, perturbed with probability
    ``1 - q_plan`` and nudged with probability ``sample_jitter``.
    """
    rng = derive_rng("policy", seed)
    enough = sufficient(episode, start_frames)
    correct_gate = rng.random() < config.q_gate
    wants_skip = enough if correct_gate else not enough
    if wants_skip:
        reason = "evidence sufficient" if enough else "judged sufficient"
        return PolicySample(Decision.SKIP, ActionPlan(), reason)
    plan = _goal_directed_plan(episode, rng)
    if len(plan) and rng.random() >= config.q_plan:
        plan = _flip_turns(plan) if rng.random() < 0.5 else _truncate(plan)
    if len(plan) and config.sample_jitter > 0 and rng.random() < config.sample_jitter:
        plan = _jitter(plan, rng)
    reason = "missing viewpoint" if not enough else "judged insufficient"
    return PolicySample(Decision.CALL_WM, plan, reason)


def verify(
    episode: Episode,
    start_frames: list[Observation],
    trajectory: ImaginedTrajectory,
    config: SyntheticVerifierConfig,
    seed: int,
) -> int:
    """Score a whole imagined trajectory on the 0..9 scale.

    score = round(9 * max(0, revealed - penalty)) where ``revealed`` is
    the fraction of evidence units missing at start that the trajectory
    satisfies, and ``penalty`` is half the corrupted fraction of the
    trajectory's task-relevant percepts.  Integer noise of the
    configured amplitude is added and the result clipped to [0, 9].
    """
    ev = episode.evidence
    start_labels: set[str] = set()
    for f in start_frames:
        start_labels.update(f.labels())
    traj_labels: set[str] = set()
    for f in trajectory.frames:
        traj_labels.update(f.labels())

    missing = 0
    newly = 0
    for label in sorted(ev.required_labels):
        if label not in start_labels:
            missing += 1
            if label in traj_labels:
                newly += 1
    for spec in ev.required_viewpoints:
        if not any(spec.satisfied_by(f.viewpoint) for f in start_frames):
            missing += 1
            if any(spec.satisfied_by(f.viewpoint) for f in trajectory.frames):
                newly += 1
    revealed = (newly / missing) if missing else 0.0

    relevant = [
        p for f in trajectory.frames for p in f.percepts if p.label in ev.required_labels
    ]
    corrupted = sum(1 for p in relevant if p.corrupted)
    penalty = 0.5 * corrupted / len(relevant) if relevant else 0.0

    base = math.floor(9.0 * max(0.0, revealed - penalty) + 0.5)
    noise = 0
    if config.noise_amplitude > 0:
        rng = derive_rng("verify", seed)
        noise = rng.randint(-config.noise_amplitude, config.noise_amplitude)
    return max(0, min(9, base + noise))


def answer(
    episode: Episode,
    frames: list[Observation],
    config: SyntheticAnswerConfig,
    seed: int,
) -> AnswerDistribution:
    """Evidence-bounded synthetic answerer.

    If the frames resolve the episode's evidence, the category predicate
    is evaluated on the resolved (possibly corrupted) percepts with
    probability ``competence`` and all mass goes to that choice;
    otherwise the distribution is uniform.
    """
    if not frames:
        raise ValueError("answering requires at least one frame")
    k = len(episode.choices)
    choice = evaluate_from_percepts(episode, frames)
    if choice is None:
        return AnswerDistribution.uniform(k)
    rng = derive_rng("answer", seed)
    if rng.random() < config.competence:
        return AnswerDistribution.one_hot(choice, k)
    return AnswerDistribution.uniform(k)


# --- wire parsing -----------------------------------------------------------

_POLICY_FIELDS = {"decision", "reason", "actions"}


def parse_policy_output(text: str, strict: bool = True) -> PolicySample:
    """Parse the policy wire JSON into a validated sample."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise JsonSyntaxError(f"policy output is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaFieldError("policy output must be a JSON object")
    missing = _POLICY_FIELDS - set(data)
    if missing:
        raise SchemaFieldError(f"policy output missing fields {sorted(missing)}")
    extra = set(data) - _POLICY_FIELDS
    if strict and extra:
        raise SchemaFieldError(f"policy output has unknown fields {sorted(extra)}")
    decision_raw = data["decision"]
    if decision_raw not in (Decision.SKIP.value, Decision.CALL_WM.value):
        raise DecisionDomainError(f"unknown decision {decision_raw!r}")
    if not isinstance(data["reason"], str):
        raise SchemaFieldError("policy reason must be a string")
    plan = plan_from_jsonable(data["actions"])
    decision = Decision(decision_raw)
    if decision is Decision.SKIP and len(plan):
        raise SkipWithActionsError("skip decision carries a nonempty action list")
    return PolicySample(decision, plan, data["reason"])


def policy_sample_to_json(sample: PolicySample) -> str:
    """Canonical wire form; always re-parseable by ``parse_policy_output``."""
    return json.dumps(
        {
            "decision": sample.decision.value,
            "reason": sample.reason,
            "actions": plan_to_jsonable(sample.plan),
        }
    )


_INT_TOKEN = re.compile(r"[+-]?\d+")


def parse_verifier_output(text: str) -> int:
    """Parse a bare integer score in [0, 9]; anything else is an error."""
    token = text.strip()
    if not _INT_TOKEN.fullmatch(token):
        raise VerifierParseError(f"verifier output is not a bare integer: {text!r}")
    value = int(token)
    if not (0 <= value <= 9):
        raise VerifierParseError(f"verifier score {value} outside [0, 9]")
    return value


# --- backends ----------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticPolicy:
    config: SyntheticPolicyConfig = SyntheticPolicyConfig()

    def sample(self, episode: Episode, start_frames: list[Observation], seed: int) -> PolicySample:
        return policy_sample(episode, start_frames, self.config, seed)


@dataclass(frozen=True)
class SyntheticVerifier:
    config: SyntheticVerifierConfig = SyntheticVerifierConfig()

    def score(self, episode: Episode, start_frames: list[Observation],
              trajectory: ImaginedTrajectory, seed: int) -> int:
        return verify(episode, start_frames, trajectory, self.config, seed)


@dataclass(frozen=True)
class SyntheticAnswerer:
    config: SyntheticAnswerConfig = SyntheticAnswerConfig()

    def answer(self, episode: Episode, frames: list[Observation], seed: int) -> AnswerDistribution:
        return answer(episode, frames, self.config, seed)


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str
    timeout: float = 30.0
    max_concurrency: int = 4


class _RemoteBase:
    """Shared HTTP plumbing: bounded concurrency, one retry, no session reuse."""

    def __init__(self, config: RemoteConfig):
        self.config = config
        self._semaphore = threading.Semaphore(config.max_concurrency)

    def _post(self, path: str, payload: dict) -> str:
        import requests

        url = self.config.endpoint.rstrip("/") + path
        with self._semaphore:
            try:
                resp = requests.post(url, json=payload, timeout=self.config.timeout)
            except requests.RequestException as exc:
                raise BackendError(f"POST {path} failed: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"POST {path} returned HTTP {resp.status_code}")
        return resp.text

    @staticmethod
    def _frames_payload(frames: list[Observation]) -> list[dict]:
        return [observation_to_jsonable(f) for f in frames]

    def _episode_payload(self, episode: Episode, frames: list[Observation]) -> dict:
        return {
            "episode_id": episode.id,
            "question": episode.question_text,
            "choices": list(episode.choices),
            "frames": self._frames_payload(frames),
        }


class RemotePolicy(_RemoteBase):
    """Policy adapter; falls back to skip after one retry on a bad response."""

    def sample(self, episode: Episode, start_frames: list[Observation], seed: int) -> PolicySample:
        payload = self._episode_payload(episode, start_frames)
        payload["sample_seed"] = seed
        for attempt in range(2):
            text = self._post("/policy", payload)
            try:
                return parse_policy_output(text)
            except ParseError:
                if attempt == 1:
                    return PolicySample(Decision.SKIP, ActionPlan(), "unparseable policy output")
        raise AssertionError("unreachable")


class RemoteVerifier(_RemoteBase):
    def score(self, episode: Episode, start_frames: list[Observation],
              trajectory: ImaginedTrajectory, seed: int) -> int:
        payload = self._episode_payload(episode, start_frames)
        payload["trajectory"] = {
            "plan": plan_to_jsonable(trajectory.plan),
            "frames": self._frames_payload(list(trajectory.frames)),
        }
        payload["sample_seed"] = seed
        last: ParseError | None = None
        for _ in range(2):
            text = self._post("/verify", payload)
            try:
                return parse_verifier_output(text)
            except ParseError as exc:
                last = exc
        raise BackendError(f"verifier response unusable after retry: {last}")


class RemoteAnswerer(_RemoteBase):
    def answer(self, episode: Episode, frames: list[Observation], seed: int) -> AnswerDistribution:
        payload = self._episode_payload(episode, frames)
        payload["sample_seed"] = seed
        last: Exception | None = None
        for _ in range(2):
            text = self._post("/answer", payload)
            try:
                return self._parse_scores(text, len(episode.choices))
            except AnswerParseError as exc:
                last = exc
        raise BackendError(f"answer response unusable after retry: {last}")

    @staticmethod
    def _parse_scores(text: str, k: int) -> AnswerDistribution:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise AnswerParseError(f"answer output is not valid JSON: {exc}") from exc
        if not isinstance(data, dict) or "scores" not in data:
            raise AnswerParseError("answer output must be an object with a 'scores' list")
        scores = data["scores"]
        if not isinstance(scores, list) or len(scores) != k:
            raise AnswerParseError(f"expected {k} scores, got {scores!r}")
        try:
            values = [float(s) for s in scores]
        except (TypeError, ValueError) as exc:
            raise AnswerParseError(f"scores must be numbers: {scores!r}") from exc
        if any(v < 0 for v in values):
            raise AnswerParseError("scores must be non-negative")
        total = sum(values)
        if not math.isfinite(total) or abs(total - 1.0) > 1e-6:
            raise AnswerParseError(f"scores must sum to 1, got {total}")
        return AnswerDistribution(tuple(v / total for v in values))
