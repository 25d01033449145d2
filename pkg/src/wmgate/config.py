"""Experiment configuration: a single JSON schema, strictly validated.

Unknown fields are rejected, range violations name the offending field
by its dotted path (e.g. ``controller.M``), and a loaded config
round-trips through ``config_to_jsonable`` unchanged.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .agents import (
    RemoteConfig,
    SyntheticAnswerConfig,
    SyntheticPolicyConfig,
    SyntheticVerifierConfig,
)
from .controller import BeamConfig, ControllerConfig, CostModel, StrategyKind, RUNNABLE_STRATEGIES
from .errors import ConfigFileError, ConfigRangeError, ConfigSchemaError
from .geometry import ActionEntry, ActionKind
from .nav import NavGenConfig
from .tasks import N_CHOICES, QuestionCategory
from .world import DEFAULT_COLORS, DEFAULT_VOCABULARY, NoiseModel, SceneGenConfig, Sensor

ENDPOINT_ENV = "WMGATE_ENDPOINT"

DEFAULT_CATEGORY_MIX = {c.value: 1.0 for c in QuestionCategory}


@dataclass(frozen=True)
class SuiteConfig:
    n_episodes: int = 100
    categories: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CATEGORY_MIX))
    scene: SceneGenConfig = SceneGenConfig()
    sensor: Sensor = Sensor()
    k_choices: int = N_CHOICES
    path: str | None = None  # optional pre-generated suite JSONL


@dataclass(frozen=True)
class BackendSetup:
    kind: str = "synthetic"  # "synthetic" | "remote"
    policy: SyntheticPolicyConfig = SyntheticPolicyConfig()
    answerer: SyntheticAnswerConfig = SyntheticAnswerConfig()
    verifier: SyntheticVerifierConfig = SyntheticVerifierConfig()
    remote: RemoteConfig | None = None


@dataclass(frozen=True)
class NavSection:
    n_episodes: int = 50
    graph: NavGenConfig = NavGenConfig()
    gate_accuracy: float = 1.0
    noise: NoiseModel = NoiseModel()


@dataclass(frozen=True)
class ExperimentConfig:
    run_seed: int
    suite: SuiteConfig = SuiteConfig()
    noise: NoiseModel = NoiseModel()
    backends: BackendSetup = BackendSetup()
    strategy: StrategyKind = StrategyKind.ADAPTIVE
    controller: ControllerConfig = ControllerConfig()
    cost: CostModel = CostModel()
    nav: NavSection = NavSection()
    out_dir: str = "runs"
    workers: int = 1


_REQUIRED = object()


class _Section:
    """Tracks consumed keys so unknown fields can be rejected with a path."""

    def __init__(self, data: dict, path: str):
        if not isinstance(data, dict):
            raise ConfigSchemaError(f"{path or 'config'} must be an object")
        self.data = data
        self.path = path
        self.seen: set[str] = set()

    def _join(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def take(self, key: str, default=_REQUIRED):
        self.seen.add(key)
        if key in self.data:
            return self.data[key]
        if default is _REQUIRED:
            raise ConfigSchemaError(f"missing required field {self._join(key)}")
        return default

    def sub(self, key: str) -> "_Section | None":
        self.seen.add(key)
        if key not in self.data:
            return None
        return _Section(self.data[key], self._join(key))

    def finish(self) -> None:
        unknown = set(self.data) - self.seen
        if unknown:
            name = self._join(sorted(unknown)[0])
            raise ConfigSchemaError(f"unknown config field {name}")


def _typed(value, types, path: str):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigSchemaError(f"{path} has wrong type bool")
    if not isinstance(value, types):
        raise ConfigSchemaError(f"{path} has wrong type {type(value).__name__}")
    return value


def _ranged(value, path: str, low=None, high=None):
    if low is not None and value < low:
        raise ConfigRangeError(f"{path} must be >= {low}, got {value}")
    if high is not None and value > high:
        raise ConfigRangeError(f"{path} must be <= {high}, got {value}")
    return value


def _int(section: _Section, key: str, default, low=None, high=None) -> int:
    value = section.take(key, default)
    _typed(value, int, section._join(key))
    return _ranged(value, section._join(key), low, high)


def _float(section: _Section, key: str, default, low=None, high=None) -> float:
    value = section.take(key, default)
    _typed(value, (int, float), section._join(key))
    return float(_ranged(value, section._join(key), low, high))


def _str(section: _Section, key: str, default) -> str:
    value = section.take(key, default)
    if value is not None:
        _typed(value, str, section._join(key))
    return value


def _bool(section: _Section, key: str, default) -> bool:
    value = section.take(key, default)
    _typed(value, bool, section._join(key))
    return value


def _parse_scene(section: _Section | None) -> SceneGenConfig:
    if section is None:
        return SceneGenConfig()
    n_objects = _int(section, "n_objects", 8, low=0)
    bounds = section.take("bounds", [-5.0, -5.0, 5.0, 5.0])
    if not (isinstance(bounds, list) and len(bounds) == 4):
        raise ConfigSchemaError(f"{section._join('bounds')} must be a 4-number list")
    min_sep = _float(section, "min_separation", 0.8, low=0.05)
    vocab = section.take("vocabulary", list(DEFAULT_VOCABULARY))
    colors = section.take("colors", list(DEFAULT_COLORS))
    section.finish()
    return SceneGenConfig(
        n_objects=n_objects,
        bounds=tuple(float(b) for b in bounds),
        min_separation=min_sep,
        vocabulary=tuple(vocab),
        colors=tuple(colors),
    )


def _parse_sensor(section: _Section | None) -> Sensor:
    if section is None:
        return Sensor()
    fov = _float(section, "fov", 90.0, low=1e-6, high=360.0)
    rng = _float(section, "range", 5.0, low=1e-6)
    occl = _bool(section, "occlusion_enabled", True)
    section.finish()
    return Sensor(fov=fov, range=rng, occlusion_enabled=occl)


def _parse_noise(section: _Section | None) -> NoiseModel:
    if section is None:
        return NoiseModel()
    noise = NoiseModel(
        p_drop=_float(section, "p_drop", 0.0, low=0.0, high=1.0),
        p_label=_float(section, "p_label", 0.0, low=0.0, high=1.0),
        sigma_pos=_float(section, "sigma_pos", 0.0, low=0.0),
    )
    section.finish()
    return noise


def _parse_suite(section: _Section | None) -> SuiteConfig:
    if section is None:
        return SuiteConfig()
    n_episodes = _int(section, "n_episodes", 100, low=0)
    mix_raw = section.take("categories", dict(DEFAULT_CATEGORY_MIX))
    if not isinstance(mix_raw, dict) or not mix_raw:
        raise ConfigSchemaError(f"{section._join('categories')} must be a nonempty object")
    valid = {c.value for c in QuestionCategory}
    for name, weight in mix_raw.items():
        if name not in valid:
            raise ConfigSchemaError(f"{section._join('categories')}.{name} is not a category")
        if not isinstance(weight, (int, float)) or weight < 0:
            raise ConfigRangeError(f"{section._join('categories')}.{name} must be >= 0")
    if sum(mix_raw.values()) <= 0:
        raise ConfigRangeError(f"{section._join('categories')} weights must sum > 0")
    k = _int(section, "k_choices", N_CHOICES)
    if k != N_CHOICES:
        raise ConfigRangeError(
            f"{section._join('k_choices')}: only {N_CHOICES} choices are supported"
        )
    scene = _parse_scene(section.sub("scene"))
    sensor = _parse_sensor(section.sub("sensor"))
    path = _str(section, "path", None)
    section.finish()
    return SuiteConfig(
        n_episodes=n_episodes,
        categories={k2: float(v) for k2, v in mix_raw.items()},
        scene=scene,
        sensor=sensor,
        k_choices=k,
        path=path,
    )


def _parse_backends(section: _Section | None) -> BackendSetup:
    if section is None:
        return BackendSetup()
    kind = _str(section, "kind", "synthetic")
    if kind not in ("synthetic", "remote"):
        raise ConfigRangeError(f"{section._join('kind')} must be synthetic|remote, got {kind!r}")
    pol = section.sub("policy")
    if pol is None:
        policy = SyntheticPolicyConfig()
    else:
        policy = SyntheticPolicyConfig(
            q_gate=_float(pol, "q_gate", 0.9, low=0.0, high=1.0),
            q_plan=_float(pol, "q_plan", 0.9, low=0.0, high=1.0),
            sample_jitter=_float(pol, "sample_jitter", 0.3, low=0.0, high=1.0),
        )
        pol.finish()
    ans = section.sub("answerer")
    if ans is None:
        answerer = SyntheticAnswerConfig()
    else:
        answerer = SyntheticAnswerConfig(
            competence=_float(ans, "competence", 0.8, low=0.0, high=1.0)
        )
        ans.finish()
    ver = section.sub("verifier")
    if ver is None:
        verifier = SyntheticVerifierConfig()
    else:
        verifier = SyntheticVerifierConfig(
            noise_amplitude=_int(ver, "noise_amplitude", 1, low=0)
        )
        ver.finish()
    remote = None
    rem = section.sub("remote")
    if rem is not None:
        endpoint = _str(rem, "endpoint", None)
        timeout = _float(rem, "timeout", 30.0, low=0.0)
        concurrency = _int(rem, "max_concurrency", 4, low=1)
        rem.finish()
        endpoint = os.environ.get(ENDPOINT_ENV, endpoint)
        if endpoint:
            remote = RemoteConfig(endpoint=endpoint, timeout=timeout, max_concurrency=concurrency)
    if kind == "remote" and remote is None:
        endpoint = os.environ.get(ENDPOINT_ENV)
        if endpoint:
            remote = RemoteConfig(endpoint=endpoint)
        else:
            raise ConfigSchemaError(
                f"{section._join('remote')}.endpoint required for remote backends "
                f"(or set {ENDPOINT_ENV})"
            )
    section.finish()
    return BackendSetup(kind=kind, policy=policy, answerer=answerer, verifier=verifier,
                        remote=remote)


def _parse_beam(section: _Section | None) -> BeamConfig:
    if section is None:
        return BeamConfig()
    actions_raw = section.take("branch_actions", None)
    if actions_raw is None:
        actions = BeamConfig().branch_actions
    else:
        if not isinstance(actions_raw, list) or not actions_raw:
            raise ConfigSchemaError(f"{section._join('branch_actions')} must be a nonempty list")
        try:
            actions = tuple(
                ActionEntry(ActionKind(a["type"]), a["value"]) for a in actions_raw
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigSchemaError(
                f"{section._join('branch_actions')} entries must be "
                f'{{"type": ..., "value": <int>}}: {exc}'
            ) from exc
    width = _int(section, "width", 2, low=1)
    depth = _int(section, "depth", 3, low=1)
    top_k = _int(section, "keyframe_top_k", 2, low=1)
    section.finish()
    return BeamConfig(branch_actions=actions, width=width, depth=depth, keyframe_top_k=top_k)


def _parse_controller(section: _Section | None) -> ControllerConfig:
    if section is None:
        return ControllerConfig()
    m = _int(section, "M", 5, low=1)
    tie = _str(section, "tie_rule", "skip")
    if tie != "skip":
        raise ConfigRangeError(f"{section._join('tie_rule')} only supports 'skip'")
    dedup = _bool(section, "dedup_plans", True)
    beam = _parse_beam(section.sub("beam"))
    section.finish()
    return ControllerConfig(M=m, tie_rule=tie, dedup_plans=dedup, beam=beam)


def _parse_cost(section: _Section | None) -> CostModel:
    if section is None:
        return CostModel()
    cost = CostModel(
        fixed_per_call=_float(section, "fixed_per_call", 50.0, low=0.0),
        per_image=_float(section, "per_image", 256.0, low=0.0),
        per_char=_float(section, "per_char", 0.25, low=0.0),
    )
    section.finish()
    return cost


def _parse_nav(section: _Section | None) -> NavSection:
    if section is None:
        return NavSection()
    n_episodes = _int(section, "n_episodes", 50, low=0)
    gate_acc = _float(section, "gate_accuracy", 1.0, low=0.0, high=1.0)
    noise = _parse_noise(section.sub("noise"))
    g = section.sub("graph")
    if g is None:
        graph = NavGenConfig()
    else:
        graph = NavGenConfig(
            rows=_int(g, "rows", 4, low=2),
            cols=_int(g, "cols", 4, low=2),
            spacing=_float(g, "spacing", 3.0, low=0.5),
            extra_edges=_float(g, "extra_edges", 0.3, low=0.0, high=1.0),
            landmark_offset=_float(g, "landmark_offset", 0.5, low=0.05),
            min_path_edges=_int(g, "min_path_edges", 2, low=1),
            max_steps=_int(g, "max_steps", 15, low=1),
            success_threshold=_float(g, "success_threshold", 3.0, low=0.0),
        )
        g.finish()
    section.finish()
    return NavSection(n_episodes=n_episodes, graph=graph, gate_accuracy=gate_acc, noise=noise)


def config_from_jsonable(data: dict) -> ExperimentConfig:
    root = _Section(data, "")
    run_seed = root.take("run_seed")
    _typed(run_seed, int, "run_seed")
    strategy_raw = _str(root, "strategy", StrategyKind.ADAPTIVE.value)
    try:
        strategy = StrategyKind(strategy_raw)
    except ValueError as exc:
        raise ConfigRangeError(f"strategy must be one of "
                               f"{[s.value for s in RUNNABLE_STRATEGIES]}") from exc
    if strategy not in RUNNABLE_STRATEGIES:
        raise ConfigRangeError(
            f"strategy {strategy.value!r} is derived by analysis, not runnable"
        )
    cfg = ExperimentConfig(
        run_seed=run_seed,
        suite=_parse_suite(root.sub("suite")),
        noise=_parse_noise(root.sub("noise")),
        backends=_parse_backends(root.sub("backends")),
        strategy=strategy,
        controller=_parse_controller(root.sub("controller")),
        cost=_parse_cost(root.sub("cost")),
        nav=_parse_nav(root.sub("nav")),
        out_dir=_str(root, "out_dir", "runs"),
        workers=_int(root, "workers", 1, low=1),
    )
    root.finish()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Load and validate a JSON experiment config."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_jsonable(data)


def config_to_jsonable(cfg: ExperimentConfig) -> dict:
    """Canonical JSON form; ``config_from_jsonable`` inverts it exactly."""
    out = {
        "run_seed": cfg.run_seed,
        "strategy": cfg.strategy.value,
        "suite": {
            "n_episodes": cfg.suite.n_episodes,
            "categories": dict(cfg.suite.categories),
            "k_choices": cfg.suite.k_choices,
            "scene": {
                "n_objects": cfg.suite.scene.n_objects,
                "bounds": list(cfg.suite.scene.bounds),
                "min_separation": cfg.suite.scene.min_separation,
                "vocabulary": list(cfg.suite.scene.vocabulary),
                "colors": list(cfg.suite.scene.colors),
            },
            "sensor": {
                "fov": cfg.suite.sensor.fov,
                "range": cfg.suite.sensor.range,
                "occlusion_enabled": cfg.suite.sensor.occlusion_enabled,
            },
            "path": cfg.suite.path,
        },
        "noise": {
            "p_drop": cfg.noise.p_drop,
            "p_label": cfg.noise.p_label,
            "sigma_pos": cfg.noise.sigma_pos,
        },
        "backends": {
            "kind": cfg.backends.kind,
            "policy": {
                "q_gate": cfg.backends.policy.q_gate,
                "q_plan": cfg.backends.policy.q_plan,
                "sample_jitter": cfg.backends.policy.sample_jitter,
            },
            "answerer": {"competence": cfg.backends.answerer.competence},
            "verifier": {"noise_amplitude": cfg.backends.verifier.noise_amplitude},
        },
        "controller": {
            "M": cfg.controller.M,
            "tie_rule": cfg.controller.tie_rule,
            "dedup_plans": cfg.controller.dedup_plans,
            "beam": {
                "branch_actions": [
                    {"type": a.kind.value, "value": a.value}
                    for a in cfg.controller.beam.branch_actions
                ],
                "width": cfg.controller.beam.width,
                "depth": cfg.controller.beam.depth,
                "keyframe_top_k": cfg.controller.beam.keyframe_top_k,
            },
        },
        "cost": {
            "fixed_per_call": cfg.cost.fixed_per_call,
            "per_image": cfg.cost.per_image,
            "per_char": cfg.cost.per_char,
        },
        "nav": {
            "n_episodes": cfg.nav.n_episodes,
            "gate_accuracy": cfg.nav.gate_accuracy,
            "noise": {
                "p_drop": cfg.nav.noise.p_drop,
                "p_label": cfg.nav.noise.p_label,
                "sigma_pos": cfg.nav.noise.sigma_pos,
            },
            "graph": {
                "rows": cfg.nav.graph.rows,
                "cols": cfg.nav.graph.cols,
                "spacing": cfg.nav.graph.spacing,
                "extra_edges": cfg.nav.graph.extra_edges,
                "landmark_offset": cfg.nav.graph.landmark_offset,
                "min_path_edges": cfg.nav.graph.min_path_edges,
                "max_steps": cfg.nav.graph.max_steps,
                "success_threshold": cfg.nav.graph.success_threshold,
            },
        },
        "out_dir": cfg.out_dir,
        "workers": cfg.workers,
    }
    if cfg.backends.remote is not None:
        out["backends"]["remote"] = {
            "endpoint": _redact(cfg.backends.remote.endpoint),
            "timeout": cfg.backends.remote.timeout,
            "max_concurrency": cfg.backends.remote.max_concurrency,
        }
    return out


def _redact(endpoint: str) -> str:
    """Strip userinfo and query strings so no secret leaks into logs."""
    from urllib.parse import urlsplit, urlunsplit

    parts = urlsplit(endpoint)
    host = parts.netloc.rsplit("@", 1)[-1]
    return urlunsplit((parts.scheme, host, parts.path, "", ""))
