"""Shared fixtures: a standard scene, sensors, and frozen-config paths."""

from pathlib import Path

import pytest

from wmgate.seeds import derive_seed
from wmgate.world import Scene, SceneGenConfig, SceneObject, Sensor, generate_scene

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def configs_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture()
def sensor() -> Sensor:
    return Sensor()


@pytest.fixture()
def scene() -> Scene:
    return generate_scene(SceneGenConfig(), 42)


def make_scene(*objects: tuple) -> Scene:
    """Hand-built scene from (label, x, y[, radius]) tuples."""
    objs = []
    for i, spec in enumerate(objects):
        label, x, y = spec[0], spec[1], spec[2]
        radius = spec[3] if len(spec) > 3 else 0.2
        objs.append(
            SceneObject(id=i, label=label, position=(x, y), radius=radius,
                        facing=0.0, color="gray")
        )
    xs = [o.position[0] for o in objs] + [-6.0, 6.0]
    ys = [o.position[1] for o in objs] + [-6.0, 6.0]
    bounds = (min(xs) - 1, min(ys) - 1, max(xs) + 1, max(ys) + 1)
    return Scene(objects=tuple(objs), bounds=bounds, seed=0)


def seeded(*parts) -> int:
    return derive_seed("test", *parts)
