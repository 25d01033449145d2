"""JSONL persistence for suites and run logs.

A log is a header line (schema version, artifact version, config echo)
followed by one record per line, sorted by episode id and serialized
with fixed separators and sorted keys, so identical runs produce
byte-identical files regardless of worker count.  Wall-clock times are
non-deterministic and live in a ``.times.json`` sidecar instead.
"""

from __future__ import annotations

import json
from pathlib import Path

from . import SCHEMA_VERSION, __version__
from .controller import RunRecord, record_from_jsonable, record_to_jsonable
from .errors import LogError
from .tasks import Episode, episode_from_jsonable, episode_to_jsonable

_RECORD_REQUIRED = {
    "episode_id", "strategy", "seed", "vote", "samples", "trajectories",
    "selected_plan", "answer", "correct", "budget", "calls",
}


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_run_log(path: Path, config_echo: dict, records: list[RunRecord]) -> Path:
    """Write header + records (sorted by episode id); times go to a sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(records, key=lambda r: r.episode_id)
    header = {
        "kind": "run_log",
        "schema_version": SCHEMA_VERSION,
        "artifact_version": __version__,
        "config": config_echo,
    }
    with open(path, "w") as fh:
        fh.write(_dump(header) + "\n")
        for record in ordered:
            fh.write(_dump(record_to_jsonable(record)) + "\n")
    times = {r.episode_id: r.budget.wall_time for r in ordered}
    with open(path.with_suffix(path.suffix + ".times.json"), "w") as fh:
        json.dump(times, fh, indent=0, sort_keys=True)
    return path


def read_run_log(path: Path) -> tuple[dict, list[RunRecord]]:
    """Parse and validate a run log; corrupt lines raise, never skip."""
    path = Path(path)
    records: list[RunRecord] = []
    header: dict | None = None
    seen_ids: set[str] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogError(f"{path}:{lineno}: corrupt JSON line: {exc}") from exc
            if lineno == 1:
                if not isinstance(data, dict) or data.get("kind") != "run_log":
                    raise LogError(f"{path}:1: missing run_log header")
                if data.get("schema_version") != SCHEMA_VERSION:
                    raise LogError(
                        f"{path}: schema_version {data.get('schema_version')} "
                        f"!= supported {SCHEMA_VERSION}"
                    )
                header = data
                continue
            missing = _RECORD_REQUIRED - set(data)
            if missing:
                raise LogError(f"{path}:{lineno}: record missing fields {sorted(missing)}")
            if data.get("schema_version") != SCHEMA_VERSION:
                raise LogError(f"{path}:{lineno}: mixed schema versions")
            if data["episode_id"] in seen_ids:
                raise LogError(f"{path}:{lineno}: duplicate episode_id {data['episode_id']}")
            seen_ids.add(data["episode_id"])
            try:
                records.append(record_from_jsonable(data))
            except (KeyError, TypeError, ValueError) as exc:
                raise LogError(f"{path}:{lineno}: invalid record: {exc}") from exc
    if header is None:
        raise LogError(f"{path}: empty log")
    return header, records


def read_sidecar_times(path: Path) -> dict[str, float]:
    sidecar = Path(path).with_suffix(Path(path).suffix + ".times.json")
    if not sidecar.exists():
        return {}
    return json.loads(sidecar.read_text())


def write_suite(path: Path, config_echo: dict, episodes: list[Episode]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": "suite",
        "schema_version": SCHEMA_VERSION,
        "artifact_version": __version__,
        "config": config_echo,
    }
    with open(path, "w") as fh:
        fh.write(_dump(header) + "\n")
        for episode in episodes:
            fh.write(_dump(episode_to_jsonable(episode)) + "\n")
    return path


def read_suite(path: Path) -> tuple[dict, list[Episode]]:
    path = Path(path)
    episodes: list[Episode] = []
    header: dict | None = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogError(f"{path}:{lineno}: corrupt JSON line: {exc}") from exc
            if lineno == 1:
                if not isinstance(data, dict) or data.get("kind") != "suite":
                    raise LogError(f"{path}:1: missing suite header")
                header = data
                continue
            try:
                episodes.append(episode_from_jsonable(data))
            except (KeyError, TypeError, ValueError) as exc:
                raise LogError(f"{path}:{lineno}: invalid episode: {exc}") from exc
    if header is None:
        raise LogError(f"{path}: empty suite")
    return header, episodes
