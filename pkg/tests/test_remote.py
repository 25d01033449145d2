"""Remote backend adapters against a local mock HTTP server."""

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from conftest import seeded
from wmgate.agents import (
    Decision,
    RemoteAnswerer,
    RemoteConfig,
    RemotePolicy,
    RemoteVerifier,
)
from wmgate.errors import BackendError
from wmgate.tasks import QuestionCategory, start_observations
from wmgate.world import ImaginedTrajectory, NoiseModel, Sensor, WorldModel
from wmgate.geometry import ActionPlan
from test_tasks import gen_suite


class MockHandler(BaseHTTPRequestHandler):
    responses: dict[str, list[str]] = {}
    requests: list[tuple[str, dict]] = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        MockHandler.requests.append((self.path, body))
        queue = MockHandler.responses.get(self.path, [])
        payload = queue.pop(0) if queue else ""
        self.send_response(200)
        self.send_header("Content-Type", "text/plain")
        self.end_headers()
        self.wfile.write(payload.encode())

    def log_message(self, *args):  # keep pytest output clean
        pass


@pytest.fixture()
def mock_server():
    server = HTTPServer(("127.0.0.1", 0), MockHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    MockHandler.responses = {}
    MockHandler.requests = []
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


@pytest.fixture()
def episode_and_frames():
    episode = gen_suite([QuestionCategory.ACTION_CONSEQUENCE], n_per=1)[0]
    return episode, start_observations(episode, Sensor())


class TestRemotePolicy:
    def test_parses_wire_json(self, mock_server, episode_and_frames):
        episode, frames = episode_and_frames
        MockHandler.responses["/policy"] = [
            '{"decision":"call_wm","reason":"need the view","actions":[{"type":"turn-left","value":10}]}'
        ]
        policy = RemotePolicy(RemoteConfig(endpoint=mock_server))
        sample = policy.sample(episode, frames, seeded("rp"))
        assert sample.decision is Decision.CALL_WM
        assert sample.plan.entries[0].value == 10
        path, body = MockHandler.requests[0]
        assert path == "/policy"
        assert body["question"] == episode.question_text
        assert body["choices"] == list(episode.choices)
        assert len(body["frames"]) == len(frames)

    def test_retry_then_skip_fallback(self, mock_server, episode_and_frames):
        episode, frames = episode_and_frames
        MockHandler.responses["/policy"] = ["not json at all", "still not json"]
        policy = RemotePolicy(RemoteConfig(endpoint=mock_server))
        sample = policy.sample(episode, frames, seeded("rf"))
        assert sample.decision is Decision.SKIP
        assert len(sample.plan) == 0
        assert len(MockHandler.requests) == 2  # exactly one retry

    def test_recovers_on_retry(self, mock_server, episode_and_frames):
        episode, frames = episode_and_frames
        MockHandler.responses["/policy"] = [
            "garbage",
            '{"decision":"skip","reason":"fine","actions":[]}',
        ]
        policy = RemotePolicy(RemoteConfig(endpoint=mock_server))
        sample = policy.sample(episode, frames, seeded("rr"))
        assert sample.decision is Decision.SKIP
        assert sample.reason == "fine"

    def test_transport_error_raises(self, episode_and_frames):
        episode, frames = episode_and_frames
        policy = RemotePolicy(RemoteConfig(endpoint="http://127.0.0.1:1", timeout=0.2))
        with pytest.raises(BackendError):
            policy.sample(episode, frames, seeded("rt"))


class TestRemoteVerifier:
    def test_bare_integer_body(self, mock_server, episode_and_frames):
        episode, frames = episode_and_frames
        world = WorldModel(sensor=Sensor(), noise=NoiseModel())
        traj = world.imagine(episode.scene, episode.start_pose,
                             episode.evidence.reference_plan, seeded("rv"))
        MockHandler.responses["/verify"] = ["5"]
        verifier = RemoteVerifier(RemoteConfig(endpoint=mock_server))
        assert verifier.score(episode, frames, traj, seeded("rv2")) == 5
        path, body = MockHandler.requests[0]
        assert path == "/verify"
        assert body["trajectory"]["plan"] == [{"type": "turn-left", "value": 10}] or \
            isinstance(body["trajectory"]["plan"], list)
        assert len(body["trajectory"]["frames"]) == len(traj.frames)

    def test_unusable_after_retry_raises(self, mock_server, episode_and_frames):
        episode, frames = episode_and_frames
        MockHandler.responses["/verify"] = ["score: 5", "ten"]
        verifier = RemoteVerifier(RemoteConfig(endpoint=mock_server))
        with pytest.raises(BackendError):
            verifier.score(episode, frames, ImaginedTrajectory(ActionPlan(), ()), seeded("rv3"))


class TestRemoteAnswerer:
    def test_scores_body(self, mock_server, episode_and_frames):
        episode, frames = episode_and_frames
        MockHandler.responses["/answer"] = ['{"scores":[0.1,0.2,0.3,0.4]}']
        answerer = RemoteAnswerer(RemoteConfig(endpoint=mock_server))
        dist = answerer.answer(episode, frames, seeded("ra"))
        assert dist.argmax == 3
        assert abs(sum(dist.scores) - 1.0) <= 1e-9

    @pytest.mark.parametrize(
        "bad",
        ['{"scores":[0.5,0.5]}', '{"scores":[-1,1,0.5,0.5]}', '{"scores":"high"}', "[]", "oops"],
    )
    def test_malformed_scores_raise_after_retry(self, mock_server, episode_and_frames, bad):
        episode, frames = episode_and_frames
        MockHandler.responses["/answer"] = [bad, bad]
        answerer = RemoteAnswerer(RemoteConfig(endpoint=mock_server))
        with pytest.raises(BackendError):
            answerer.answer(episode, frames, seeded("rb"))
