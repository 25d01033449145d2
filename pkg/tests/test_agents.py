"""Synthetic policy/verifier/answerer behavior and wire-format parsing."""

import math

import pytest

from conftest import seeded
from wmgate.agents import (
    AnswerDistribution,
    Decision,
    PolicySample,
    SyntheticAnswerConfig,
    SyntheticPolicyConfig,
    SyntheticVerifierConfig,
    answer,
    parse_policy_output,
    parse_verifier_output,
    policy_sample,
    policy_sample_to_json,
    verify,
)
from wmgate.errors import (
    ActionTypeError,
    ActionValueError,
    DecisionDomainError,
    JsonSyntaxError,
    SchemaFieldError,
    SkipWithActionsError,
    VerifierParseError,
)
from wmgate.geometry import ActionKind, ActionPlan, Pose, final_pose, signed_angle
from wmgate.seeds import derive_seed
from wmgate.tasks import (
    ErrorTag,
    QuestionCategory,
    generate_episode,
    start_observations,
    sufficient,
)
from wmgate.world import (
    ImaginedTrajectory,
    NoiseModel,
    Observation,
    Percept,
    SceneGenConfig,
    Sensor,
    WorldModel,
    generate_scene,
)
from test_tasks import gen_suite


PERFECT = SyntheticPolicyConfig(q_gate=1.0, q_plan=1.0, sample_jitter=0.0)


class TestPolicy:
    def test_perfect_gate_skips_sufficient(self, sensor):
        for ep in gen_suite([QuestionCategory.PERSPECTIVE], n_per=5):
            frames = start_observations(ep, sensor)
            sample = policy_sample(ep, frames, PERFECT, seeded("pg", ep.id))
            assert sample.decision is Decision.SKIP
            assert len(sample.plan) == 0

    def test_perfect_gate_calls_on_missing_viewpoint(self, sensor):
        for ep in gen_suite([QuestionCategory.ACTION_CONSEQUENCE], n_per=5):
            frames = start_observations(ep, sensor)
            sample = policy_sample(ep, frames, PERFECT, seeded("pc", ep.id))
            assert sample.decision is Decision.CALL_WM
            assert len(sample.plan) > 0

    def test_gate_matches_sufficiency_everywhere(self, sensor):
        for ep in gen_suite(list(QuestionCategory), n_per=6):
            frames = start_observations(ep, sensor)
            sample = policy_sample(ep, frames, PERFECT, seeded("gs", ep.id))
            assert (sample.decision is Decision.SKIP) == sufficient(ep, frames)

    def test_greedy_plan_reaches_required_heading(self, sensor):
        # Oracle: simulate the emitted plan; the final heading must land
        # within half a turn step of the required viewpoint heading.
        checked = 0
        for ep in gen_suite([QuestionCategory.GOAL_AIMING], n_per=25):
            if ep.error_tag is not ErrorTag.LIMITED_OBSERVABILITY:
                continue
            frames = start_observations(ep, sensor)
            sample = policy_sample(ep, frames, PERFECT, seeded("gp", ep.id))
            assert sample.decision is Decision.CALL_WM
            end = final_pose(ep.start_pose, sample.plan)
            want = ep.evidence.required_viewpoints[0].pose
            assert abs(signed_angle(end.heading - want.heading)) <= 4.5 + 1e-9
            checked += 1
        assert checked >= 3

    def test_no_adjacent_opposing_turns_under_perturbation(self, sensor):
        cfg = SyntheticPolicyConfig(q_gate=0.5, q_plan=0.3, sample_jitter=0.9)
        opposing = {ActionKind.TURN_LEFT: ActionKind.TURN_RIGHT,
                    ActionKind.TURN_RIGHT: ActionKind.TURN_LEFT}
        for ep in gen_suite(list(QuestionCategory), n_per=6):
            frames = start_observations(ep, sensor)
            for i in range(8):
                sample = policy_sample(ep, frames, cfg, seeded("np", ep.id, i))
                entries = sample.plan.entries
                for prev, cur in zip(entries, entries[1:]):
                    assert opposing.get(prev.kind) is not cur.kind

    def test_skip_requires_empty_plan(self):
        from wmgate.geometry import ActionEntry

        with pytest.raises(SkipWithActionsError):
            PolicySample(Decision.SKIP, ActionPlan((ActionEntry(ActionKind.TURN_LEFT, 1),)))


def one_frame(viewpoint, *percepts):
    return Observation(viewpoint=viewpoint, percepts=tuple(percepts), imagined=True)


class TestVerify:
    def _episode_and_frames(self, sensor):
        episodes = gen_suite([QuestionCategory.ACTION_CONSEQUENCE], n_per=1)
        ep = episodes[0]
        return ep, start_observations(ep, sensor)

    def test_full_reveal_scores_nine(self, sensor):
        ep, frames = self._episode_and_frames(sensor)
        world = WorldModel(sensor=sensor, noise=NoiseModel())
        traj = world.imagine(ep.scene, ep.start_pose, ep.evidence.reference_plan, seeded("v9"))
        score = verify(ep, frames, traj, SyntheticVerifierConfig(noise_amplitude=0), seeded("s"))
        assert score == 9

    def test_empty_trajectory_scores_zero(self, sensor):
        ep, frames = self._episode_and_frames(sensor)
        empty = ImaginedTrajectory(plan=ActionPlan(), frames=())
        assert verify(ep, frames, empty, SyntheticVerifierConfig(0), seeded("s")) == 0

    def test_half_corrupted_scores_seven(self, sensor):
        # Formula cross-check: revealed 1, penalty 0.5 * 1/2 -> round(9*0.75) = 7.
        ep, frames = self._episode_and_frames(sensor)
        world = WorldModel(sensor=sensor, noise=NoiseModel())
        traj = world.imagine(ep.scene, ep.start_pose, ep.evidence.reference_plan, seeded("v7"))
        frame = traj.frames[-1]
        target = ep.target_label
        clean = Percept(label=target, color="gray", relative_bearing=0.0, distance=1.0,
                        source_id=99, corrupted=False)
        corrupt = Percept(label=target, color="gray", relative_bearing=5.0, distance=1.0,
                          source_id=98, corrupted=True)
        doctored = ImaginedTrajectory(
            plan=traj.plan,
            frames=(Observation(viewpoint=frame.viewpoint, percepts=(clean, corrupt),
                                imagined=True),),
        )
        score = verify(ep, frames, doctored, SyntheticVerifierConfig(0), seeded("s"))
        assert score == 7

    def test_monotone_in_revealed_fraction(self, sensor):
        # More satisfied evidence never lowers the zero-noise score.
        ep, frames = self._episode_and_frames(sensor)
        world = WorldModel(sensor=sensor, noise=NoiseModel())
        good = world.imagine(ep.scene, ep.start_pose, ep.evidence.reference_plan, seeded("m1"))
        idle = ImaginedTrajectory(plan=ActionPlan(), frames=())
        cfg = SyntheticVerifierConfig(0)
        assert verify(ep, frames, good, cfg, seeded("s")) >= verify(ep, frames, idle, cfg,
                                                                    seeded("s"))

    def test_noise_stays_in_range(self, sensor):
        ep, frames = self._episode_and_frames(sensor)
        empty = ImaginedTrajectory(plan=ActionPlan(), frames=())
        for i in range(50):
            s = verify(ep, frames, empty, SyntheticVerifierConfig(noise_amplitude=3),
                       seeded("rng", i))
            assert 0 <= s <= 9


class TestAnswer:
    def test_clean_evidence_full_competence_is_truth(self, sensor):
        for ep in gen_suite([QuestionCategory.PERSPECTIVE, QuestionCategory.EGO_MOVEMENT],
                            n_per=8):
            frames = start_observations(ep, sensor)
            dist = answer(ep, frames, SyntheticAnswerConfig(competence=1.0), seeded("a", ep.id))
            assert dist.argmax == ep.truth_index
            assert dist.scores[dist.argmax] == 1.0

    def test_unresolved_evidence_is_uniform(self, sensor):
        ep = gen_suite([QuestionCategory.ACTION_CONSEQUENCE], n_per=1)[0]
        frames = start_observations(ep, sensor)
        dist = answer(ep, frames, SyntheticAnswerConfig(competence=1.0), seeded("u"))
        assert dist.scores == tuple([0.25] * 4)

    def test_corrupted_position_flips_the_answer(self, sensor):
        # Case-2 mechanism: plant a corrupted target percept on the
        # opposite side at the post-plan viewpoint and watch the
        # confident answer go wrong.
        ep = gen_suite([QuestionCategory.ACTION_CONSEQUENCE], n_per=1)[0]
        frames = start_observations(ep, sensor)
        world = WorldModel(sensor=sensor, noise=NoiseModel())
        traj = world.imagine(ep.scene, ep.start_pose, ep.evidence.reference_plan, seeded("cp"))
        post = traj.frames[-1].viewpoint
        true_target = ep.scene.by_label(ep.target_label).position
        from wmgate.geometry import bearing_to

        true_bearing = bearing_to(post, true_target)
        flipped = Percept(label=ep.target_label, color="gray",
                          relative_bearing=-true_bearing, distance=2.0,
                          source_id=999, corrupted=True)
        doctored = Observation(viewpoint=post, percepts=(flipped,), imagined=True)
        dist = answer(ep, frames + [doctored], SyntheticAnswerConfig(competence=1.0),
                      seeded("cp2"))
        expected_sector_answer = answer(
            ep, frames + list(traj.frames), SyntheticAnswerConfig(competence=1.0), seeded("cp2")
        )
        assert expected_sector_answer.argmax == ep.truth_index
        if abs(true_bearing) > 5.0:  # symmetric flip changes the sector
            assert dist.argmax != ep.truth_index

    def test_normalized_within_tolerance(self, sensor):
        ep = gen_suite([QuestionCategory.PERSPECTIVE], n_per=1)[0]
        frames = start_observations(ep, sensor)
        dist = answer(ep, frames, SyntheticAnswerConfig(competence=0.5), seeded("n"))
        assert abs(sum(dist.scores) - 1.0) <= 1e-9

    def test_argmax_tie_breaks_low_index(self):
        assert AnswerDistribution((0.25, 0.25, 0.25, 0.25)).argmax == 0
        assert AnswerDistribution((0.2, 0.4, 0.4, 0.0)).argmax == 1


class TestPolicyParsing:
    def test_skip_golden(self):
        sample = parse_policy_output('{"decision":"skip","reason":"visible","actions":[]}')
        assert sample.decision is Decision.SKIP
        assert len(sample.plan) == 0
        assert sample.reason == "visible"

    def test_call_golden_ten_left_turns(self):
        text = '{"decision":"call_wm","reason":"turn","actions":[{"type":"turn-left","value":10}]}'
        sample = parse_policy_output(text)
        assert sample.decision is Decision.CALL_WM
        assert len(sample.plan.entries) == 1
        entry = sample.plan.entries[0]
        assert entry.kind is ActionKind.TURN_LEFT and entry.value == 10
        # Ten unit turns compose a quarter turn.
        assert final_pose(Pose(0, 0, 0), sample.plan).heading == 90.0

    def test_decision_domain_error(self):
        with pytest.raises(DecisionDomainError):
            parse_policy_output('{"decision":"maybe","reason":"?","actions":[]}')

    def test_malformed_json(self):
        with pytest.raises(JsonSyntaxError):
            parse_policy_output("{decision: skip}")

    def test_unknown_field_strict(self):
        text = '{"decision":"skip","reason":"r","actions":[],"confidence":0.9}'
        with pytest.raises(SchemaFieldError):
            parse_policy_output(text)
        sample = parse_policy_output(text, strict=False)
        assert sample.decision is Decision.SKIP

    def test_missing_field(self):
        with pytest.raises(SchemaFieldError):
            parse_policy_output('{"decision":"skip","actions":[]}')

    def test_unknown_action_type(self):
        with pytest.raises(ActionTypeError):
            parse_policy_output(
                '{"decision":"call_wm","reason":"r","actions":[{"type":"jump","value":1}]}'
            )

    def test_non_integer_value(self):
        with pytest.raises(ActionValueError):
            parse_policy_output(
                '{"decision":"call_wm","reason":"r","actions":[{"type":"turn-left","value":1.5}]}'
            )

    def test_skip_with_actions(self):
        with pytest.raises(SkipWithActionsError):
            parse_policy_output(
                '{"decision":"skip","reason":"r","actions":[{"type":"turn-left","value":1}]}'
            )

    def test_round_trip_canonical_form(self):
        text = '{"decision":"call_wm","reason":"go","actions":[{"type":"move-forward","value":3}]}'
        sample = parse_policy_output(text)
        again = parse_policy_output(policy_sample_to_json(sample))
        assert again == sample


class TestVerifierParsing:
    def test_bare_integer(self):
        assert parse_verifier_output("5") == 5

    def test_whitespace_tolerated(self):
        assert parse_verifier_output(" 9\n") == 9

    @pytest.mark.parametrize("text", ["score: 5", "", "4.5", "ten", "5 5"])
    def test_extra_text_rejected(self, text):
        with pytest.raises(VerifierParseError):
            parse_verifier_output(text)

    def test_out_of_range_rejected(self):
        with pytest.raises(VerifierParseError):
            parse_verifier_output("10")
        with pytest.raises(VerifierParseError):
            parse_verifier_output("-1")
