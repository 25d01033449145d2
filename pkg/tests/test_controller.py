"""Gating, plan pooling, trajectory selection, strategies, and budgets."""

import dataclasses

import pytest

from conftest import seeded
from wmgate.agents import (
    AnswerDistribution,
    Decision,
    PolicySample,
    SyntheticAnswerConfig,
    SyntheticAnswerer,
    SyntheticPolicy,
    SyntheticPolicyConfig,
    SyntheticVerifier,
    SyntheticVerifierConfig,
)
from wmgate.controller import (
    Backends,
    BeamConfig,
    Budget,
    CallRecord,
    ControllerConfig,
    CostModel,
    RunRecord,
    StrategyKind,
    account,
    gate,
    plan_pool,
    record_from_jsonable,
    record_to_jsonable,
    run_adaptive,
    run_always_on,
    run_gating_only,
    run_none,
    select_trajectory,
    upper_bound,
)
from wmgate.geometry import ActionEntry, ActionKind, ActionPlan
from wmgate.seeds import episode_seed
from wmgate.tasks import ErrorTag, QuestionCategory, start_observations, sufficient
from wmgate.world import ImaginedTrajectory, NoiseModel, Observation, Sensor, WorldModel
from wmgate.geometry import Pose
from test_tasks import gen_suite


def sample(decision, *entries):
    return PolicySample(Decision(decision), ActionPlan(tuple(entries)), "t")


def turn(k):
    return ActionEntry(ActionKind.TURN_LEFT, k)


PERFECT_BACKENDS = Backends(
    policy=SyntheticPolicy(SyntheticPolicyConfig(q_gate=1.0, q_plan=1.0, sample_jitter=0.0)),
    verifier=SyntheticVerifier(SyntheticVerifierConfig(noise_amplitude=0)),
    answerer=SyntheticAnswerer(SyntheticAnswerConfig(competence=1.0)),
    world=WorldModel(sensor=Sensor(), noise=NoiseModel()),
)


class TestGate:
    def test_three_of_five_majority(self):
        votes = [sample("skip"), sample("skip"), sample("call_wm", turn(1)),
                 sample("call_wm", turn(1)), sample("call_wm", turn(1))]
        assert gate(votes) is Decision.CALL_WM

    def test_unanimous_skip(self):
        assert gate([sample("skip")] * 5) is Decision.SKIP

    def test_even_split_goes_skip(self):
        votes = [sample("skip"), sample("skip"),
                 sample("call_wm", turn(1)), sample("call_wm", turn(1))]
        assert gate(votes) is Decision.SKIP

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            gate([])


class TestPlanPool:
    def test_dedup_by_exact_equality(self):
        plan_a = [turn(5)]
        plan_b = [turn(7)]
        samples = [sample("call_wm", *plan_a)] * 3 + [
            sample("call_wm", *plan_b),
            sample("call_wm", ActionEntry(ActionKind.MOVE_FORWARD, 2)),
        ]
        pool = plan_pool(samples)
        assert len(pool) == 3
        assert pool[0] == ActionPlan(tuple(plan_a))  # original order kept

    def test_all_identical_collapse_to_one(self):
        pool = plan_pool([sample("call_wm", turn(9))] * 5)
        assert len(pool) == 1

    def test_requires_a_caller(self):
        with pytest.raises(ValueError):
            plan_pool([sample("skip")] * 3)

    def test_empty_plans_signal_fallback(self):
        assert plan_pool([sample("call_wm")]) == []


def traj(n_frames, plan_entries=1):
    frames = tuple(
        Observation(viewpoint=Pose(0, 0, 0), imagined=True) for _ in range(n_frames)
    )
    return ImaginedTrajectory(plan=ActionPlan((turn(1),) * plan_entries), frames=frames)


class TestSelectTrajectory:
    def test_tie_breaks_by_fewer_frames(self):
        scored = [(traj(4), 7), (traj(2), 7), (traj(5), 3)]
        assert select_trajectory(scored) == 1

    def test_single_candidate(self):
        assert select_trajectory([(traj(1), 0)]) == 0

    def test_all_zero_picks_shortest(self):
        scored = [(traj(3), 0), (traj(1), 0), (traj(2), 0)]
        assert select_trajectory(scored) == 1

    def test_full_tie_picks_lowest_index(self):
        scored = [(traj(2), 5), (traj(2), 5)]
        assert select_trajectory(scored) == 0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            select_trajectory([])


class TestAdaptive:
    def test_perfect_egoact_single_wm_call(self):
        episode = gen_suite([QuestionCategory.ACTION_CONSEQUENCE], n_per=1)[0]
        record = run_adaptive(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("pa"))
        assert record.correct
        assert record.budget.wm_calls == 1  # five identical plans dedup to one
        assert record.vote is Decision.CALL_WM
        assert record.selected_plan == episode.evidence.reference_plan

    def test_skip_path_zero_budget(self):
        episode = gen_suite([QuestionCategory.PERSPECTIVE], n_per=1)[0]
        record = run_adaptive(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("sp"))
        assert record.vote is Decision.SKIP
        assert record.budget.wm_calls == 0
        assert record.budget.imagined_frames == 0
        assert record.selected_plan is None
        assert record.trajectories == ()

    def test_deterministic_records(self):
        episode = gen_suite([QuestionCategory.GOAL_AIMING], n_per=1)[0]
        a = run_adaptive(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("dr"))
        b = run_adaptive(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("dr"))
        da, db = record_to_jsonable(a), record_to_jsonable(b)
        assert da == db

    def test_at_most_one_trajectory_reaches_answerer(self):
        # The record's selected plan is a single pooled plan, never a union.
        backends = Backends(
            policy=SyntheticPolicy(SyntheticPolicyConfig(q_gate=1.0, q_plan=0.5,
                                                         sample_jitter=0.8)),
            verifier=SyntheticVerifier(SyntheticVerifierConfig(noise_amplitude=0)),
            answerer=SyntheticAnswerer(SyntheticAnswerConfig(competence=1.0)),
            world=WorldModel(sensor=Sensor(), noise=NoiseModel()),
        )
        for i, episode in enumerate(gen_suite([QuestionCategory.ACTION_CONSEQUENCE], n_per=6)):
            record = run_adaptive(episode, ControllerConfig(), backends, seeded("one", i))
            if record.vote is Decision.CALL_WM and record.trajectories:
                assert record.selected_plan is not None
                assert any(t.plan == record.selected_plan for t in record.trajectories)


class TestAlwaysOn:
    def test_default_beam_renders_exactly_fifteen(self):
        episode = gen_suite([QuestionCategory.PERSPECTIVE], n_per=1)[0]
        config = ControllerConfig()
        assert config.beam.frames_per_episode == 15  # 3 + 6 + 6
        record = run_always_on(episode, config, PERFECT_BACKENDS, seeded("ao"))
        assert record.budget.wm_calls == 15
        assert record.budget.imagined_frames == 15
        assert len(record.trajectories) == 15

    def test_depth_one_renders_branch_count(self):
        episode = gen_suite([QuestionCategory.PERSPECTIVE], n_per=1)[0]
        config = ControllerConfig(beam=BeamConfig(width=1, depth=1))
        record = run_always_on(episode, config, PERFECT_BACKENDS, seeded("d1"))
        assert record.budget.wm_calls == len(config.beam.branch_actions)

    def test_keyframe_count_reaches_answerer(self):
        episode = gen_suite([QuestionCategory.PERSPECTIVE], n_per=1)[0]
        record = run_always_on(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("kf"))
        answer_calls = [c for c in record.calls if c.role == "answer"]
        n_start = len(start_observations(episode, Sensor()))
        assert len(answer_calls) == 1
        assert answer_calls[0].n_images == n_start + 2  # keyframe_top_k default

    def test_never_consults_policy(self):
        episode = gen_suite([QuestionCategory.EGO_MOVEMENT], n_per=1)[0]
        record = run_always_on(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("npol"))
        assert record.samples == ()
        assert all(c.role != "policy" for c in record.calls)


class TestNoneStrategy:
    def test_zero_wm(self):
        episode = gen_suite([QuestionCategory.GOAL_AIMING], n_per=1)[0]
        record = run_none(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("z"))
        assert record.budget.wm_calls == 0
        assert record.trajectories == ()

    def test_sufficient_at_start_correct_with_full_competence(self):
        for i, episode in enumerate(gen_suite([QuestionCategory.PERSPECTIVE,
                                               QuestionCategory.OBJ_MOVEMENT], n_per=5)):
            record = run_none(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("s", i))
            assert record.correct

    def test_lo_episode_answers_uniform(self):
        lo = [ep for ep in gen_suite([QuestionCategory.GOAL_AIMING], n_per=20)
              if ep.error_tag is ErrorTag.LIMITED_OBSERVABILITY]
        assert lo
        record = run_none(lo[0], ControllerConfig(), PERFECT_BACKENDS, seeded("lo"))
        assert record.answer.scores == tuple([0.25] * 4)


class TestGatingOnly:
    def test_single_sample(self):
        episode = gen_suite([QuestionCategory.ACTION_CONSEQUENCE], n_per=1)[0]
        record = run_gating_only(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("g1"))
        assert len(record.samples) == 1
        assert record.strategy == "gating_only"

    def test_skip_sample_means_zero_calls(self):
        episode = gen_suite([QuestionCategory.PERSPECTIVE], n_per=1)[0]
        record = run_gating_only(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("g2"))
        assert record.budget.wm_calls == 0

    def test_fewer_calls_than_adaptive_on_average(self):
        backends = Backends(
            policy=SyntheticPolicy(SyntheticPolicyConfig()),
            verifier=SyntheticVerifier(SyntheticVerifierConfig()),
            answerer=SyntheticAnswerer(SyntheticAnswerConfig()),
            world=WorldModel(sensor=Sensor(), noise=NoiseModel(p_drop=0.2)),
        )
        episodes = gen_suite(list(QuestionCategory), n_per=12)
        cc = ControllerConfig()
        adaptive = sum(
            run_adaptive(ep, cc, backends, episode_seed(1, ep.id)).budget.wm_calls
            for ep in episodes
        )
        gating = sum(
            run_gating_only(ep, cc, backends, episode_seed(1, ep.id)).budget.wm_calls
            for ep in episodes
        )
        assert gating <= adaptive


class TestUpperBound:
    def _make(self, eid, correct, strategy="none"):
        return RunRecord(
            episode_id=eid, strategy=strategy, samples=(), vote=Decision.SKIP,
            trajectories=(), selected_plan=None,
            answer=AnswerDistribution.one_hot(0, 4), correct=correct,
            budget=Budget(), seed=0, calls=(),
        )

    def test_union_of_correctness(self):
        none = [self._make(f"e{i}", c) for i, c in enumerate([True, False, True, False])]
        always = [self._make(f"e{i}", c) for i, c in enumerate([False, True, True, False])]
        acc, labels = upper_bound(none, always)
        assert acc == 0.75
        assert labels == {"e0": True, "e1": True, "e2": True, "e3": False}

    def test_subset_case_equals_baseline(self):
        none = [self._make(f"e{i}", c) for i, c in enumerate([True, True, False])]
        always = [self._make(f"e{i}", c) for i, c in enumerate([True, False, False])]
        acc, _ = upper_bound(none, always)
        assert acc == pytest.approx(2 / 3)

    def test_misaligned_ids_rejected(self):
        with pytest.raises(ValueError):
            upper_bound([self._make("a", True)], [self._make("b", True)])


class TestAccount:
    def test_single_answer_call_formula(self):
        record = RunRecord(
            episode_id="x", strategy="none", samples=(), vote=Decision.SKIP,
            trajectories=(), selected_plan=None,
            answer=AnswerDistribution.one_hot(0, 4), correct=True,
            budget=Budget(), seed=0,
            calls=(CallRecord("answer", 1, 200),),
        )
        budget = account(record, CostModel())
        assert budget.pseudo_tokens == 50 + 256 + 50

    def test_skip_path_cheaper_than_always_on(self):
        episode = gen_suite([QuestionCategory.PERSPECTIVE], n_per=1)[0]
        skip = run_adaptive(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("c1"))
        dense = run_always_on(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("c1"))
        assert skip.vote is Decision.SKIP
        assert skip.budget.pseudo_tokens < dense.budget.pseudo_tokens


class TestRecordSerialization:
    def test_round_trip(self):
        episode = gen_suite([QuestionCategory.ACTION_CONSEQUENCE], n_per=1)[0]
        record = run_adaptive(episode, ControllerConfig(), PERFECT_BACKENDS, seeded("rt"))
        data = record_to_jsonable(record)
        back = record_from_jsonable(data)
        assert record_to_jsonable(back) == data


class _BrokenPolicy:
    def sample(self, episode, start_frames, seed):
        from wmgate.errors import BackendError

        raise BackendError("policy down")


class _BrokenAnswerer:
    def answer(self, episode, frames, seed):
        from wmgate.errors import BackendError

        raise BackendError("answerer down")


class TestBackendFailure:
    def test_policy_outage_falls_back_to_none_path(self):
        episode = gen_suite([QuestionCategory.PERSPECTIVE], n_per=1)[0]
        backends = dataclasses.replace(PERFECT_BACKENDS, policy=_BrokenPolicy())
        record = run_adaptive(episode, ControllerConfig(), backends, seeded("bf"))
        assert record.fallback
        assert record.budget.wm_calls == 0
        # The working answerer still saw the start frames.
        assert record.correct
        assert any(c.role == "answer" for c in record.calls)

    def test_total_outage_records_uniform(self):
        episode = gen_suite([QuestionCategory.PERSPECTIVE], n_per=1)[0]
        backends = dataclasses.replace(
            PERFECT_BACKENDS, policy=_BrokenPolicy(), answerer=_BrokenAnswerer()
        )
        record = run_adaptive(episode, ControllerConfig(), backends, seeded("bt"))
        assert record.fallback
        assert record.answer.scores == tuple([0.25] * 4)
