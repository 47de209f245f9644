import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kendalltau

import oracles
from nodeforge.errors import AlignmentError, AlphaRangeError, EmptyTargetError
from nodeforge.llm import Gateway, MockProvider
from nodeforge.reward import (
    LITERAL,
    RewardLedger,
    aggregate_epoch,
    compose_scores,
    consistency_score,
    improvement_score,
    objective,
    quality_score,
    relative_gain,
    score_trajectory,
    scoring_prompt,
    select_bottleneck,
    step_rewards,
)
from nodeforge.runtime import run_pipeline
from scenarios import ORDINARY_J, chain_library, chain_samples, executor_script

logprob = st.floats(min_value=-30.0, max_value=0.0, allow_nan=False)


def test_objective_and_perplexity():
    obj = objective([-1.0, -2.0, -3.0])
    assert obj.J == -2.0 and obj.token_count == 3
    assert math.isclose(obj.ppl, math.exp(2.0))
    with pytest.raises(EmptyTargetError):
        objective([])


def test_relative_gain_modes_and_clamp():
    assert relative_gain(-1.0, -2.0) == 0.5
    assert relative_gain(-1.0, -2.0, LITERAL) == -0.5
    assert relative_gain(-1.0, 0.0) == -10.0
    assert math.isclose(relative_gain(-0.01, -0.05), 0.8)
    assert relative_gain(-30.0, -0.1) == -10.0
    with pytest.raises(ValueError):
        relative_gain(-1.0, -2.0, "other")


def test_quality_alpha_bounds():
    assert quality_score(0.2, 0.8, 0.0) == 0.2
    assert quality_score(0.2, 0.8, 1.0) == 0.8
    for bad in (-0.01, 1.5):
        with pytest.raises(AlphaRangeError):
            quality_score(0.2, 0.8, bad)


@given(st.lists(logprob, min_size=2, max_size=12, unique=True))
def test_consistency_matches_scipy_tau_without_ties(J):
    tau = kendalltau(range(len(J)), J).statistic
    assert math.isclose(consistency_score(J), tau, abs_tol=1e-12)


@given(st.lists(st.sampled_from([-3.0, -2.0, -1.0]), min_size=1, max_size=9))
def test_consistency_exact_with_ties(J):
    assert consistency_score(J) == float(oracles.kendall_pairs(J))
    assert -1.0 <= consistency_score(J) <= 1.0


@given(logprob, st.lists(logprob, min_size=1, max_size=8), st.floats(0.0, 1.0))
def test_composed_scores_match_oracle_and_telescope(J0, Js, alpha):
    scores = compose_scores(J0, Js, alpha)
    qualities, rewards = oracles.trajectory_rewards(J0, Js, alpha)
    for s, q, r in zip(scores, qualities, rewards):
        assert math.isclose(s.S_t, q, abs_tol=1e-12)
        assert math.isclose(s.r, r, abs_tol=1e-12)
    assert math.isclose(math.fsum(s.r for s in scores), scores[-1].S_t, abs_tol=1e-12)


@settings(max_examples=200)
@given(st.floats(-50, 50), st.floats(0, 5))
def test_improvement_score_bounded_and_monotone(delta, step):
    a, b = improvement_score(delta), improvement_score(delta + step)
    assert -1.0 <= a <= b <= 1.0


def test_failed_scoring_step_keeps_previous_quality():
    scores = compose_scores(-3.0, [-2.5, None, -2.0], 0.6)
    assert scores[1].failed and scores[1].r == 0.0 and scores[1].S_t == scores[0].S_t
    assert math.isnan(scores[1].J)
    assert math.isclose(sum(s.r for s in scores), scores[2].S_t, abs_tol=1e-12)
    assert scores[2].S_c == 1.0  # consistency over the successful J values only


def test_step_rewards_examples():
    assert step_rewards([0.5]) == [0.5]
    assert step_rewards([0.5, 0.25, 1.0]) == [0.5, -0.25, 0.75]


def test_score_trajectory_prompts_and_values():
    mock_ex = MockProvider(executor_script())
    traj = run_pipeline(chain_library(), chain_samples()[0], Gateway(mock_ex))
    scorer = MockProvider(executor_script())
    scores = score_trajectory(traj, 0.6, Gateway(scorer))
    calls = scorer.score_calls()
    assert [c.prompt for c in calls] == [scoring_prompt(traj.question, traj.accumulated[t]) for t in range(4)]
    assert all(c.target == traj.ground_truth for c in calls)
    J0, Js = ORDINARY_J
    assert [round(s.J, 12) for s in scores] == Js
    _, rewards = oracles.trajectory_rewards(J0, Js, 0.6)
    assert all(math.isclose(s.r, r, abs_tol=1e-12) for s, r in zip(scores, rewards))
    cached = MockProvider(executor_script())
    assert score_trajectory(traj, 0.6, Gateway(cached), J0=J0) == scores
    assert len(cached.score_calls()) == 3


def test_failed_baseline_marks_every_step():
    traj = run_pipeline(chain_library(), chain_samples()[0], Gateway(MockProvider(executor_script())))

    class Failing(MockProvider):
        def score(self, prompt, target):
            from nodeforge.errors import ProviderError
            raise ProviderError("down")

    scores = score_trajectory(traj, 0.6, Gateway(Failing()))
    assert all(s.failed and s.r == 0.0 for s in scores)


def test_bottleneck_ties_go_to_earliest():
    assert select_bottleneck({"a": 0.1, "b": -0.2, "c": -0.2}, ["a", "b", "c"]) == "b"
    assert select_bottleneck({"a": 0.1, "b": -0.2, "c": -0.2}, ["c", "b", "a"]) == "c"


def test_aggregate_epoch_selection_and_round_trip():
    def traj(J0, Js):
        return compose_scores(J0, Js, 0.6)

    scores = {"s1": traj(-3.0, [-2.5, -2.8, -2.2]), "s2": traj(-3.0, [-2.5, -2.9, -2.2]),
              "s3": traj(-3.0, [-2.5, -2.1, -1.5]), "s4": traj(-3.0, [-2.5, -2.8, -2.2]),
              "s5": traj(-3.0, [-2.5, -2.85, -2.2])}
    ledger = aggregate_epoch(scores, ["A", "B", "C"], epoch=2, n_refine=3)
    expected = {sid: [s.r for s in steps] for sid, steps in scores.items()}
    assert ledger.bottleneck == "B"
    assert list(ledger.refinement_sample_ids) == oracles.strict_minimum_samples(expected, 1, 3)
    assert len(ledger.refinement_sample_ids) == 3 and "s3" not in ledger.refinement_sample_ids
    assert RewardLedger.from_dict(ledger.to_dict()) == ledger
    assert len(ledger.rows()) == 15
    with pytest.raises(AlignmentError):
        aggregate_epoch({"s1": scores["s1"][:2]}, ["A", "B", "C"])


def test_no_strict_minimum_means_no_refinement_samples():
    first = compose_scores(-3.0, [-3.0], 0.0)[0]
    tied = [first, first]  # equal rewards, so neither step is a strict minimum
    ledger = aggregate_epoch({"s1": tied}, ["A", "B"])
    assert ledger.refinement_sample_ids == ()
