#!/usr/bin/env python3
"""
Tests for the reward search loop against a scripted proposal source
"""
import json
import sys
from pathlib import Path

import pytest

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from drlab.core import prompts
from drlab.core.builtin_rewards import builtin_reward_text
from drlab.core.environments import builtin_environment_spec
from drlab.core.eureka import (
    CandidateRecord,
    TaskPrompt,
    build_reflection,
    extract_reward_block,
    run_reward_search,
    select_best,
    shipped_task_prompt,
)
from drlab.core.ppo import TrainConfig
from drlab.errors import (
    AllCandidatesFailed,
    MissingBlock,
    MissingScore,
    NoValidCandidate,
    PlaybookExhausted,
    ValidationError,
)
from ll_providers import ScriptedSource

TINY = TrainConfig(total_env_steps=128, num_parallel_envs=2, rollout_length=64, epochs_per_update=1,
                   minibatch_size=64)


def fenced(text):
    return f"Here is my reward.\n```reward\n{text.strip()}\n```\n"


GOOD = fenced(builtin_reward_text("sprint_cart", "eureka_forward"))
ALSO_GOOD = fenced(builtin_reward_text("sprint_cart", "dreureka_forward"))
NO_BLOCK = "I think the robot should go fast."
UNKNOWN_FEATURE = fenced("component a = exp(-vy)")


def search(playbook, iterations=2, samples=2, **kwargs):
    spec = builtin_environment_spec("sprint_cart")
    source = ScriptedSource({"reward": playbook})
    result = run_reward_search(source, spec, shipped_task_prompt(spec), iterations=iterations, samples=samples,
                               train_cfg=TINY, eval_episodes=2, **kwargs)
    return source, result


def scored(*scores):
    return [CandidateRecord(iteration=0, index=i, response_text="", score=s) for i, s in enumerate(scores)]


def test_select_best():
    assert select_best(scored(1.0, 3.0, 2.0)) == 1
    assert select_best(scored(5.0, 5.0)) == 0
    assert select_best(scored(None, 2.0)) == 1
    with pytest.raises(AllCandidatesFailed):
        select_best(scored(None, None))


def test_extract_reward_block():
    assert extract_reward_block(GOOD).startswith("component forward")
    with pytest.raises(MissingBlock):
        extract_reward_block(NO_BLOCK)


def test_task_prompt():
    with pytest.raises(ValidationError):
        TaskPrompt(l_task="  ")
    spec = builtin_environment_spec("sprint_cart")
    with_safety = shipped_task_prompt(spec).render()
    without = shipped_task_prompt(spec, safety_instruction=False).render()
    assert prompts.SAFETY_INSTRUCTIONS["sprint_cart"] in with_safety
    assert prompts.SAFETY_INSTRUCTIONS["sprint_cart"] not in without
    for name in spec.feature_catalog:
        assert name in with_safety


def test_search_with_a_broken_candidate(tmp_path):
    source, (program, policy, history) = search([NO_BLOCK, GOOD, UNKNOWN_FEATURE, ALSO_GOOD], run_dir=tmp_path)
    assert history.requests == 4
    assert len(history.candidates) == 4
    first = history.by_iteration(0)
    assert first[0].parse_error and first[0].score is None
    assert first[1].score is not None
    assert "vy" in history.by_iteration(1)[0].parse_error
    assert history.best_scores == sorted(history.best_scores)
    best = next(c for c in history.candidates
                if (c.iteration, c.index) == (history.best_iteration, history.best_index))
    assert best.program == program
    assert policy is best.policy
    assert best.score == history.best_scores[-1]

    saved = json.loads((tmp_path / "best.json").read_text())
    assert saved["iteration"] == history.best_iteration
    assert (tmp_path / saved["reward"]).exists()
    assert (tmp_path / "iter_0" / "cand_0" / "response.txt").read_text() == NO_BLOCK
    assert not (tmp_path / "iter_0" / "cand_0" / "reward.rwd").exists()


def test_safety_instruction_reaches_the_first_request():
    source, _ = search([GOOD], iterations=1, samples=1)
    first = source.requests[0]["messages"]
    assert first[0]["role"] == "system"
    assert prompts.SAFETY_INSTRUCTIONS["sprint_cart"] in first[1]["content"]


def test_second_iteration_sees_reflection_and_failures():
    source, _ = search([NO_BLOCK, GOOD, GOOD, GOOD])
    later = source.requests[2]["messages"]
    assert [m["role"] for m in later] == ["system", "user", "assistant", "user"]
    assert "component forward" in later[2]["content"]
    feedback = later[3]["content"]
    assert "task score:" in feedback
    assert "forward: mean=" in feedback
    assert "candidate 0:" in feedback


def test_no_parseable_candidate():
    with pytest.raises(NoValidCandidate):
        search([NO_BLOCK, UNKNOWN_FEATURE], iterations=1)


def test_exhausted_playbook():
    with pytest.raises(PlaybookExhausted):
        search([GOOD])


def test_reflection_requires_a_score():
    with pytest.raises(MissingScore):
        build_reflection(CandidateRecord(iteration=0, index=0, response_text=GOOD))


def test_search_arguments():
    with pytest.raises(ValidationError):
        search([GOOD], iterations=0)
