#!/usr/bin/env python3
"""
Tests for PPO: advantage estimation, the clipped loss, checkpoints and
seeded training runs
"""
import json
import os
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from drlab.core.builtin_rewards import builtin_rewards
from drlab.core.environments import builtin_environment_spec
from drlab.core.fitness import evaluate_policy
from drlab.core.physics import DomainRandomizationConfig
from drlab.core.ppo import (
    Batch,
    PolicyCheckpoint,
    TrainConfig,
    clipped_surrogate,
    gae,
    normalize_advantages,
    ppo_loss,
    ppo_update,
    train_policy,
    _RolloutCollector,
)
from drlab.core.reward_lang import parse_reward
from drlab.core.seeding import derive_rng
from drlab.errors import ArtifactError, DivergedTraining, LengthMismatch, UnknownFeature

TINY = TrainConfig(
    total_env_steps=256, num_parallel_envs=2, rollout_length=64, epochs_per_update=2, minibatch_size=64
)


def cart_setup():
    spec = builtin_environment_spec("sprint_cart")
    reward = builtin_rewards("sprint_cart")["eureka_forward"]
    dr = DomainRandomizationConfig(intervals={"friction": (0.3, 3.0)}, provenance="human_designed")
    return spec, reward, dr


def test_gae_two_steps():
    adv = gae([1.0, 1.0], [0.0, 0.0, 0.0], gamma=0.99, lam=0.95)
    assert adv == pytest.approx([1.9405, 1.0], abs=1e-12)


def test_gae_terminal_cuts_bootstrap():
    adv = gae([1.0, 1.0], [0.0, 5.0, 5.0], terminal_flags=[1.0, 0.0], gamma=0.99, lam=0.95)
    assert adv[0] == pytest.approx(1.0, abs=1e-12)
    assert adv[1] == pytest.approx(1.0 + 0.99 * 5.0 - 5.0, abs=1e-12)


def test_gae_horizon_cut_bootstraps_from_final_value():
    # step 0 ends on the horizon; the next row already belongs to a fresh episode
    adv = gae([1.0, 1.0], [0.0, 5.0, 5.0], terminal_flags=[1.0, 0.0], gamma=0.99, lam=0.95,
              truncated_flags=[1.0, 0.0], final_values=[3.0, 0.0])
    assert adv[0] == pytest.approx(1.0 + 0.99 * 3.0, abs=1e-12)
    assert adv[1] == pytest.approx(1.0 + 0.99 * 5.0 - 5.0, abs=1e-12)


def test_gae_truncation_without_episode_end_is_ignored():
    plain = gae([1.0, 1.0], [0.0, 0.0, 0.0], gamma=0.99, lam=0.95)
    flagged = gae([1.0, 1.0], [0.0, 0.0, 0.0], gamma=0.99, lam=0.95,
                  truncated_flags=[1.0, 0.0], final_values=[7.0, 0.0])
    assert flagged == pytest.approx(plain, abs=1e-12)


def test_gae_with_unit_lambda_telescopes_to_discounted_return():
    rng = np.random.default_rng(3)
    rewards = rng.normal(size=12)
    values = rng.normal(size=13)
    gamma = 0.9
    adv = gae(rewards, values, gamma=gamma, lam=1.0)
    for t in range(12):
        discounted = sum(gamma ** (k - t) * rewards[k] for k in range(t, 12)) + gamma ** (12 - t) * values[12]
        assert adv[t] + values[t] == pytest.approx(discounted, abs=1e-10)


def test_gae_with_zero_lambda_is_one_step_td():
    rewards = np.array([0.5, -1.0, 2.0])
    values = np.array([1.0, 2.0, 3.0, 4.0])
    adv = gae(rewards, values, gamma=0.5, lam=0.0)
    assert adv == pytest.approx(rewards + 0.5 * values[1:] - values[:-1], abs=1e-12)


def test_gae_is_vectorized_over_environments():
    rng = np.random.default_rng(0)
    rewards = rng.normal(size=(8, 3))
    values = rng.normal(size=(9, 3))
    dones = (rng.random((8, 3)) < 0.2).astype(float)
    joint = gae(rewards, values, dones)
    for i in range(3):
        assert joint[:, i] == pytest.approx(gae(rewards[:, i], values[:, i], dones[:, i]), abs=1e-12)


def test_gae_length_mismatch():
    with pytest.raises(LengthMismatch):
        gae([1.0, 1.0], [0.0, 0.0])
    with pytest.raises(LengthMismatch):
        gae([1.0, 1.0], [0.0, 0.0, 0.0], terminal_flags=[0.0])


def test_normalize_advantages():
    adv = normalize_advantages(np.array([1.0, 2.0, 3.0, 6.0]))
    assert adv.mean() == pytest.approx(0.0, abs=1e-12)
    assert adv.std() == pytest.approx(1.0, abs=1e-12)
    assert normalize_advantages(np.array([4.0])) == pytest.approx([4.0])
    assert normalize_advantages(np.full(5, 2.0)) == pytest.approx(np.zeros(5))


def test_clipped_surrogate():
    def value(ratio, adv):
        return clipped_surrogate(torch.tensor([ratio]), torch.tensor([adv]), 0.2).item()

    assert value(1.5, 1.0) == pytest.approx(1.2)
    assert value(1.5, -1.0) == pytest.approx(-1.5)
    assert value(0.5, 1.0) == pytest.approx(0.5)
    assert value(0.5, -1.0) == pytest.approx(-0.8)
    assert value(1.0, 2.0) == pytest.approx(2.0)


def random_batch(policy, n=32, seed=0):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, policy.obs_dim))
    actions = rng.normal(size=(n, policy.action_dim))
    with torch.no_grad():
        log_probs = policy.model.distribution(torch.from_numpy(obs)).log_prob(torch.from_numpy(actions)).sum(-1)
    return Batch(obs, actions, log_probs.numpy(), rng.normal(size=n), rng.normal(size=n))


def test_loss_gradient_matches_finite_differences():
    policy = PolicyCheckpoint(3, 2, (8,), rng=np.random.default_rng(1))
    batch = random_batch(policy)
    cfg = TrainConfig(entropy_coef=0.01)
    total, _, _, _ = ppo_loss(policy, batch, cfg)
    policy.model.zero_grad()
    total.backward()

    h = 1e-6
    params = dict(policy.model.named_parameters())
    for name in ("actor.0.weight", "critic.2.weight", "log_std"):
        p = params[name]
        flat = p.data.view(-1)
        for k in range(min(3, flat.numel())):
            original = flat[k].item()
            with torch.no_grad():
                flat[k] = original + h
                up = ppo_loss(policy, batch, cfg)[0].item()
                flat[k] = original - h
                down = ppo_loss(policy, batch, cfg)[0].item()
                flat[k] = original
            numeric = (up - down) / (2 * h)
            assert p.grad.view(-1)[k].item() == pytest.approx(numeric, rel=1e-5, abs=1e-8), name


def test_update_rejects_non_finite_advantages():
    policy = PolicyCheckpoint(3, 1, (4,))
    batch = random_batch(policy, n=8)
    batch.advantages[0] = np.nan
    with pytest.raises(DivergedTraining):
        ppo_update(policy, batch, TrainConfig())


def test_update_changes_parameters():
    policy = PolicyCheckpoint(3, 1, (4,))
    before = policy.parameter_vector()
    stats = ppo_update(policy, random_batch(policy, n=16), TrainConfig())
    assert not np.array_equal(before, policy.parameter_vector())
    assert np.isfinite(stats.policy_loss) and np.isfinite(stats.value_loss)


def test_zero_step_training_returns_initial_policy():
    spec, reward, dr = cart_setup()
    cfg = TrainConfig(total_env_steps=0)
    policy, log = train_policy(spec, dr, reward, cfg, seed=4)
    fresh = PolicyCheckpoint(spec.obs_dim, spec.action_dim, cfg.hidden_sizes, derive_rng(4, "init"))
    assert log.rows == []
    assert np.array_equal(policy.parameter_vector(), fresh.parameter_vector())


def test_training_is_a_function_of_the_seed():
    spec, reward, dr = cart_setup()
    a, log_a = train_policy(spec, dr, reward, TINY, seed=0)
    b, log_b = train_policy(spec, dr, reward, TINY, seed=0)
    c, _ = train_policy(spec, dr, reward, TINY, seed=1)
    assert np.array_equal(a.parameter_vector(), b.parameter_vector())
    assert [r.flat() for r in log_a.rows] == [r.flat() for r in log_b.rows]
    assert not np.array_equal(a.parameter_vector(), c.parameter_vector())


def test_horizon_cut_in_rollout_bootstraps_instead_of_ending_at_zero():
    # spin_disk never terminates, so the last row of a horizon-long rollout is a horizon cut
    spec = builtin_environment_spec("spin_disk").model_copy(update={"horizon": 4})
    zero = parse_reward("component zero = 0.0", spec.feature_catalog)
    cfg = TrainConfig(num_parallel_envs=1, rollout_length=4, hidden_sizes=(8,))
    policy = PolicyCheckpoint(spec.obs_dim, spec.action_dim, cfg.hidden_sizes, derive_rng(0, "init"))
    batch, _, (_, _, finished) = _RolloutCollector(spec, None, zero, policy, cfg, seed=0).collect()
    assert finished == 1
    assert abs(batch.returns[-1]) > 1e-9


def test_training_log_rows():
    spec, reward, dr = cart_setup()
    _, log = train_policy(spec, dr, reward, TINY, seed=0)
    assert [r.env_steps for r in log.rows] == [128, 256]
    flat = log.rows[0].flat()
    for name in reward.component_names:
        assert f"{name}_mean" in flat and f"{name}_max" in flat
    assert len(log.fitness_trajectory()) == 2


def test_training_log_csv(tmp_path):
    spec, reward, dr = cart_setup()
    _, log = train_policy(spec, dr, reward, TINY, seed=0)
    log.to_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0].startswith("env_steps,mean_episode_reward,mean_fitness")
    assert len(lines) == 3


def test_reward_must_fit_the_environment():
    spec, _, dr = cart_setup()
    spin_reward = builtin_rewards("spin_disk")["spin_dreureka"]
    with pytest.raises(UnknownFeature):
        train_policy(spec, dr, spin_reward, TINY)


def test_checkpoint_round_trip(tmp_path):
    spec, reward, dr = cart_setup()
    policy, _ = train_policy(spec, dr, reward, TINY, seed=2)
    json_path, bin_path = policy.save(tmp_path / "policy.json")
    assert bin_path.name == "policy.bin"
    assert bin_path.stat().st_size == policy.parameter_vector().size * 8
    loaded = PolicyCheckpoint.load(json_path)
    assert np.array_equal(loaded.parameter_vector(), policy.parameter_vector())
    obs = np.random.default_rng(0).normal(size=spec.obs_dim)
    assert np.array_equal(loaded.mean_action(obs), policy.mean_action(obs))


def test_checkpoint_rejects_damaged_files(tmp_path):
    policy = PolicyCheckpoint(4, 1, (8,))
    json_path, bin_path = policy.save(tmp_path / "p.json")
    bin_path.write_bytes(bin_path.read_bytes()[:-8])
    with pytest.raises(ArtifactError):
        PolicyCheckpoint.load(json_path)

    json_path, _ = policy.save(tmp_path / "q.json")
    header = json.loads(json_path.read_text())
    header["format_version"] = 99
    json_path.write_text(json.dumps(header))
    with pytest.raises(ArtifactError):
        PolicyCheckpoint.load(json_path)


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("DRLAB_RUN_SLOW"), reason="set DRLAB_RUN_SLOW=1")
def test_training_improves_fitness():
    spec, reward, dr = cart_setup()
    cfg = TrainConfig(total_env_steps=100_000)
    untrained, _ = train_policy(spec, dr, reward, cfg.model_copy(update={"total_env_steps": 0}), seed=0)
    trained, _ = train_policy(spec, dr, reward, cfg, seed=0)
    before = evaluate_policy(untrained, spec, spec.defaults(), episodes=4, seed=0).mean
    after = evaluate_policy(trained, spec, spec.defaults(), episodes=4, seed=0).mean
    assert after > before + 20.0
