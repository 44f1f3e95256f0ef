"""
Compact PPO with generalized advantage estimation.

Separate actor and critic MLPs (tanh hidden layers) with a state-independent
Gaussian log-std. Everything runs in float64 on CPU; every random draw
(initial weights, exploration noise, minibatch order, per-episode physics)
comes from numpy generators split off the training seed, so a run is a pure
function of (specs, config, seed).

Each parallel environment resamples its physics from the DR config at every
episode reset. Rewards are computed from the collected feature columns in
one vectorized pass after each rollout.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator
from torch import nn
from torch.distributions import Normal

from drlab.core.environments import EnvironmentSpec, make_environment
from drlab.core.fitness import fitness_per_step
from drlab.core.physics import DomainRandomizationConfig, check_intervals, sample_assignment
from drlab.core.reward_lang import ComponentTrace, RewardProgram, component_stats, evaluate_columns
from drlab.core.seeding import derive_rng, derive_seed
from drlab.errors import (
    ArtifactError,
    DivergedTraining,
    LengthMismatch,
    NonFiniteGradient,
    UnknownFeature,
)

logger = logging.getLogger(__name__)

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0
CHECKPOINT_FORMAT = 1


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    total_env_steps: int = Field(default=200_000, ge=0)
    num_parallel_envs: int = Field(default=16, ge=1)
    rollout_length: int = Field(default=256, ge=1)
    epochs_per_update: int = Field(default=4, ge=1)
    minibatch_size: int = Field(default=1024, ge=1)
    gamma: float = Field(default=0.99, gt=0, le=1)
    gae_lambda: float = Field(default=0.95, gt=0, le=1)
    clip_ratio: float = Field(default=0.2, gt=0, lt=1)
    learning_rate: float = Field(default=3e-4, gt=0)
    entropy_coef: float = Field(default=0.0, ge=0)
    value_coef: float = Field(default=0.5, ge=0)
    max_grad_norm: float = Field(default=0.5, gt=0)
    seed: int = 0
    hidden_sizes: Tuple[int, ...] = (64, 64)

    @field_validator("hidden_sizes")
    @classmethod
    def _positive_layers(cls, sizes):
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError("hidden_sizes must be a non-empty list of positive widths")
        return tuple(sizes)


# --- networks ------------------------------------------------------------

def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q


def _mlp(sizes: Sequence[int], out_gain: float, rng: np.random.Generator) -> nn.Sequential:
    layers: List[nn.Module] = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        linear = nn.Linear(n_in, n_out).double()
        gain = out_gain if i == len(sizes) - 2 else math.sqrt(2.0)
        with torch.no_grad():
            linear.weight.copy_(torch.from_numpy(_orthogonal(rng, n_out, n_in, gain)))
            linear.bias.zero_()
        layers.append(linear)
        if i < len(sizes) - 2:
            layers.append(nn.Tanh())
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    def __init__(self, obs_dim: int, action_dim: int, hidden_sizes: Sequence[int], rng: np.random.Generator):
        super().__init__()
        self.actor = _mlp([obs_dim, *hidden_sizes, action_dim], 0.01, rng)
        self.critic = _mlp([obs_dim, *hidden_sizes, 1], 1.0, rng)
        self.log_std = nn.Parameter(torch.zeros(action_dim, dtype=torch.float64))

    def distribution(self, obs: torch.Tensor) -> Normal:
        log_std = torch.clamp(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        return Normal(self.actor(obs), torch.exp(log_std).expand(obs.shape[0], -1))

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self.critic(obs).squeeze(-1)


class RunningMeanStd:
    """Parallel-merge running moments of observations."""

    def __init__(self, shape: int):
        self.mean = np.zeros(shape)
        self.var = np.ones(shape)
        self.count = 1e-4

    def update(self, batch: np.ndarray) -> None:
        batch_mean = batch.mean(axis=0)
        batch_var = batch.var(axis=0)
        n = batch.shape[0]
        delta = batch_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * n / total
        m2 = self.var * self.count + batch_var * n + delta ** 2 * self.count * n / total
        self.var = m2 / total
        self.count = total


class PolicyCheckpoint:
    """Trained (or freshly initialized) actor-critic plus frozen observation statistics."""

    def __init__(self, obs_dim: int, action_dim: int, hidden_sizes: Sequence[int] = (64, 64),
                 rng: Optional[np.random.Generator] = None):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.hidden_sizes = tuple(hidden_sizes)
        self.model = ActorCritic(obs_dim, action_dim, self.hidden_sizes, rng or np.random.default_rng(0))
        self.obs_rms = RunningMeanStd(obs_dim)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        return np.clip((obs - self.obs_rms.mean) / np.sqrt(self.obs_rms.var + 1e-8), -10.0, 10.0)

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(self.normalize(np.asarray(obs, dtype=np.float64)).reshape(1, -1))
        with torch.no_grad():
            return self.model.actor(x)[0].numpy().copy()

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([p.detach().numpy().ravel() for p in self.model.state_dict().values()])

    def save(self, path: Path) -> Tuple[Path, Path]:
        """Write ``<path>`` (JSON header) and ``<path stem>.bin`` (little-endian float64 blob)."""
        path = Path(path)
        blob_path = path.with_suffix(".bin")
        state = self.model.state_dict()
        header = {
            "format_version": CHECKPOINT_FORMAT,
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "layers": [{"name": name, "shape": list(t.shape)} for name, t in state.items()],
            "obs_mean": self.obs_rms.mean.tolist(),
            "obs_var": self.obs_rms.var.tolist(),
            "obs_count": self.obs_rms.count,
            "blob": blob_path.name,
        }
        blob = np.concatenate([t.detach().numpy().ravel() for t in state.values()]).astype("<f8")
        blob_path.write_bytes(blob.tobytes())
        with open(path, "w") as f:
            json.dump(header, f, indent=2)
        return path, blob_path

    @classmethod
    def load(cls, path: Path) -> "PolicyCheckpoint":
        path = Path(path)
        with open(path) as f:
            header = json.load(f)
        if header.get("format_version") != CHECKPOINT_FORMAT:
            raise ArtifactError(f"{path}: unsupported checkpoint format {header.get('format_version')}")
        policy = cls(header["obs_dim"], header["action_dim"], header["hidden_sizes"])
        blob = np.frombuffer((path.parent / header["blob"]).read_bytes(), dtype="<f8")
        expected = sum(int(np.prod(layer["shape"])) for layer in header["layers"])
        if blob.size != expected:
            raise ArtifactError(f"{path}: blob holds {blob.size} values, header expects {expected}")
        state, offset = {}, 0
        for layer in header["layers"]:
            n = int(np.prod(layer["shape"]))
            state[layer["name"]] = torch.from_numpy(blob[offset:offset + n].reshape(layer["shape"]).copy())
            offset += n
        policy.model.load_state_dict(state)
        policy.obs_rms.mean = np.asarray(header["obs_mean"], dtype=np.float64)
        policy.obs_rms.var = np.asarray(header["obs_var"], dtype=np.float64)
        policy.obs_rms.count = float(header["obs_count"])
        return policy


# --- advantage estimation ------------------------------------------------

def gae(rewards, values, terminal_flags=None, gamma: float = 0.99, lam: float = 0.95,
        truncated_flags=None, final_values=None) -> np.ndarray:
    """GAE along axis 0; ``values`` carries one extra bootstrap row.

    ``terminal_flags`` marks every episode end. Ends also set in ``truncated_flags``
    were cut by the horizon and bootstrap from ``final_values``, the value of the
    observation reached before the reset.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.zeros_like(rewards) if terminal_flags is None else np.asarray(terminal_flags, dtype=np.float64)
    truncs = np.zeros_like(rewards) if truncated_flags is None else np.asarray(truncated_flags, dtype=np.float64)
    finals = np.zeros_like(rewards) if final_values is None else np.asarray(final_values, dtype=np.float64)
    if values.shape[0] != rewards.shape[0] + 1:
        raise LengthMismatch(f"need len(values) == len(rewards) + 1, got {values.shape[0]} and {rewards.shape[0]}")
    if dones.shape != rewards.shape:
        raise LengthMismatch(f"terminal flags shape {dones.shape} != rewards shape {rewards.shape}")
    if truncs.shape != rewards.shape or finals.shape != rewards.shape:
        raise LengthMismatch(f"truncation arrays must match rewards shape {rewards.shape}")
    truncs = truncs * dones
    advantages = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0]) if rewards.shape[0] else 0.0
    for t in reversed(range(rewards.shape[0])):
        nonterminal = 1.0 - dones[t]
        next_value = values[t + 1] * nonterminal + finals[t] * truncs[t]
        delta = rewards[t] + gamma * next_value - values[t]
        last = delta + gamma * lam * nonterminal * last
        advantages[t] = last
    return advantages


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    if adv.shape[0] <= 1:
        return adv
    centered = adv - adv.mean()
    std = adv.std()
    return centered if std < 1e-12 else centered / std


# --- update --------------------------------------------------------------

@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]

    def subset(self, idx: np.ndarray) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.log_probs[idx], self.advantages[idx], self.returns[idx])


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float


def clipped_surrogate(ratio: torch.Tensor, advantages: torch.Tensor, clip_ratio: float) -> torch.Tensor:
    return torch.min(ratio * advantages, torch.clamp(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * advantages)


def ppo_loss(policy: PolicyCheckpoint, batch: Batch, cfg: TrainConfig):
    """(total, policy_loss, value_loss, entropy) as tensors; advantages used as given."""
    obs = torch.from_numpy(batch.obs)
    dist = policy.model.distribution(obs)
    log_prob = dist.log_prob(torch.from_numpy(batch.actions)).sum(-1)
    ratio = torch.exp(log_prob - torch.from_numpy(batch.log_probs))
    policy_loss = -clipped_surrogate(ratio, torch.from_numpy(batch.advantages), cfg.clip_ratio).mean()
    value_loss = 0.5 * ((policy.model.value(obs) - torch.from_numpy(batch.returns)) ** 2).mean()
    entropy = dist.entropy().sum(-1).mean()
    total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    return total, policy_loss, value_loss, entropy


def ppo_update(policy: PolicyCheckpoint, batch: Batch, cfg: TrainConfig,
               optimizer: Optional[torch.optim.Optimizer] = None) -> UpdateStats:
    """One clipped-surrogate gradient step on ``batch``, in place."""
    if optimizer is None:
        optimizer = torch.optim.Adam(policy.model.parameters(), lr=cfg.learning_rate, eps=1e-5)
    batch = Batch(batch.obs, batch.actions, batch.log_probs, normalize_advantages(batch.advantages), batch.returns)
    total, policy_loss, value_loss, entropy = ppo_loss(policy, batch, cfg)
    if not torch.isfinite(total):
        raise DivergedTraining(f"non-finite loss (policy {policy_loss.item()}, value {value_loss.item()})")
    optimizer.zero_grad()
    total.backward()
    for name, p in policy.model.named_parameters():
        if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    nn.utils.clip_grad_norm_(policy.model.parameters(), cfg.max_grad_norm)
    optimizer.step()
    with torch.no_grad():
        policy.model.log_std.clamp_(LOG_STD_MIN, LOG_STD_MAX)
    return UpdateStats(policy_loss.item(), value_loss.item(), entropy.item())


# --- training log --------------------------------------------------------

@dataclass
class TrainingLogRow:
    env_steps: int
    mean_episode_reward: float
    mean_fitness: float
    episodes_completed: int
    policy_loss: float
    value_loss: float
    entropy: float
    components: ComponentTrace

    def flat(self) -> Dict[str, float]:
        row = {
            "env_steps": self.env_steps,
            "mean_episode_reward": self.mean_episode_reward,
            "mean_fitness": self.mean_fitness,
            "episodes_completed": self.episodes_completed,
            "policy_loss": self.policy_loss,
            "value_loss": self.value_loss,
            "entropy": self.entropy,
            "reward_step_mean": self.components.total_mean,
        }
        for name, stats in self.components.components.items():
            row[f"{name}_mean"] = stats.mean
            row[f"{name}_std"] = stats.std
            row[f"{name}_min"] = stats.min
            row[f"{name}_max"] = stats.max
        return row


@dataclass
class TrainingLog:
    rows: List[TrainingLogRow] = field(default_factory=list)

    def fitness_trajectory(self) -> List[float]:
        return [r.mean_fitness for r in self.rows]

    def to_csv(self, path: Path) -> None:
        flat = [r.flat() for r in self.rows]
        columns = list(flat[0]) if flat else ["env_steps", "mean_episode_reward", "mean_fitness"]
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=columns)
            writer.writeheader()
            for row in flat:
                writer.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})


# --- training loop -------------------------------------------------------

class _RolloutCollector:
    """Steps ``num_parallel_envs`` single-owner environments in lockstep."""

    def __init__(self, spec: EnvironmentSpec, dr: Optional[DomainRandomizationConfig],
                 reward: RewardProgram, policy: PolicyCheckpoint, cfg: TrainConfig, seed: int):
        self.spec, self.dr, self.reward, self.policy, self.cfg, self.seed = spec, dr, reward, policy, cfg, seed
        self.defaults = spec.defaults()
        self.action_rng = derive_rng(seed, "actions")
        n = cfg.num_parallel_envs
        self.envs = [None] * n
        self.obs = np.zeros((n, spec.obs_dim))
        self.episodes_started = [0] * n
        self.ep_reward = np.zeros(n)
        self.ep_fitness = np.zeros(n)
        for i in range(n):
            self._reset(i)

    def _reset(self, i: int) -> None:
        k = self.episodes_started[i]
        self.episodes_started[i] += 1
        assignment = sample_assignment(
            self.dr, self.defaults, derive_rng(self.seed, "train_dr", i, k), self.spec.param_specs
        )
        self.envs[i] = make_environment(self.spec, assignment, derive_seed(self.seed, "train_env", i, k))
        self.obs[i] = self.envs[i].reset()

    def collect(self):
        T, n = self.cfg.rollout_length, self.cfg.num_parallel_envs
        spec, model = self.spec, self.policy.model
        obs_raw = np.zeros((T, n, spec.obs_dim))
        obs_norm = np.zeros((T, n, spec.obs_dim))
        actions = np.zeros((T, n, spec.action_dim))
        log_probs = np.zeros((T, n))
        values = np.zeros((T + 1, n))
        dones = np.zeros((T, n))
        truncs = np.zeros((T, n))
        final_obs = np.zeros((T, n, spec.obs_dim))
        columns = {name: np.zeros((T, n)) for name in spec.feature_catalog}

        for t in range(T):
            obs_raw[t] = self.obs
            obs_norm[t] = self.policy.normalize(self.obs)
            x = torch.from_numpy(obs_norm[t])
            with torch.no_grad():
                dist = model.distribution(x)
                mean = dist.loc.numpy()
                std = dist.scale.numpy()
                values[t] = model.value(x).numpy()
                action = mean + std * self.action_rng.standard_normal(mean.shape)
                log_probs[t] = dist.log_prob(torch.from_numpy(action)).sum(-1).numpy()
            actions[t] = action
            for i, env in enumerate(self.envs):
                result = env.step(action[i])
                for name in columns:
                    columns[name][t, i] = result.features[name]
                if result.terminated or result.truncated:
                    dones[t, i] = 1.0
                    if result.truncated:
                        truncs[t, i] = 1.0
                        final_obs[t, i] = result.observation
                    self._reset(i)
                else:
                    self.obs[i] = result.observation
        with torch.no_grad():
            values[T] = model.value(torch.from_numpy(self.policy.normalize(self.obs))).numpy()
            final_values = model.value(torch.from_numpy(self.policy.normalize(final_obs))).numpy() * truncs

        flat_columns = {name: col.reshape(-1) for name, col in columns.items()}
        total, _ = evaluate_columns(self.reward, flat_columns)
        rewards = total.reshape(T, n)
        step_fitness = fitness_per_step(spec.env_id, flat_columns).reshape(T, n)
        stats = component_stats(self.reward, flat_columns)

        finished_rewards, finished_fitness = [], []
        for t in range(T):
            self.ep_reward += rewards[t]
            self.ep_fitness += step_fitness[t]
            for i in np.flatnonzero(dones[t]):
                finished_rewards.append(self.ep_reward[i])
                finished_fitness.append(self.ep_fitness[i])
                self.ep_reward[i] = 0.0
                self.ep_fitness[i] = 0.0

        self.policy.obs_rms.update(obs_raw.reshape(-1, spec.obs_dim))

        advantages = gae(rewards, values, dones, self.cfg.gamma, self.cfg.gae_lambda,
                         truncated_flags=truncs, final_values=final_values)
        returns = advantages + values[:-1]
        batch = Batch(
            obs=obs_norm.reshape(-1, spec.obs_dim),
            actions=actions.reshape(-1, spec.action_dim),
            log_probs=log_probs.reshape(-1),
            advantages=advantages.reshape(-1),
            returns=returns.reshape(-1),
        )
        if finished_fitness:
            episode_summary = (float(np.mean(finished_rewards)), float(np.mean(finished_fitness)), len(finished_fitness))
        else:
            episode_summary = (float(np.mean(self.ep_reward)), float(np.mean(self.ep_fitness)), 0)
        return batch, stats, episode_summary


def _minibatches(rng: np.random.Generator, n: int, size: int) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def train_policy(
    env_spec: EnvironmentSpec,
    dr: Optional[DomainRandomizationConfig],
    reward: RewardProgram,
    cfg: TrainConfig,
    seed: Optional[int] = None,
) -> Tuple[PolicyCheckpoint, TrainingLog]:
    """Train from scratch; raises DivergedTraining carrying the rows logged so far."""
    seed = cfg.seed if seed is None else int(seed)
    unknown = sorted(reward.feature_names() - set(env_spec.feature_catalog))
    if unknown:
        raise UnknownFeature(unknown[0])
    if dr is not None:
        check_intervals(dr, env_spec.param_specs)

    policy = PolicyCheckpoint(env_spec.obs_dim, env_spec.action_dim, cfg.hidden_sizes, derive_rng(seed, "init"))
    log = TrainingLog()
    if cfg.total_env_steps == 0:
        return policy, log

    steps_per_update = cfg.num_parallel_envs * cfg.rollout_length
    num_updates = math.ceil(cfg.total_env_steps / steps_per_update)
    optimizer = torch.optim.Adam(policy.model.parameters(), lr=cfg.learning_rate, eps=1e-5)
    collector = _RolloutCollector(env_spec, dr, reward, policy, cfg, seed)
    shuffle_rng = derive_rng(seed, "minibatch")
    provenance = dr.provenance if dr is not None else "no_dr"
    logger.info(f"Training {env_spec.env_id} ({provenance}) for {num_updates} updates, seed {seed}")

    for update in range(num_updates):
        batch, stats, (mean_reward, mean_fitness, finished) = collector.collect()
        losses: List[UpdateStats] = []
        try:
            for _ in range(cfg.epochs_per_update):
                for idx in _minibatches(shuffle_rng, len(batch), cfg.minibatch_size):
                    losses.append(ppo_update(policy, batch.subset(idx), cfg, optimizer))
        except (DivergedTraining, NonFiniteGradient) as e:
            logger.warning(f"Training diverged at update {update}: {e}")
            raise DivergedTraining(f"diverged at update {update}: {e}", log=log) from e

        row = TrainingLogRow(
            env_steps=(update + 1) * steps_per_update,
            mean_episode_reward=mean_reward,
            mean_fitness=mean_fitness,
            episodes_completed=finished,
            policy_loss=float(np.mean([s.policy_loss for s in losses])),
            value_loss=float(np.mean([s.value_loss for s in losses])),
            entropy=float(np.mean([s.entropy for s in losses])),
            components=stats,
        )
        log.rows.append(row)
        logger.info(
            f"update {update + 1}/{num_updates}: steps={row.env_steps} "
            f"reward={row.mean_episode_reward:.3f} fitness={row.mean_fitness:.3f} "
            f"vloss={row.value_loss:.4f}"
        )
    return policy, log
