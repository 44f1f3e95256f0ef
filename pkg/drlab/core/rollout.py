"""
Deterministic episode records.

A trace stores what the policy saw, what it commanded and the feature map
of every step, so rewards and fitness can be recomputed from it offline.
"""
import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol

import numpy as np

from drlab.core.environments import (
    EnvironmentInstance,
    EnvironmentSpec,
    TargetWorldSpec,
    make_environment,
    make_target_world,
)
from drlab.core.physics import PhysicsAssignment
from drlab.errors import DimensionMismatch, MissingFeature


class Policy(Protocol):
    obs_dim: int
    action_dim: int

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        ...


class ConstantPolicy:
    """Ignores observations; used for zero-action and always-max baselines."""

    def __init__(self, obs_dim: int, action_dim: int, value: float = 0.0):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.value = float(value)

    def mean_action(self, obs):
        return np.full(self.action_dim, self.value)


@dataclass
class RolloutTrace:
    env_id: str
    assignment: PhysicsAssignment
    seed: int
    observations: np.ndarray
    actions: np.ndarray
    features: Dict[str, np.ndarray]
    terminated: np.ndarray
    feature_order: List[str] = field(default_factory=list)

    @property
    def episode_length(self) -> int:
        return int(self.actions.shape[0])

    def feature(self, name: str) -> np.ndarray:
        try:
            return self.features[name]
        except KeyError:
            raise MissingFeature(name) from None

    def trace_hash(self) -> str:
        h = hashlib.sha256()
        header = {"env_id": self.env_id, "seed": self.seed, "assignment": self.assignment.values}
        h.update(json.dumps(header, sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.observations, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.actions, dtype=np.float64).tobytes())
        for name in sorted(self.features):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.features[name], dtype=np.float64).tobytes())
        h.update(self.terminated.astype(np.uint8).tobytes())
        return h.hexdigest()

    def to_csv(self, path: Path) -> None:
        obs_dim = self.observations.shape[1] if self.observations.ndim == 2 else 0
        act_dim = self.actions.shape[1] if self.actions.ndim == 2 else 0
        names = self.feature_order or sorted(self.features)
        header = (
            ["step"]
            + [f"obs_{i}" for i in range(obs_dim)]
            + [f"act_{i}" for i in range(act_dim)]
            + names
            + ["terminated"]
        )
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for t in range(self.episode_length):
                writer.writerow(
                    [t]
                    + [repr(float(v)) for v in self.observations[t]]
                    + [repr(float(v)) for v in self.actions[t]]
                    + [repr(float(self.features[n][t])) for n in names]
                    + [int(self.terminated[t])]
                )


def run_episode(env: EnvironmentInstance, policy: Policy) -> RolloutTrace:
    spec = env.spec
    if policy.obs_dim != spec.obs_dim or policy.action_dim != spec.action_dim:
        raise DimensionMismatch(
            f"policy dims ({policy.obs_dim}, {policy.action_dim}) do not match "
            f"{spec.env_id} ({spec.obs_dim}, {spec.action_dim})"
        )
    obs = env.reset()
    observations, actions, terminated = [], [], []
    columns: Dict[str, List[float]] = {name: [] for name in spec.feature_catalog}
    while True:
        action = np.asarray(policy.mean_action(obs), dtype=np.float64).reshape(-1)
        result = env.step(action)
        observations.append(obs)
        actions.append(np.clip(action, -1.0, 1.0))
        for name in columns:
            columns[name].append(result.features[name])
        terminated.append(result.terminated)
        obs = result.observation
        if result.terminated or result.truncated:
            break
    return RolloutTrace(
        env_id=spec.env_id,
        assignment=env.assignment,
        seed=env.seed,
        observations=np.array(observations, dtype=np.float64).reshape(len(actions), spec.obs_dim),
        actions=np.array(actions, dtype=np.float64).reshape(len(actions), spec.action_dim),
        features={name: np.array(values, dtype=np.float64) for name, values in columns.items()},
        terminated=np.array(terminated, dtype=bool),
        feature_order=list(spec.feature_catalog),
    )


def rollout(spec: EnvironmentSpec, assignment: PhysicsAssignment, policy: Policy, seed: int) -> RolloutTrace:
    """One evaluation-mode episode in simulation; a pure function of its inputs."""
    return run_episode(make_environment(spec, assignment, seed), policy)


def rollout_target(spec: EnvironmentSpec, target: TargetWorldSpec, policy: Policy, seed: int) -> RolloutTrace:
    return run_episode(make_target_world(spec, target, seed), policy)


def feature_trace(features: Dict[str, np.ndarray], env_id: str = "synthetic", seed: int = 0) -> RolloutTrace:
    """Trace built from feature columns alone, for scoring recorded or synthetic data."""
    lengths = {len(v) for v in features.values()}
    n = lengths.pop() if lengths else 0
    if lengths:
        raise DimensionMismatch("feature columns have different lengths")
    return RolloutTrace(
        env_id=env_id,
        assignment=PhysicsAssignment(values={}),
        seed=seed,
        observations=np.zeros((n, 0)),
        actions=np.zeros((n, 0)),
        features={k: np.asarray(v, dtype=np.float64) for k, v in features.items()},
        terminated=np.zeros(n, dtype=bool),
        feature_order=sorted(features),
    )
