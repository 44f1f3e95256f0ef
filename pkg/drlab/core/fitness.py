"""
Task success criteria and policy evaluation.

Fitness is the ground-truth score of an episode, summed over its steps:

    sprint_cart    sum_t exp(-(vx_t - 2.0)^2 / 0.25)
    spin_disk      sum_t clip(wz_t, -0.25, 0.25)
    globe_balance  episode length (survival)

It is distinct from the training reward, which is whatever program the
reward search produced.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Union

import numpy as np

from drlab.core.environments import EnvironmentSpec, TargetWorldSpec, make_environment, make_target_world
from drlab.core.physics import (
    DomainRandomizationConfig,
    PhysicsAssignment,
    check_intervals,
    sample_assignment,
)
from drlab.core.rollout import Policy, RolloutTrace, run_episode
from drlab.core.seeding import derive_rng, derive_seed
from drlab.errors import UnknownEnv

logger = logging.getLogger(__name__)

TARGET_VELOCITY = 2.0
VELOCITY_WIDTH = 0.25
SPIN_TARGET = 0.25
TRACK_LENGTH = 5.0

AssignmentSource = Union[PhysicsAssignment, DomainRandomizationConfig, TargetWorldSpec]


def fitness_per_step(env_id: str, features: Mapping[str, np.ndarray]) -> np.ndarray:
    if env_id == "sprint_cart":
        vx = np.asarray(features["vx"], dtype=np.float64)
        return np.exp(-((vx - TARGET_VELOCITY) ** 2) / VELOCITY_WIDTH)
    if env_id == "spin_disk":
        return np.clip(np.asarray(features["wz"], dtype=np.float64), -SPIN_TARGET, SPIN_TARGET)
    if env_id == "globe_balance":
        return np.ones(len(features["tilt"]))
    raise UnknownEnv(f"no success criterion for '{env_id}'")


def fitness(trace: RolloutTrace, env_id: str) -> float:
    return float(np.sum(fitness_per_step(env_id, trace.features)))


@dataclass
class FitnessReport:
    per_episode: List[float]
    mean: float
    std: float
    episode_lengths: List[int] = field(default_factory=list)
    mean_velocity: Optional[float] = None
    distance: Optional[float] = None
    mean_abs_action: float = 0.0
    mean_torque_sq: float = 0.0

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_traces(cls, traces: List[RolloutTrace], env_id: str, dt: float) -> "FitnessReport":
        scores = np.array([fitness(t, env_id) for t in traces], dtype=np.float64)
        report = cls(
            per_episode=[float(s) for s in scores],
            mean=float(np.mean(scores)),
            std=float(np.std(scores)),
            episode_lengths=[t.episode_length for t in traces],
            mean_abs_action=float(np.mean([np.mean(np.abs(t.actions)) for t in traces])),
            mean_torque_sq=float(np.mean([np.mean(t.feature("torque_sq_sum")) for t in traces])),
        )
        if env_id == "sprint_cart":
            report.mean_velocity = float(np.mean([np.mean(t.feature("vx")) for t in traces]))
            report.distance = float(
                np.mean([min(float(np.sum(t.feature("vx")) * dt), TRACK_LENGTH) for t in traces])
            )
        return report


def _episode_env(spec: EnvironmentSpec, source: AssignmentSource, seed: int, index: int):
    episode_seed = derive_seed(seed, "eval", index)
    if isinstance(source, TargetWorldSpec):
        return make_target_world(spec, source, episode_seed)
    if isinstance(source, DomainRandomizationConfig):
        assignment = sample_assignment(source, spec.defaults(), derive_rng(seed, "eval_dr", index), spec.param_specs)
        return make_environment(spec, assignment, episode_seed)
    return make_environment(spec, source, episode_seed)


def evaluate_policy(
    policy: Policy,
    env_spec: EnvironmentSpec,
    source: AssignmentSource,
    episodes: int,
    seed: int,
    workers: int = 1,
) -> FitnessReport:
    """Evaluation-mode episodes; episode ``i`` always uses the seed derived from ``(seed, i)``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if isinstance(source, DomainRandomizationConfig):
        check_intervals(source, env_spec.param_specs)

    def one(index: int) -> RolloutTrace:
        return run_episode(_episode_env(env_spec, source, seed, index), policy)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(one, range(episodes)))
    else:
        traces = [one(i) for i in range(episodes)]
    report = FitnessReport.from_traces(traces, env_spec.env_id, env_spec.dt)
    logger.debug(f"{env_spec.env_id}: {episodes} episodes, mean fitness {report.mean:.3f}")
    return report
